//! Off-policy value estimators over a log window.
//!
//! With importance weights `w_i = pi(a_i|x_i) / mu(a_i|x_i)` and cap `M`:
//!
//! - IS:   `(1/n) sum w_i r_i`
//! - CIS:  `(1/n) sum min(w_i, M) r_i`
//! - NCIS: `sum min(w_i, M) r_i / sum min(w_i, M)`
//!
//! Confidence intervals come from a seeded percentile bootstrap over record
//! indices, re-running the whole estimator (capping and normalization
//! included) on every resample.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logstore::LogDataset;
use crate::policyspace::{Policy, PolicyError};
use crate::rng;

pub const DEFAULT_CAP: f64 = 100.0;
pub const DEFAULT_RESAMPLES: usize = 200;
pub const DEFAULT_CI_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("empty window")]
    EmptyWindow,
    #[error("degenerate weights")]
    DegenerateWeights,
    #[error("invalid estimator config: {0}")]
    Config(String),
    #[error("policy is {policy_d} x {policy_k} (d x K), window is {window_d} x {window_k}")]
    Shape {
        policy_d: usize,
        policy_k: usize,
        window_d: usize,
        window_k: usize,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "IS")]
    Is,
    #[serde(rename = "CIS")]
    Cis,
    #[serde(rename = "NCIS")]
    Ncis,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Is => "IS",
            Self::Cis => "CIS",
            Self::Ncis => "NCIS",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// Weight cap `M`; unused by IS.
    #[serde(default = "default_cap")]
    pub cap: f64,
    /// Zero disables the confidence interval.
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_cap() -> f64 {
    DEFAULT_CAP
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}

fn default_ci_level() -> f64 {
    DEFAULT_CI_LEVEL
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            cap: DEFAULT_CAP,
            bootstrap_resamples: DEFAULT_RESAMPLES,
            ci_level: DEFAULT_CI_LEVEL,
            seed: 0,
        }
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.cap = cap;
        self
    }

    pub fn with_resamples(mut self, resamples: usize) -> Self {
        self.bootstrap_resamples = resamples;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EstimateError> {
        if !(self.cap.is_finite() && self.cap > 0.0) {
            return Err(EstimateError::Config(format!("cap must be > 0, got {}", self.cap)));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(EstimateError::Config(format!(
                "ci_level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        Ok(())
    }
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self::new(EstimatorKind::Ncis)
    }
}

/// Point estimate with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_hi: Option<f64>,
    /// Effective sample size `(sum w)^2 / sum w^2`, on capped weights for CIS/NCIS.
    pub ess: f64,
    pub n: usize,
    pub max_weight: f64,
    /// Share of records whose raw weight exceeds the cap (0 for IS).
    pub capped_fraction: f64,
}

impl Estimate {
    pub fn ci(&self) -> Option<(f64, f64)> {
        self.ci_lo.zip(self.ci_hi)
    }
}

/// `pi(a_i|x_i) / mu(a_i|x_i)` for every record of `window`.
pub fn importance_weights(policy: &Policy, window: &LogDataset) -> Result<Vec<f64>, EstimateError> {
    if policy.d() != window.d() || policy.k() != window.k() {
        return Err(EstimateError::Shape {
            policy_d: policy.d(),
            policy_k: policy.k(),
            window_d: window.d(),
            window_k: window.k(),
        });
    }
    let mut probs = vec![0.0; policy.k()];
    window
        .records()
        .iter()
        .map(|rec| {
            policy.action_probabilities_into(&rec.context, &mut probs)?;
            Ok(probs[rec.action as usize] / rec.propensity)
        })
        .collect()
}

/// Estimates the value of `policy` on `window`.
pub fn estimate(policy: &Policy, window: &LogDataset, config: &EstimatorConfig) -> Result<Estimate, EstimateError> {
    config.validate()?;
    if window.is_empty() {
        return Err(EstimateError::EmptyWindow);
    }
    let weights = importance_weights(policy, window)?;
    let rewards: Vec<f64> = window.records().iter().map(|r| r.reward).collect();
    estimate_from_weights(&weights, &rewards, config)
}

/// Estimator core over precomputed weights and rewards.
pub fn estimate_from_weights(
    weights: &[f64],
    rewards: &[f64],
    config: &EstimatorConfig,
) -> Result<Estimate, EstimateError> {
    config.validate()?;
    assert_eq!(weights.len(), rewards.len(), "one weight per reward");
    let n = weights.len();
    if n == 0 {
        return Err(EstimateError::EmptyWindow);
    }
    let kind = config.kind;
    let cap = config.cap;
    let effective = |w: f64| match kind {
        EstimatorKind::Is => w,
        EstimatorKind::Cis | EstimatorKind::Ncis => w.min(cap),
    };

    let mut acc = Sums::default();
    let mut sum_sq = 0.0;
    let mut capped = 0usize;
    let mut max_weight = 0.0f64;
    for (&w, &r) in weights.iter().zip(rewards) {
        let we = effective(w);
        acc.add(we, r);
        sum_sq += we * we;
        max_weight = max_weight.max(w);
        if kind != EstimatorKind::Is && w > cap {
            capped += 1;
        }
    }
    let value = acc.value(kind).ok_or(EstimateError::DegenerateWeights)?;
    let ess = if sum_sq > 0.0 {
        acc.weight * acc.weight / sum_sq
    } else {
        0.0
    };

    let (ci_lo, ci_hi) = match bootstrap_interval(weights, rewards, config, &effective) {
        Some((lo, hi)) => (Some(lo.min(value)), Some(hi.max(value))),
        None => (None, None),
    };

    Ok(Estimate {
        value,
        ci_lo,
        ci_hi,
        ess,
        n,
        max_weight,
        capped_fraction: capped as f64 / n as f64,
    })
}

#[derive(Default)]
struct Sums {
    weighted_reward: f64,
    weight: f64,
    count: usize,
}

impl Sums {
    fn add(&mut self, w: f64, r: f64) {
        self.weighted_reward += w * r;
        self.weight += w;
        self.count += 1;
    }

    fn value(&self, kind: EstimatorKind) -> Option<f64> {
        match kind {
            EstimatorKind::Is | EstimatorKind::Cis => Some(self.weighted_reward / self.count as f64),
            EstimatorKind::Ncis if self.weight > 0.0 => Some(self.weighted_reward / self.weight),
            EstimatorKind::Ncis => None,
        }
    }
}

// NCIS resamples that draw only zero-weight records have no value and are
// left out of the quantiles.
fn bootstrap_interval(
    weights: &[f64],
    rewards: &[f64],
    config: &EstimatorConfig,
    effective: &dyn Fn(f64) -> f64,
) -> Option<(f64, f64)> {
    if config.bootstrap_resamples == 0 {
        return None;
    }
    let n = weights.len();
    let capped: Vec<f64> = weights.iter().map(|&w| effective(w)).collect();
    let mut rng = rng::rng_from(config.seed, &[]);
    let mut stats = Vec::with_capacity(config.bootstrap_resamples);
    for _ in 0..config.bootstrap_resamples {
        let mut acc = Sums::default();
        for _ in 0..n {
            let i = rng.random_range(0..n);
            acc.add(capped[i], rewards[i]);
        }
        if let Some(v) = acc.value(config.kind) {
            stats.push(v);
        }
    }
    if stats.is_empty() {
        return None;
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - config.ci_level) / 2.0;
    Some((quantile_sorted(&stats, alpha), quantile_sorted(&stats, 1.0 - alpha)))
}

/// Empirical quantile of sorted data, linearly interpolating between order
/// statistics at position `(len - 1) * q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
