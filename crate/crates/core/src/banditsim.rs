//! Synthetic contextual bandit with a finite context set.
//!
//! Logs are generated under a known, floored logging policy, and the exact
//! value of any policy is available by enumeration, which makes the
//! simulator the ground truth that offline estimates are checked against.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gasearch::random_variant;
use crate::logstore::{LogDataset, LogRecord};
use crate::policyspace::{self, Policy, PolicyError};
use crate::rng;

/// Smallest exploration floor accepted for the logging policy.
pub const MIN_LOGGING_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// `C x d`.
    pub context_vectors: Vec<Vec<f64>>,
    pub context_probs: Vec<f64>,
    /// `C x K` Bernoulli means.
    pub reward_means: Vec<Vec<f64>>,
    pub logging_policy: Policy,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    pub fn num_contexts(&self) -> usize {
        self.context_vectors.len()
    }

    pub fn d(&self) -> usize {
        self.logging_policy.d()
    }

    pub fn k(&self) -> usize {
        self.logging_policy.k()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        let c = self.num_contexts();
        let (d, k) = (self.d(), self.k());
        if c == 0 {
            return bad("need at least one context".into());
        }
        if self.context_vectors.iter().any(|x| x.len() != d) {
            return bad(format!(
                "every context vector must have the logging policy dimension {d}"
            ));
        }
        if self.context_vectors.iter().flatten().any(|v| !v.is_finite()) {
            return bad("context vectors must be finite".into());
        }
        if self.context_probs.len() != c {
            return bad(format!(
                "{} context probabilities for {c} contexts",
                self.context_probs.len()
            ));
        }
        if self.context_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("context probabilities must be >= 0".into());
        }
        let total: f64 = self.context_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("context probabilities sum to {total}, not 1"));
        }
        if self.reward_means.len() != c || self.reward_means.iter().any(|row| row.len() != k) {
            return bad(format!("reward_means must be {c} x {k}"));
        }
        if self.reward_means.iter().flatten().any(|m| !(0.0..=1.0).contains(m)) {
            return bad("reward means must lie in [0, 1]".into());
        }
        if self.logging_policy.floor() < MIN_LOGGING_FLOOR {
            return bad(format!(
                "logging policy floor {} is below {MIN_LOGGING_FLOOR}",
                self.logging_policy.floor()
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("sim config serializes")
    }
}

/// Index of the bucket that `u` in `[0, 1)` falls into, by cumulative mass.
fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding can leave the cumulative sum a hair under 1
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Generates `n` records with timestamps `t0, t0 + 1, ...`.
pub fn generate_logs(config: &SimConfig, n: usize, t0: i64) -> Result<LogDataset, SimError> {
    config.validate()?;
    let action_probs = config
        .context_vectors
        .iter()
        .map(|x| config.logging_policy.action_probabilities(x))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = rng::rng_from(config.seed, &[]);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let c = sample_index(&config.context_probs, rng.random::<f64>());
        let probs = &action_probs[c];
        let a = sample_index(probs, rng.random::<f64>());
        let reward = if rng.random::<f64>() < config.reward_means[c][a] {
            1.0
        } else {
            0.0
        };
        records.push(LogRecord {
            timestamp: t0 + i as i64,
            context: config.context_vectors[c].clone(),
            action: a as u64,
            propensity: probs[a],
            reward,
        });
    }
    LogDataset::new(config.d(), config.k(), records).map_err(|e| SimError::Config(e.to_string()))
}

/// Exact expected reward of `policy`: `sum_c P(c) sum_a pi(a|x_c) mean(c, a)`.
pub fn true_value(config: &SimConfig, policy: &Policy) -> Result<f64, SimError> {
    if policy.d() != config.d() || policy.k() != config.k() {
        return Err(SimError::Config(format!(
            "policy is {} x {} (d x K), simulator is {} x {}",
            policy.d(),
            policy.k(),
            config.d(),
            config.k()
        )));
    }
    let mut value = 0.0;
    for ((x, pc), means) in config
        .context_vectors
        .iter()
        .zip(&config.context_probs)
        .zip(&config.reward_means)
    {
        let probs = policy.action_probabilities(x)?;
        value += pc * probs.iter().zip(means).map(|(p, m)| p * m).sum::<f64>();
    }
    Ok(value)
}

/// Moves every reward mean by `delta`, clamped to `[0, 1]`.
pub fn shift_rewards(config: &SimConfig, delta: f64) -> SimConfig {
    let mut out = config.clone();
    for m in out.reward_means.iter_mut().flatten() {
        *m = (*m + delta).clamp(0.0, 1.0);
    }
    out
}

/// Desk-scale scenario: 5 contexts in 4 dimensions, 3 actions, uniform
/// context distribution, means uniform in [0.1, 0.9], and a seeded random
/// builtin-space policy with floor 0.1 as the logging policy.
pub fn desk_scenario(seed: u64) -> SimConfig {
    const C: usize = 5;
    const D: usize = 4;
    const K: usize = 3;
    let mut rng = rng::rng_from(seed, &[0x5ce7a410]);
    let context_vectors = (0..C)
        .map(|_| (0..D).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let reward_means = (0..C)
        .map(|_| (0..K).map(|_| rng.random_range(0.1..=0.9)).collect())
        .collect();
    let space = policyspace::builtin_space(D, K);
    let variant = random_variant(&space, &mut rng);
    let logging_policy = policyspace::decode(&space, &variant)
        .and_then(|p| p.with_floor(0.1))
        .expect("random builtin variant decodes");
    SimConfig {
        context_vectors,
        context_probs: vec![1.0 / C as f64; C],
        reward_means,
        logging_policy,
        seed,
    }
}
