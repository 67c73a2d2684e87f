//! The periodic evaluation loop.
//!
//! Each evaluation run cuts a window from the current log tail, re-evaluates
//! a fixed set of probe variants, searches the variant space with the GA
//! using the configured estimator as fitness, compares against the most
//! recent successful run, and appends the result to the [`Store`].

mod report;
mod store;

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{report, ReportFormat};
pub use store::{run_file_name, Store, StoreError, LATEST_FILE};

use crate::estimators::{self, Estimate, EstimatorConfig};
use crate::gasearch::{self, GaConfig, GaError, GenerationStats};
use crate::logstore::{self, LogDataset, LogFile, WindowSpec};
use crate::policyspace::{self, Gene, HyperparameterSpace, PolicyLayout, Variant};
use crate::rng;

pub const DEFAULT_PROBE_COUNT: usize = 12;
pub const MAX_PROBE_COUNT: usize = 10_000;
pub const DEFAULT_DRIFT_THRESHOLD: f64 = 0.05;
pub const DEFAULT_TRIGGER_RECORDS: usize = 1_000;

const PROBE_STREAM: u64 = 0x009e_0be5;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid program config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Log(#[from] logstore::LogError),
}

// ── Configuration ───────────────────────────────────────────────────────

/// Where the variant space comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceSource {
    /// `"builtin"`: the builtin policy space for the log's `d` and `K`.
    Named(BuiltinSpace),
    Explicit(HyperparameterSpace),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BuiltinSpace {
    #[serde(rename = "builtin")]
    Builtin,
}

impl Default for SpaceSource {
    fn default() -> Self {
        Self::Named(BuiltinSpace::Builtin)
    }
}

impl SpaceSource {
    pub fn resolve(&self, d: usize, k: usize) -> HyperparameterSpace {
        match self {
            Self::Named(BuiltinSpace::Builtin) => policyspace::builtin_space(d, k),
            Self::Explicit(space) => space.clone(),
        }
    }
}

/// When the loop fires a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Fire for every `N` new records; each run sees the stream up to its batch.
    EveryNRecords(usize),
    /// Fire once per wall-clock period when new records arrived.
    EveryTMillis(u64),
}

impl Default for Trigger {
    fn default() -> Self {
        Self::EveryNRecords(DEFAULT_TRIGGER_RECORDS)
    }
}

/// Everything one evaluation needs besides the logs: the variant space,
/// the measurement, the search, and the data selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProgramConfig {
    #[serde(default)]
    pub space: SpaceSource,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default)]
    pub trigger: Trigger,
    #[serde(default = "default_probe_count")]
    pub probe_count: usize,
    #[serde(default = "default_drift_threshold")]
    pub drift_threshold: f64,
    /// Seed for the probe set; the GA seed when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_seed: Option<u64>,
}

fn default_probe_count() -> usize {
    DEFAULT_PROBE_COUNT
}

fn default_drift_threshold() -> f64 {
    DEFAULT_DRIFT_THRESHOLD
}

impl Default for ProgramConfig {
    fn default() -> Self {
        Self {
            space: SpaceSource::default(),
            estimator: EstimatorConfig::default(),
            ga: GaConfig::default(),
            window: WindowSpec::default(),
            trigger: Trigger::default(),
            probe_count: DEFAULT_PROBE_COUNT,
            drift_threshold: DEFAULT_DRIFT_THRESHOLD,
            probe_seed: None,
        }
    }
}

impl ProgramConfig {
    pub fn from_json(text: &str) -> Result<Self, OrchestratorError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("program config serializes")
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let cfg_err = |m: String| OrchestratorError::Config(m);
        self.estimator.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.ga.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.window.validate().map_err(cfg_err)?;
        if self.probe_count > MAX_PROBE_COUNT {
            return Err(cfg_err(format!(
                "probe_count must be <= {MAX_PROBE_COUNT}, got {}",
                self.probe_count
            )));
        }
        if !(self.drift_threshold.is_finite() && self.drift_threshold >= 0.0) {
            return Err(cfg_err(format!(
                "drift_threshold must be >= 0, got {}",
                self.drift_threshold
            )));
        }
        match self.trigger {
            Trigger::EveryNRecords(0) => Err(cfg_err("every_n_records must be >= 1".into())),
            Trigger::EveryTMillis(0) => Err(cfg_err("every_t_millis must be >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn probe_seed(&self) -> u64 {
        self.probe_seed.unwrap_or(self.ga.seed)
    }
}

/// The fixed probe variants re-evaluated by every run.
pub fn probe_variants(space: &HyperparameterSpace, seed: u64, count: usize) -> Vec<Variant> {
    let mut rng = rng::rng_from(seed, &[PROBE_STREAM]);
    (0..count).map(|_| gasearch::random_variant(space, &mut rng)).collect()
}

// ── Run records ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    EmptyWindow,
    Degenerate,
    Aborted,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::EmptyWindow => "empty_window",
            Self::Degenerate => "degenerate",
            Self::Aborted => "aborted",
        }
    }
}

/// Identifies the data a run was evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDigest {
    pub spec: WindowSpec,
    /// Records in the log stream when the run fired.
    pub source_records: usize,
    pub records: usize,
    pub t_min: Option<i64>,
    pub t_max: Option<i64>,
    /// FNV-1a of the window's canonical JSON Lines rendering, hex.
    pub content_hash: String,
}

impl WindowDigest {
    pub fn of(spec: &WindowSpec, source_records: usize, window: &LogDataset) -> Self {
        Self {
            spec: spec.clone(),
            source_records,
            records: window.len(),
            t_min: window.min_timestamp(),
            t_max: window.max_timestamp(),
            content_hash: format!("{:016x}", window.content_hash()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedGene {
    pub name: String,
    pub value: Gene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSearch {
    pub best_variant: Variant,
    pub best_assignments: Vec<NamedGene>,
    /// Full estimate (with interval) of the best variant.
    pub best_estimate: Estimate,
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<Estimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub previous_run_id: u64,
    pub best_delta: f64,
    pub ci_disjoint: bool,
    pub probe_max_abs_delta: f64,
    pub threshold: f64,
    pub flagged: bool,
}

/// One evaluation `e_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRun {
    pub run_id: u64,
    pub status: RunStatus,
    /// Wall-clock milliseconds since the epoch.
    pub started_at: u64,
    pub finished_at: u64,
    pub window: WindowDigest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<RunSearch>,
    #[serde(default)]
    pub probes: Vec<ProbeResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvaluationRun {
    pub fn drift_flagged(&self) -> bool {
        self.drift.as_ref().is_some_and(|d| d.flagged)
    }
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

// ── Drift ───────────────────────────────────────────────────────────────

/// Compares a run with the previous successful run. Probes are matched by
/// variant id; probes without an estimate on either side are skipped.
pub fn compute_drift(previous: &EvaluationRun, current: &EvaluationRun, threshold: f64) -> Option<DriftReport> {
    let prev_best = &previous.search.as_ref()?.best_estimate;
    let cur_best = &current.search.as_ref()?.best_estimate;
    let ci_disjoint = match (prev_best.ci(), cur_best.ci()) {
        (Some((plo, phi)), Some((clo, chi))) => clo > phi || chi < plo,
        _ => false,
    };
    let probe_max_abs_delta = current
        .probes
        .iter()
        .filter_map(|cur| {
            let prev = previous.probes.iter().find(|p| p.variant.id == cur.variant.id)?;
            Some((cur.estimate.as_ref()?.value - prev.estimate.as_ref()?.value).abs())
        })
        .fold(0.0, f64::max);
    Some(DriftReport {
        previous_run_id: previous.run_id,
        best_delta: cur_best.value - prev_best.value,
        ci_disjoint,
        probe_max_abs_delta,
        threshold,
        flagged: ci_disjoint || probe_max_abs_delta > threshold,
    })
}

// ── Single run ──────────────────────────────────────────────────────────

/// Executes one evaluation over `logs` and appends it to `store`.
pub fn run_once(config: &ProgramConfig, store: &Store, logs: &LogDataset) -> Result<EvaluationRun, OrchestratorError> {
    config.validate()?;
    let started_at = now_millis();
    let space = config.space.resolve(logs.d(), logs.k());
    let layout = PolicyLayout::from_space(&space).map_err(|e| OrchestratorError::Config(e.to_string()))?;
    if layout.d() != logs.d() || layout.k() != logs.k() {
        return Err(OrchestratorError::Config(format!(
            "space describes {} x {} policies (d x K), logs are {} x {}",
            layout.d(),
            layout.k(),
            logs.d(),
            logs.k()
        )));
    }

    let window = logstore::select_window(logs, &config.window);
    let digest = WindowDigest::of(&config.window, logs.len(), &window);
    let run_id = store.next_run_id()?;
    let mut run = EvaluationRun {
        run_id,
        status: RunStatus::Ok,
        started_at,
        finished_at: started_at,
        window: digest,
        search: None,
        probes: Vec::new(),
        drift: None,
        error: None,
    };

    if window.is_empty() {
        run.status = RunStatus::EmptyWindow;
        return persist(store, run);
    }

    let previous = match store.latest_ok() {
        Ok(prev) => prev,
        Err(e) => {
            run.status = RunStatus::Aborted;
            run.error = Some(e.to_string());
            return persist(store, run);
        }
    };

    let evaluate = |variant: &Variant, cfg: &EstimatorConfig| -> Result<Estimate, String> {
        let policy = layout.decode_unchecked(variant).map_err(|e| e.to_string())?;
        estimators::estimate(&policy, &window, cfg).map_err(|e| e.to_string())
    };

    run.probes = probe_variants(&space, config.probe_seed(), config.probe_count)
        .into_par_iter()
        .map(|variant| match evaluate(&variant, &config.estimator) {
            Ok(e) => ProbeResult {
                variant,
                estimate: Some(e),
                error: None,
            },
            Err(msg) => ProbeResult {
                variant,
                estimate: None,
                error: Some(msg),
            },
        })
        .collect();

    let fitness_cfg = config.estimator.clone().with_resamples(0);
    let search = gasearch::evolve(&space, |v| evaluate(v, &fitness_cfg).map(|e| e.value), &config.ga);
    match search {
        Ok(result) => match evaluate(&result.best_variant, &config.estimator) {
            Ok(best_estimate) => {
                run.search = Some(RunSearch {
                    best_assignments: space
                        .specs()
                        .iter()
                        .zip(&result.best_variant.assignments)
                        .map(|(s, g)| NamedGene {
                            name: s.name.clone(),
                            value: g.clone(),
                        })
                        .collect(),
                    best_variant: result.best_variant,
                    best_estimate,
                    history: result.history,
                    evaluations: result.evaluations,
                });
            }
            Err(msg) => {
                run.status = RunStatus::Degenerate;
                run.error = Some(msg);
            }
        },
        Err(GaError::Config(msg)) => return Err(OrchestratorError::Config(msg)),
        Err(e @ GaError::AllFailed { .. }) => {
            run.status = RunStatus::Degenerate;
            run.error = Some(e.to_string());
        }
    }

    if run.status == RunStatus::Ok {
        run.drift = previous.and_then(|prev| compute_drift(&prev, &run, config.drift_threshold));
    }
    persist(store, run)
}

fn persist(store: &Store, mut run: EvaluationRun) -> Result<EvaluationRun, OrchestratorError> {
    run.finished_at = now_millis();
    store.append(&run)?;
    Ok(run)
}

// ── Loop ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LoopOptions {
    pub max_runs: Option<usize>,
    pub poll: Duration,
    /// Set from another thread to stop after the current poll.
    pub stop: Option<Arc<AtomicBool>>,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            max_runs: None,
            poll: Duration::from_millis(500),
            stop: None,
        }
    }
}

impl LoopOptions {
    fn stopped(&self, runs: usize) -> bool {
        self.max_runs.is_some_and(|m| runs >= m) || self.stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed))
    }
}

/// Reads the complete lines of a log file that may still be growing.
fn read_log_tail(path: &Path) -> Result<LogFile, logstore::LogError> {
    let text = fs::read_to_string(path).map_err(|source| logstore::LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    LogFile::parse(complete)
}

/// Polls `log_path` and fires [`run_once`] whenever the trigger condition
/// holds, calling `on_run` after every persisted run.
///
/// With `every_n_records`, the stream is consumed in batches of `N` records
/// in file order, and each run sees exactly the records up to the end of its
/// batch, so a backlog yields one run per batch. A run that fails is logged
/// and skipped; only configuration errors end the loop early.
pub fn run_loop<F>(
    config: &ProgramConfig,
    store: &Store,
    log_path: &Path,
    options: &LoopOptions,
    mut on_run: F,
) -> Result<Vec<EvaluationRun>, OrchestratorError>
where
    F: FnMut(&EvaluationRun),
{
    config.validate()?;
    let mut runs = Vec::new();
    let mut consumed = 0usize;
    let mut last_fire = Instant::now();

    while !options.stopped(runs.len()) {
        let log = match read_log_tail(log_path) {
            Ok(log) => log,
            Err(e) => {
                log::warn!("log not readable, retrying next poll: {e}");
                thread::sleep(options.poll);
                continue;
            }
        };
        let available = log.records.len();

        let mut batches = Vec::new();
        match config.trigger {
            Trigger::EveryNRecords(n) => {
                let mut upto = consumed;
                while available - upto >= n {
                    upto += n;
                    batches.push(upto);
                }
            }
            Trigger::EveryTMillis(period) => {
                if available > consumed && last_fire.elapsed() >= Duration::from_millis(period) {
                    batches.push(available);
                }
            }
        }

        if batches.is_empty() {
            thread::sleep(options.poll);
            continue;
        }

        for upto in batches {
            if options.stopped(runs.len()) {
                break;
            }
            consumed = upto;
            last_fire = Instant::now();
            match run_once(config, store, &log.prefix(upto)) {
                Ok(run) => {
                    on_run(&run);
                    runs.push(run);
                }
                Err(e @ OrchestratorError::Config(_)) => return Err(e),
                Err(e) => log::warn!("run over {upto} records failed: {e}"),
            }
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorKind;

    fn estimate(value: f64, ci: Option<(f64, f64)>) -> Estimate {
        Estimate {
            value,
            ci_lo: ci.map(|c| c.0),
            ci_hi: ci.map(|c| c.1),
            ess: 10.0,
            n: 10,
            max_weight: 1.0,
            capped_fraction: 0.0,
        }
    }

    fn run_with(id: u64, best: Estimate, probes: &[(Variant, f64)]) -> EvaluationRun {
        EvaluationRun {
            run_id: id,
            status: RunStatus::Ok,
            started_at: 0,
            finished_at: 0,
            window: WindowDigest::of(&WindowSpec::default(), 0, &LogDataset::empty(1, 2).unwrap()),
            search: Some(RunSearch {
                best_variant: Variant::new(vec![]),
                best_assignments: vec![],
                best_estimate: best,
                history: vec![],
                evaluations: 0,
            }),
            probes: probes
                .iter()
                .map(|(v, x)| ProbeResult {
                    variant: v.clone(),
                    estimate: Some(estimate(*x, None)),
                    error: None,
                })
                .collect(),
            drift: None,
            error: None,
        }
    }

    #[test]
    fn drift_rules() {
        let p1 = Variant::new(vec![Gene::Real(0.1)]);
        let p2 = Variant::new(vec![Gene::Real(0.2)]);
        let prev = run_with(
            1,
            estimate(0.5, Some((0.45, 0.55))),
            &[(p1.clone(), 0.3), (p2.clone(), 0.6)],
        );

        let same = run_with(
            2,
            estimate(0.5, Some((0.45, 0.55))),
            &[(p1.clone(), 0.3), (p2.clone(), 0.6)],
        );
        let d = compute_drift(&prev, &same, 0.05).unwrap();
        assert_eq!(d.probe_max_abs_delta, 0.0);
        assert!(!d.ci_disjoint && !d.flagged);

        let moved = run_with(
            3,
            estimate(0.52, Some((0.47, 0.57))),
            &[(p1.clone(), 0.3), (p2.clone(), 0.7)],
        );
        let d = compute_drift(&prev, &moved, 0.05).unwrap();
        assert!((d.probe_max_abs_delta - 0.1).abs() < 1e-12);
        assert!((d.best_delta - 0.02).abs() < 1e-12);
        assert!(d.flagged && !d.ci_disjoint);
        assert!(!compute_drift(&prev, &moved, 0.2).unwrap().flagged);

        let jumped = run_with(4, estimate(0.8, Some((0.75, 0.85))), &[(p1, 0.3), (p2, 0.6)]);
        let d = compute_drift(&prev, &jumped, 0.05).unwrap();
        assert!(d.ci_disjoint && d.flagged);
    }

    #[test]
    fn drift_threshold_monotone() {
        let p = Variant::new(vec![Gene::Real(0.1)]);
        let prev = run_with(1, estimate(0.5, None), &[(p.clone(), 0.3)]);
        let cur = run_with(2, estimate(0.5, None), &[(p, 0.37)]);
        let mut flagged_before = false;
        for t in [0.2, 0.1, 0.07, 0.05, 0.01, 0.0] {
            let f = compute_drift(&prev, &cur, t).unwrap().flagged;
            assert!(f || !flagged_before, "lowering threshold to {t} unflagged the run");
            flagged_before = f;
        }
        assert!(flagged_before);
    }

    #[test]
    fn program_config_defaults_and_validation() {
        let cfg = ProgramConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ProgramConfig::default());
        assert_eq!(cfg.estimator.kind, EstimatorKind::Ncis);
        assert_eq!(cfg.trigger, Trigger::EveryNRecords(1000));
        assert_eq!(cfg.probe_count, 12);

        let json = r#"{"space": "builtin", "estimator": {"kind": "CIS", "cap": 20},
            "ga": {"population_size": 8, "seed": 3}, "window": {"strategy": "time_range", "t_start": 0, "t_end": 10},
            "trigger": {"every_t_millis": 250}, "probe_count": 4, "drift_threshold": 0.1}"#;
        let cfg = ProgramConfig::from_json(json).unwrap();
        assert_eq!(cfg.trigger, Trigger::EveryTMillis(250));
        assert_eq!(cfg.probe_seed(), 3);
        let back = ProgramConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back, cfg);

        for bad in [
            r#"{"probe_count": 10001}"#,
            r#"{"trigger": {"every_n_records": 0}}"#,
            r#"{"window": {"strategy": "last_n", "n": 0}}"#,
            r#"{"ga": {"elitism": 40}}"#,
            r#"{"estimator": {"kind": "NCIS", "cap": -1}}"#,
            r#"{"drift_threshold": -0.1}"#,
            r#"{"space": "fancy"}"#,
            r#"{"unknown": 1}"#,
        ] {
            assert!(ProgramConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn explicit_space_in_config() {
        let space = policyspace::builtin_space(2, 2);
        let cfg = ProgramConfig {
            space: SpaceSource::Explicit(space.clone()),
            ..ProgramConfig::default()
        };
        let back = ProgramConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back.space.resolve(9, 9), space);
    }

    #[test]
    fn probes_are_fixed_by_seed() {
        let space = policyspace::builtin_space(4, 3);
        let a = probe_variants(&space, 17, 12);
        assert_eq!(a, probe_variants(&space, 17, 12));
        assert_eq!(a.len(), 12);
        assert_ne!(a, probe_variants(&space, 18, 12));
        assert_eq!(probe_variants(&space, 17, 5), a[..5].to_vec());
    }
}
