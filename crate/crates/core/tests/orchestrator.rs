use std::fs::{self, OpenOptions};
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use offab::banditsim::{self, SimConfig};
use offab::gasearch::GaConfig;
use offab::logstore::{LogDataset, WindowSpec};
use offab::orchestrator::{self, compute_drift, LoopOptions, ProgramConfig, ReportFormat, RunStatus, Store, Trigger};

fn small_config() -> ProgramConfig {
    ProgramConfig {
        ga: GaConfig {
            population_size: 10,
            generations: 5,
            ..GaConfig::default()
        },
        ..ProgramConfig::default()
    }
}

fn sim() -> SimConfig {
    banditsim::desk_scenario(11)
}

fn logs(seed: u64, n: usize, t0: i64) -> LogDataset {
    banditsim::generate_logs(&SimConfig { seed, ..sim() }, n, t0).unwrap()
}

fn options(max_runs: usize) -> LoopOptions {
    LoopOptions {
        max_runs: Some(max_runs),
        poll: Duration::from_millis(10),
        ..LoopOptions::default()
    }
}

#[test]
fn first_run_has_no_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let store = Store::create(tmp.path()).unwrap();
    let cfg = ProgramConfig {
        window: WindowSpec::LastN { n: 5000 },
        ..small_config()
    };
    let run = orchestrator::run_once(&cfg, &store, &logs(1, 5000, 0)).unwrap();
    assert_eq!(run.status, RunStatus::Ok);
    assert_eq!(run.run_id, 1);
    assert!(run.drift.is_none());
    assert_eq!(run.window.records, 5000);
    assert_eq!(run.probes.len(), 12);
    let text = fs::read_to_string(store.run_path(1)).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(json.get("drift").is_none());
    for field in ["run_id", "status", "window", "search", "probes"] {
        assert!(json.get(field).is_some(), "{field}");
    }
    assert_eq!(store.latest_pointer().as_deref(), Some("run-1.json"));
}

#[test]
fn identical_runs_show_zero_probe_delta() {
    let tmp = tempfile::tempdir().unwrap();
    let store = Store::create(tmp.path()).unwrap();
    let data = logs(2, 1500, 0);
    let a = orchestrator::run_once(&small_config(), &store, &data).unwrap();
    let b = orchestrator::run_once(&small_config(), &store, &data).unwrap();
    assert_eq!(a.probes, b.probes);
    let drift = b.drift.as_ref().unwrap();
    assert_eq!(drift.previous_run_id, 1);
    assert_eq!(drift.probe_max_abs_delta, 0.0);
    assert_eq!(drift.best_delta, 0.0);
    assert!(!drift.ci_disjoint);
    assert!(!drift.flagged);
}

#[test]
fn empty_window_is_persisted_and_skipped_for_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let store = Store::create(tmp.path()).unwrap();
    let data = logs(3, 800, 0);
    let first = orchestrator::run_once(&small_config(), &store, &data).unwrap();

    let empty_cfg = ProgramConfig {
        window: WindowSpec::TimeRange {
            t_start: 10_000,
            t_end: 20_000,
        },
        ..small_config()
    };
    let empty = orchestrator::run_once(&empty_cfg, &store, &data).unwrap();
    assert_eq!(empty.status, RunStatus::EmptyWindow);
    assert!(empty.search.is_none() && empty.probes.is_empty() && empty.drift.is_none());
    assert!(store.run_path(2).is_file());

    let third = orchestrator::run_once(&small_config(), &store, &data).unwrap();
    assert_eq!(third.run_id, 3);
    assert_eq!(third.drift.as_ref().unwrap().previous_run_id, first.run_id);
}

#[test]
fn corrupt_prior_run_aborts() {
    let tmp = tempfile::tempdir().unwrap();
    let store = Store::create(tmp.path()).unwrap();
    fs::write(store.run_path(1), "{ not json").unwrap();
    let run = orchestrator::run_once(&small_config(), &store, &logs(4, 300, 0)).unwrap();
    assert_eq!(run.run_id, 2);
    assert_eq!(run.status, RunStatus::Aborted);
    assert!(run.error.as_deref().unwrap().contains("run-1.json"));
    assert!(store.run_path(2).is_file());
}

#[test]
fn mismatched_space_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let store = Store::create(tmp.path()).unwrap();
    let cfg = ProgramConfig {
        space: orchestrator::SpaceSource::Explicit(offab::policyspace::builtin_space(2, 3)),
        ..small_config()
    };
    let err = orchestrator::run_once(&cfg, &store, &logs(5, 100, 0)).unwrap_err();
    assert!(matches!(err, orchestrator::OrchestratorError::Config(_)), "{err}");
    assert!(store.run_ids().unwrap().is_empty());
}

#[test]
fn drift_threshold_is_monotone_on_real_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let store = Store::create(tmp.path()).unwrap();
    let a = orchestrator::run_once(&small_config(), &store, &logs(6, 1000, 0)).unwrap();
    let shifted = banditsim::generate_logs(
        &banditsim::shift_rewards(&SimConfig { seed: 7, ..sim() }, 0.15),
        1000,
        0,
    )
    .unwrap();
    let b = orchestrator::run_once(&small_config(), &store, &shifted).unwrap();
    let mut was_flagged = false;
    for t in [0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.0] {
        let flagged = compute_drift(&a, &b, t).unwrap().flagged;
        assert!(flagged || !was_flagged, "unflagged at threshold {t}");
        was_flagged |= flagged;
    }
    assert!(was_flagged);
}

#[test]
fn loop_consumes_backlog_in_batches() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("logs.jsonl");
    let mut all = logs(8, 2500, 0).to_jsonl();
    // a torn trailing line is ignored until completed
    all.push_str("{\"t\": 2500, \"x\": [");
    fs::write(&path, all).unwrap();
    let store = Store::create(tmp.path().join("store")).unwrap();
    let cfg = ProgramConfig {
        trigger: Trigger::EveryNRecords(1000),
        ..small_config()
    };
    let mut seen = Vec::new();
    let runs = orchestrator::run_loop(&cfg, &store, &path, &options(2), |r| seen.push(r.run_id)).unwrap();
    assert_eq!(seen, vec![1, 2]);
    assert_eq!(
        runs.iter().map(|r| r.window.source_records).collect::<Vec<_>>(),
        vec![1000, 2000]
    );
}

#[test]
fn loop_without_new_records_runs_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("logs.jsonl");
    fs::write(&path, logs(9, 999, 0).to_jsonl()).unwrap();
    let store = Store::create(tmp.path().join("store")).unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let opts = LoopOptions {
        stop: Some(stop.clone()),
        ..options(5)
    };
    let stopper = thread::spawn(move || {
        thread::sleep(Duration::from_millis(300));
        stop.store(true, Ordering::Relaxed);
    });
    let runs = orchestrator::run_loop(&small_config(), &store, &path, &opts, |_| {}).unwrap();
    stopper.join().unwrap();
    assert!(runs.is_empty());
    assert!(store.run_ids().unwrap().is_empty());
}

#[test]
fn loop_follows_a_growing_file() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("logs.jsonl");
    let first = logs(10, 600, 0);
    fs::write(&path, first.to_jsonl()).unwrap();
    let store = Store::create(tmp.path().join("store")).unwrap();
    let cfg = ProgramConfig {
        trigger: Trigger::EveryNRecords(500),
        ..small_config()
    };
    let writer = {
        let path = path.clone();
        thread::spawn(move || {
            thread::sleep(Duration::from_millis(200));
            let more = logs(11, 600, 600);
            let mut f = OpenOptions::new().append(true).open(&path).unwrap();
            for r in more.records() {
                writeln!(f, "{}", r.to_line()).unwrap();
            }
        })
    };
    let runs = orchestrator::run_loop(&cfg, &store, &path, &options(2), |_| {}).unwrap();
    writer.join().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0].window.source_records, 500);
    assert_eq!(runs[1].window.source_records, 1000);
}

#[test]
fn time_trigger_fires_on_new_records() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("logs.jsonl");
    fs::write(&path, logs(12, 300, 0).to_jsonl()).unwrap();
    let store = Store::create(tmp.path().join("store")).unwrap();
    let cfg = ProgramConfig {
        trigger: Trigger::EveryTMillis(20),
        ..small_config()
    };
    let runs = orchestrator::run_loop(&cfg, &store, &path, &options(1), |_| {}).unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0].window.source_records, 300);
}

#[test]
fn report_lists_runs_in_order_with_drift_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let store = Store::create(tmp.path()).unwrap();
    let cfg = ProgramConfig {
        drift_threshold: 0.0,
        ..small_config()
    };
    orchestrator::run_once(&cfg, &store, &logs(13, 500, 0)).unwrap();
    orchestrator::run_once(&cfg, &store, &logs(14, 500, 0)).unwrap();
    orchestrator::run_once(&cfg, &store, &logs(15, 500, 0)).unwrap();

    let before: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).collect();
    let md = orchestrator::report(&store, ReportFormat::Markdown).unwrap();
    assert_eq!(md, orchestrator::report(&store, ReportFormat::Markdown).unwrap());
    let after: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(before.len(), after.len());

    assert!(md.contains("3 runs"));
    let rows: Vec<&str> = md
        .lines()
        .filter(|l| l.starts_with("| 1 |") || l.starts_with("| 2 |") || l.starts_with("| 3 |"))
        .collect();
    assert!(rows.len() >= 3);
    let positions: Vec<usize> = ["## Run 1", "## Run 2", "## Run 3"]
        .iter()
        .map(|h| md.find(h).unwrap())
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
    assert!(md.contains("DRIFT"));

    let json: serde_json::Value =
        serde_json::from_str(&orchestrator::report(&store, ReportFormat::Json).unwrap()).unwrap();
    let ids: Vec<u64> = json["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["run_id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, vec![1, 2, 3]);
    assert_eq!(json["runs"][2]["drift_flagged"], true);
    assert_eq!(json["trend"][0]["probes"].as_array().unwrap().len(), 12);
}

#[test]
fn probe_set_is_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let store = Store::create(tmp.path()).unwrap();
    let a = orchestrator::run_once(&small_config(), &store, &logs(16, 400, 0)).unwrap();
    let b = orchestrator::run_once(&small_config(), &store, &logs(17, 400, 0)).unwrap();
    let ids = |r: &orchestrator::EvaluationRun| r.probes.iter().map(|p| p.variant.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&a), ids(&b));
}
