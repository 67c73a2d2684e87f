//! Human- and machine-readable summaries of a results store.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use super::{EvaluationRun, NamedGene, RunStatus, Store, StoreError, WindowDigest};
use crate::estimators::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(format!("unknown report format `{other}` (expected json or markdown)")),
        }
    }
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    run_count: usize,
    runs: Vec<RunRow<'a>>,
    trend: Vec<TrendRow>,
}

#[derive(Serialize)]
struct RunRow<'a> {
    run_id: u64,
    status: RunStatus,
    window: &'a WindowDigest,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_variant_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_assignments: Option<&'a [NamedGene]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_estimate: Option<&'a Estimate>,
    drift_flagged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    drift: Option<&'a super::DriftReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

#[derive(Serialize)]
struct TrendRow {
    run_id: u64,
    best: Option<f64>,
    probes: Vec<Option<f64>>,
}

fn trend(runs: &[EvaluationRun]) -> (Vec<String>, Vec<TrendRow>) {
    // probe columns in first-seen order
    let mut ids: Vec<String> = Vec::new();
    for run in runs {
        for p in &run.probes {
            if !ids.contains(&p.variant.id) {
                ids.push(p.variant.id.clone());
            }
        }
    }
    let rows = runs
        .iter()
        .map(|run| TrendRow {
            run_id: run.run_id,
            best: run.search.as_ref().map(|s| s.best_estimate.value),
            probes: ids
                .iter()
                .map(|id| {
                    run.probes
                        .iter()
                        .find(|p| &p.variant.id == id)
                        .and_then(|p| p.estimate.as_ref())
                        .map(|e| e.value)
                })
                .collect(),
        })
        .collect();
    (ids, rows)
}

/// Renders every run in the store in `run_id` order. Never writes to the store.
pub fn report(store: &Store, format: ReportFormat) -> Result<String, StoreError> {
    let runs = store.load_all()?;
    Ok(match format {
        ReportFormat::Json => render_json(&runs),
        ReportFormat::Markdown => render_markdown(&runs),
    })
}

fn render_json(runs: &[EvaluationRun]) -> String {
    let (_, trend) = trend(runs);
    let doc = ReportDoc {
        run_count: runs.len(),
        runs: runs
            .iter()
            .map(|r| RunRow {
                run_id: r.run_id,
                status: r.status,
                window: &r.window,
                best_variant_id: r.search.as_ref().map(|s| s.best_variant.id.as_str()),
                best_assignments: r.search.as_ref().map(|s| s.best_assignments.as_slice()),
                best_estimate: r.search.as_ref().map(|s| &s.best_estimate),
                drift_flagged: r.drift_flagged(),
                drift: r.drift.as_ref(),
                error: r.error.as_deref(),
            })
            .collect(),
        trend,
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("report serializes");
    out.push('\n');
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

fn fmt_range(lo: Option<i64>, hi: Option<i64>) -> String {
    match (lo, hi) {
        (Some(lo), Some(hi)) => format!("[{lo}, {hi}]"),
        _ => "-".into(),
    }
}

fn render_markdown(runs: &[EvaluationRun]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Offline evaluation report\n");
    let _ = writeln!(out, "{} run{}", runs.len(), if runs.len() == 1 { "" } else { "s" });
    if runs.is_empty() {
        return out;
    }

    let _ = writeln!(out, "\n## Runs\n");
    let _ = writeln!(
        out,
        "| run | status | records | time range | best estimate | CI | ESS | capped | drift |"
    );
    let _ = writeln!(out, "|---:|---|---:|---|---:|---|---:|---:|---|");
    for r in runs {
        let best = r.search.as_ref().map(|s| &s.best_estimate);
        let ci = best
            .and_then(Estimate::ci)
            .map_or_else(|| "-".to_string(), |(lo, hi)| format!("[{lo:.6}, {hi:.6}]"));
        let drift = match &r.drift {
            Some(d) if d.flagged => "DRIFT",
            Some(_) => "ok",
            None => "-",
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.run_id,
            r.status.name(),
            r.window.records,
            fmt_range(r.window.t_min, r.window.t_max),
            fmt_opt(best.map(|b| b.value)),
            ci,
            best.map_or_else(|| "-".into(), |b| format!("{:.1}", b.ess)),
            best.map_or_else(|| "-".into(), |b| format!("{:.4}", b.capped_fraction)),
            drift,
        );
    }

    for r in runs {
        let _ = writeln!(out, "\n## Run {}\n", r.run_id);
        let _ = writeln!(out, "- status: {}", r.status.name());
        let _ = writeln!(
            out,
            "- window: {} of {} records, t in {}, hash {}",
            r.window.records,
            r.window.source_records,
            fmt_range(r.window.t_min, r.window.t_max),
            r.window.content_hash
        );
        if let Some(s) = &r.search {
            let e = &s.best_estimate;
            let _ = writeln!(out, "- best variant `{}`:", s.best_variant.id);
            for g in &s.best_assignments {
                let _ = writeln!(out, "  - {} = {}", g.name, g.value);
            }
            let _ = writeln!(
                out,
                "- best estimate: {} (CI {}), ESS {:.1} of {}, max weight {:.4}, capped fraction {:.4}",
                fmt_opt(Some(e.value)),
                e.ci()
                    .map_or_else(|| "-".to_string(), |(lo, hi)| format!("[{lo:.6}, {hi:.6}]")),
                e.ess,
                e.n,
                e.max_weight,
                e.capped_fraction
            );
            let _ = writeln!(
                out,
                "- search: {} evaluations over {} generations",
                s.evaluations,
                s.history.len()
            );
        }
        match &r.drift {
            Some(d) => {
                let _ = writeln!(
                    out,
                    "- drift vs run {}: best delta {:+.6}, probe max |delta| {:.6} (threshold {}), CI disjoint {}{}",
                    d.previous_run_id,
                    d.best_delta,
                    d.probe_max_abs_delta,
                    d.threshold,
                    if d.ci_disjoint { "yes" } else { "no" },
                    if d.flagged { " **DRIFT**" } else { "" }
                );
            }
            None => {
                let _ = writeln!(out, "- drift: not compared");
            }
        }
        if let Some(err) = &r.error {
            let _ = writeln!(out, "- error: {err}");
        }
    }

    let (ids, rows) = trend(runs);
    let _ = writeln!(out, "\n## Trend\n");
    let mut header = String::from("| run | best |");
    let mut rule = String::from("|---:|---:|");
    for i in 0..ids.len() {
        let _ = write!(header, " p{} |", i + 1);
        rule.push_str("---:|");
    }
    let _ = writeln!(out, "{header}\n{rule}");
    for row in &rows {
        let _ = write!(out, "| {} | {} |", row.run_id, fmt_opt(row.best));
        for p in &row.probes {
            let _ = write!(out, " {} |", fmt_opt(*p));
        }
        out.push('\n');
    }
    if !ids.is_empty() {
        let _ = writeln!(out, "\nProbe variants:\n");
        for (i, id) in ids.iter().enumerate() {
            let _ = writeln!(out, "- p{}: `{}`", i + 1, id);
        }
    }
    out
}
