//! `offab` command-line front end.
//!
//! Machine-readable results go to stdout, diagnostics to stderr. Exit codes:
//! 0 success, 1 validation or configuration error, 2 runtime failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::banditsim::{self, SimConfig};
use crate::logstore::{self, LogFile};
use crate::orchestrator::{
    self, EvaluationRun, LoopOptions, OrchestratorError, ProgramConfig, ReportFormat, RunStatus, Store,
};
use crate::policyspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    Invalid,
    Runtime,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            Self::Success => 0,
            Self::Invalid => 1,
            Self::Runtime => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "offab",
    version,
    about = "Automated offline A/B evaluation over logged bandit feedback"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate logged feedback from a simulator config.
    Simulate(SimulateArgs),
    /// Run one evaluation over the current logs.
    Evaluate(EvaluateArgs),
    /// Poll a growing log file and evaluate periodically.
    Loop(LoopArgs),
    /// Summarize a results store.
    Report(ReportArgs),
    /// Write the default desk-scale simulator config.
    Scenario(ScenarioArgs),
    /// Print the builtin hyperparameter space for d features and K actions.
    Space(SpaceArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub records: usize,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: u64,
    /// Add this to every reward mean (clamped to [0, 1]).
    #[arg(long, allow_hyphen_values = true)]
    pub shift: Option<f64>,
    /// First timestamp; defaults to 0, or one past the last record with --append.
    #[arg(long, allow_hyphen_values = true)]
    pub t0: Option<i64>,
    /// Append to an existing log file instead of overwriting it.
    #[arg(long)]
    pub append: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub logs: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
}

#[derive(Args, Debug)]
pub struct LoopArgs {
    #[arg(long)]
    pub logs: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Stop after this many runs; polls until interrupted when absent.
    #[arg(long)]
    pub max_runs: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub poll_millis: u64,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScenarioArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SpaceArgs {
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failed command: exit status plus the diagnostic for stderr.
#[derive(Debug)]
pub struct Failure {
    pub status: ExitStatus,
    pub message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Self {
            status: ExitStatus::Invalid,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            status: ExitStatus::Runtime,
            message: message.into(),
        }
    }
}

impl From<OrchestratorError> for Failure {
    fn from(e: OrchestratorError) -> Self {
        match e {
            OrchestratorError::Config(_) | OrchestratorError::Log(_) => Self::invalid(e.to_string()),
            OrchestratorError::Store(_) => Self::runtime(e.to_string()),
        }
    }
}

type CmdResult = Result<ExitStatus, Failure>;

fn read_text(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::invalid(format!("cannot read {what} {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_program(path: &Path) -> Result<ProgramConfig, Failure> {
    let text = read_text(path, "program config")?;
    ProgramConfig::from_json(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

/// One-line summary printed per completed run.
pub fn run_line(run: &EvaluationRun) -> String {
    let mut line = format!("run_id={} status={}", run.run_id, run.status.name());
    if let Some(s) = &run.search {
        let e = &s.best_estimate;
        line.push_str(&format!(" best={:.6}", e.value));
        if let Some((lo, hi)) = e.ci() {
            line.push_str(&format!(" ci=[{lo:.6},{hi:.6}]"));
        }
    }
    line.push_str(match &run.drift {
        Some(d) if d.flagged => " drift=DRIFT",
        Some(_) => " drift=none",
        None => " drift=-",
    });
    line
}

pub fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let text = read_text(&args.config, "simulator config")?;
    let mut config =
        SimConfig::from_json(&text).map_err(|e| Failure::invalid(format!("{}: {e}", args.config.display())))?;
    config.seed = args.seed;
    if let Some(delta) = args.shift {
        if !delta.is_finite() {
            return Err(Failure::invalid(format!("--shift must be finite, got {delta}")));
        }
        config = banditsim::shift_rewards(&config, delta);
    }

    let existing = if args.append && args.out.exists() {
        let log = LogFile::read(&args.out).map_err(|e| Failure::invalid(e.to_string()))?;
        if (log.d, log.k) != (config.d(), config.k()) {
            return Err(Failure::invalid(format!(
                "{} holds d = {}, K = {} logs, simulator produces d = {}, K = {}",
                args.out.display(),
                log.d,
                log.k,
                config.d(),
                config.k()
            )));
        }
        Some(log)
    } else {
        None
    };
    let t0 = args.t0.unwrap_or_else(|| {
        existing
            .as_ref()
            .and_then(|l| l.records.iter().map(|r| r.timestamp).max())
            .map_or(0, |t| t + 1)
    });

    let logs = banditsim::generate_logs(&config, args.records, t0).map_err(|e| Failure::invalid(e.to_string()))?;
    if existing.is_some() {
        logstore::append_records(&args.out, logs.records())
            .map_err(|e| Failure::runtime(format!("cannot append to {}: {e}", args.out.display())))?;
    } else {
        write_text(&args.out, &logs.to_jsonl())?;
    }
    let value = banditsim::true_value(&config, &config.logging_policy).map_err(|e| Failure::invalid(e.to_string()))?;
    println!("records={} logging_policy_value={value:.6}", logs.len());
    Ok(ExitStatus::Success)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CmdResult {
    let logs = logstore::ingest(&args.logs).map_err(|e| Failure::invalid(format!("{}: {e}", args.logs.display())))?;
    let config = load_program(&args.config)?;
    let store = Store::create(&args.store).map_err(|e| Failure::runtime(e.to_string()))?;
    let run = orchestrator::run_once(&config, &store, &logs)?;
    println!("{}", run_line(&run));
    match run.status {
        RunStatus::Ok | RunStatus::EmptyWindow => Ok(ExitStatus::Success),
        RunStatus::Degenerate | RunStatus::Aborted => Err(Failure::runtime(format!(
            "run {} finished with status {}: {}",
            run.run_id,
            run.status.name(),
            run.error.as_deref().unwrap_or("no detail")
        ))),
    }
}

pub fn cmd_loop(args: &LoopArgs) -> CmdResult {
    if !args.logs.is_file() {
        return Err(Failure::invalid(format!(
            "log file {} does not exist",
            args.logs.display()
        )));
    }
    let config = load_program(&args.config)?;
    let store = Store::create(&args.store).map_err(|e| Failure::runtime(e.to_string()))?;
    let options = LoopOptions {
        max_runs: args.max_runs,
        poll: Duration::from_millis(args.poll_millis),
        ..LoopOptions::default()
    };
    orchestrator::run_loop(&config, &store, &args.logs, &options, |run| {
        println!("{}", run_line(run))
    })?;
    Ok(ExitStatus::Success)
}

pub fn cmd_report(args: &ReportArgs) -> CmdResult {
    let store = Store::open(&args.store).map_err(|e| Failure::invalid(e.to_string()))?;
    let doc = orchestrator::report(&store, args.format).map_err(|e| Failure::runtime(e.to_string()))?;
    match &args.out {
        Some(path) => write_text(path, &doc)?,
        None => print!("{doc}"),
    }
    Ok(ExitStatus::Success)
}

pub fn cmd_scenario(args: &ScenarioArgs) -> CmdResult {
    let mut json = banditsim::desk_scenario(args.seed).to_json_pretty();
    json.push('\n');
    write_text(&args.out, &json)?;
    Ok(ExitStatus::Success)
}

pub fn cmd_space(args: &SpaceArgs) -> CmdResult {
    if args.d < 1 || args.k < 2 {
        return Err(Failure::invalid(format!(
            "need d >= 1 and K >= 2, got d = {}, K = {}",
            args.d, args.k
        )));
    }
    let mut json = policyspace::builtin_space(args.d, args.k).to_json_pretty();
    json.push('\n');
    match &args.out {
        Some(path) => write_text(path, &json)?,
        None => print!("{json}"),
    }
    Ok(ExitStatus::Success)
}

pub fn execute(cli: &Cli) -> ExitStatus {
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Loop(a) => cmd_loop(a),
        Command::Report(a) => cmd_report(a),
        Command::Scenario(a) => cmd_scenario(a),
        Command::Space(a) => cmd_space(a),
    };
    match result {
        Ok(status) => status,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.status
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli).code(),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                ExitStatus::Invalid.code()
            } else {
                ExitStatus::Success.code()
            }
        }
    }
}
