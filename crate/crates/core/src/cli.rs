//! Command-line entry point.
//!
//! Exit codes: 0 ok, 1 internal error, 2 inconsistent profile, 3 baseline
//! failure, 4 parse or usage error. Every failure prints one line
//! `syslens: <kind>: <message>` on stderr.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::feature::InterposeConfig;
use crate::harness::{AppSpec, HarnessError, Readiness};
use crate::interposer::Whitelist;
use crate::orchestrator::{AnalysisConfig, AnalysisError, AnalysisReport, AppProfile, CommandExecutor, Orchestrator, ProbeRecord};
use crate::planner::{self, PlanError, Strategy, Weights};
use crate::policy::Policy;
use crate::store::{self, OsSupportSet, StoreError};
use crate::syscalls;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INCONSISTENT: i32 = 2;
pub const EXIT_BASELINE: i32 = 3;
pub const EXIT_USAGE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "syslens", version, about = "Measure which system calls an application really needs")]
pub struct Cli {
    /// Interposition settings (TOML: subfeature_selectors, fake_values, pseudo_prefixes).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify every feature of a workload and store the profile.
    Analyze(AnalyzeArgs),
    /// Run a workload once under a policy file.
    Probe(ProbeArgs),
    /// Incremental support plan for an OS.
    Plan(PlanArgs),
    /// Fraction of applications tracing and requiring each syscall.
    Importance(DbArgs),
    /// Effort curves of the planner, naive tracing and an optional given order.
    Compare(CompareArgs),
    /// Stored profile as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct WorkloadArgs {
    /// Application command line (shell-quoted).
    #[arg(long, value_name = "CMD")]
    pub app_cmd: String,
    /// Executable run against the application: `script HOST [PORT]`.
    #[arg(long, value_name = "PATH")]
    pub test_script: PathBuf,
    /// Application name; defaults to the command's file name.
    #[arg(long)]
    pub name: Option<String>,
    /// Binaries whose processes are traced (repeatable); default the first exec'd image.
    #[arg(long, value_name = "PATH")]
    pub whitelist: Vec<PathBuf>,
    /// When to start the test script: exit, port, port:N or delay:MS.
    #[arg(long, default_value = "exit", value_parser = parse_readiness)]
    pub ready: Readiness,
    /// Directory copied into every run's working directory.
    #[arg(long, value_name = "DIR")]
    pub workdir: Option<PathBuf>,
    /// Key features by sub-operation of vectored syscalls.
    #[arg(long)]
    pub subfeatures: bool,
    /// Key open calls by pseudo-file prefix.
    #[arg(long)]
    pub pseudofiles: bool,
    /// Per-run timeout in seconds; derived from the baseline when absent.
    #[arg(long, value_name = "SECS", value_parser = parse_secs)]
    pub timeout: Option<Duration>,
    /// Print machine-readable JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    /// Runs per configuration; a feature keeps a mode only if every replica works.
    #[arg(long, default_value_t = 3)]
    pub replicas: u32,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub parallel: u32,
    /// Enable regression detection with this many runs per statistic.
    #[arg(long, value_name = "N")]
    pub perf_runs: Option<u32>,
    /// Relative change counted as a regression.
    #[arg(long, default_value_t = 0.03)]
    pub perf_margin: f64,
    /// Database root the profile is written to.
    #[arg(long, env = "SLENS_DB", value_name = "DIR")]
    pub db: PathBuf,
    /// Run each replica through this command template instead of locally
    /// (`{policy}` and `{timeout}` are substituted).
    #[arg(long, value_name = "TEMPLATE")]
    pub executor: Option<String>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub workload: WorkloadArgs,
    /// Policy JSON: {"overrides": [{"feature": "prctl", "action": {"fake": 0}}, ...]}
    #[arg(long, value_name = "FILE")]
    pub policy: PathBuf,
}

#[derive(Debug, Args)]
pub struct DbArgs {
    /// Database root.
    #[arg(long, env = "SLENS_DB", value_name = "DIR")]
    pub db: PathBuf,
    /// Print machine-readable JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub db: DbArgs,
    /// Syscalls the OS supports, as `syscall[,status]` lines.
    #[arg(long, value_name = "CSV")]
    pub os_support: PathBuf,
    /// Target applications (comma-separated); default every confirmed profile.
    #[arg(long, value_delimiter = ',')]
    pub apps: Vec<String>,
    /// Syscalls never to implement (comma-separated names or numbers).
    #[arg(long, value_delimiter = ',')]
    pub wont_implement: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub db: DbArgs,
    /// Starting OS support; default none.
    #[arg(long, value_name = "CSV")]
    pub os_support: Option<PathBuf>,
    /// File listing applications in an externally given order, one per line.
    #[arg(long, value_name = "FILE")]
    pub order: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub db: DbArgs,
    /// Application to export; the most recent profile is used.
    #[arg(long, value_delimiter = ',', required = true)]
    pub apps: Vec<String>,
}

fn parse_readiness(s: &str) -> Result<Readiness, String> {
    s.parse()
}

fn parse_secs(s: &str) -> Result<Duration, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !(v > 0.0 && v.is_finite()) {
        return Err("timeout must be positive".into());
    }
    Ok(Duration::from_secs_f64(v))
}

/// A failure with its exit code and greppable kind.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let (code, kind) = match e {
            StoreError::Parse { .. } | StoreError::UnknownSyscallName { .. } => (EXIT_USAGE, "parse"),
            StoreError::InvalidKey(_) => (EXIT_USAGE, "usage"),
            StoreError::DuplicateKey { .. } => (EXIT_INTERNAL, "duplicate-key"),
            _ => (EXIT_INTERNAL, "store"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<PlanError> for Failure {
    fn from(e: PlanError) -> Self {
        let code = match e {
            PlanError::UnconfirmedProfile(_) => EXIT_INCONSISTENT,
            _ => EXIT_USAGE,
        };
        Self {
            code,
            kind: "plan",
            message: e.to_string(),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        let (code, kind) = match &e {
            AnalysisError::InvalidConfig(_) => (EXIT_USAGE, "usage"),
            AnalysisError::Harness(HarnessError::ScriptMissing(_) | HarnessError::InvalidSpec(_)) => (EXIT_USAGE, "usage"),
            AnalysisError::Harness(_) => (EXIT_INTERNAL, "harness"),
            AnalysisError::BaselineFailure { .. } => (EXIT_BASELINE, "baseline-failure"),
            AnalysisError::TracerFault { .. } => (EXIT_INTERNAL, "tracer-fault"),
            AnalysisError::Inconsistent(_) => (EXIT_INCONSISTENT, "inconsistent"),
            AnalysisError::Store(StoreError::InvalidKey(_)) => (EXIT_USAGE, "usage"),
            AnalysisError::Store(StoreError::DuplicateKey { .. }) => (EXIT_INTERNAL, "duplicate-key"),
            AnalysisError::Store(_) => (EXIT_INTERNAL, "store"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<i32, Failure>;

/// Parses `args` and runs the command, writing to the given streams.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    let first = text.lines().next().unwrap_or("invalid arguments");
                    let _ = writeln!(err, "syslens: usage: {}", first.trim_start_matches("error: "));
                    EXIT_USAGE
                }
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(&cli, out, err) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "syslens: {}: {}", f.kind, f.message);
            f.code
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let interpose = match &cli.config {
        Some(path) => InterposeConfig::load(path).map_err(|e| Failure {
            code: EXIT_USAGE,
            kind: "parse",
            message: e.to_string(),
        })?,
        None => InterposeConfig::default(),
    };
    match &cli.command {
        Command::Analyze(a) => analyze(a, interpose, out, err),
        Command::Probe(a) => probe(a, interpose, out),
        Command::Plan(a) => plan(a, out),
        Command::Importance(a) => importance(a, out),
        Command::Compare(a) => compare(a, out),
        Command::Export(a) => export(a, out),
    }
}

fn json<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure {
        code: EXIT_INTERNAL,
        kind: "internal",
        message: e.to_string(),
    })?;
    emit(out, &text)
}

fn emit(out: &mut dyn Write, text: &str) -> CmdResult {
    let text = text.strip_suffix('\n').unwrap_or(text);
    match writeln!(out, "{text}") {
        // a closed reader (e.g. `| head`) is not an error
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure {
            code: EXIT_INTERNAL,
            kind: "io",
            message: e.to_string(),
        }),
        _ => Ok(EXIT_OK),
    }
}

fn build_spec(w: &WorkloadArgs) -> Result<AppSpec, Failure> {
    let argv = shlex::split(&w.app_cmd)
        .filter(|v| !v.is_empty())
        .ok_or_else(|| Failure::usage(format!("cannot parse --app-cmd {:?}", w.app_cmd)))?;
    let name = match &w.name {
        Some(n) => n.clone(),
        None => Path::new(&argv[0])
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "app".into()),
    };
    let whitelist = Whitelist::new(&w.whitelist).map_err(|e| Failure::usage(format!("--whitelist: {e}")))?;
    let test_script = std::path::absolute(&w.test_script).unwrap_or_else(|_| w.test_script.clone());
    let mut spec = AppSpec::new(name, argv, test_script);
    spec.readiness = w.ready.clone();
    spec.whitelist = whitelist;
    spec.workdir_template = w.workdir.clone();
    Ok(spec)
}

fn analysis_config(w: &WorkloadArgs, interpose: InterposeConfig) -> AnalysisConfig {
    AnalysisConfig {
        subfeatures: w.subfeatures,
        pseudofiles: w.pseudofiles,
        timeout: w.timeout,
        interpose,
        ..Default::default()
    }
}

fn analyze(a: &AnalyzeArgs, interpose: InterposeConfig, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let spec = build_spec(&a.workload)?;
    let mut config = analysis_config(&a.workload, interpose);
    config.replicas = a.replicas;
    config.parallelism = a.parallel;
    config.perf_margin = a.perf_margin;
    if let Some(n) = a.perf_runs {
        config.perf_runs = n;
        config.detect_regressions = true;
    }
    let mut orchestrator = Orchestrator::new(spec, config)?.with_store(&a.db);
    if let Some(template) = &a.executor {
        let argv = shlex::split(template)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Failure::usage(format!("cannot parse --executor {template:?}")))?;
        orchestrator = orchestrator.with_executor(Box::new(CommandExecutor::new(argv)));
    }
    // progress goes to stderr as it happens
    let progress = std::sync::Mutex::new(std::io::stderr());
    orchestrator = orchestrator.with_progress(Box::new(move |line| {
        let _ = writeln!(progress.lock().unwrap(), "{line}");
    }));
    let (report, code): (Box<AnalysisReport>, i32) = match orchestrator.full_analysis() {
        Ok(r) => (Box::new(r), EXIT_OK),
        Err(AnalysisError::Inconsistent(r)) => (r, EXIT_INCONSISTENT),
        Err(e) => return Err(e.into()),
    };
    if a.workload.json {
        json(out, &report)?;
    } else {
        emit(out, &report.profile.render_table())?;
        if let Some(path) = &report.stored_at {
            let _ = writeln!(err, "stored {}", path.display());
        }
    }
    if code == EXIT_INCONSISTENT {
        let hint = report.hint.clone().unwrap_or_default();
        let _ = writeln!(err, "syslens: inconsistent: confirmation run failed; {hint}");
    }
    Ok(code)
}

fn probe(a: &ProbeArgs, interpose: InterposeConfig, out: &mut dyn Write) -> CmdResult {
    let spec = build_spec(&a.workload)?;
    let text = std::fs::read_to_string(&a.policy).map_err(|e| Failure::usage(format!("{}: {e}", a.policy.display())))?;
    let policy = Policy::from_json(&text).map_err(|e| Failure {
        code: EXIT_USAGE,
        kind: "parse",
        message: format!("{}: {e}", a.policy.display()),
    })?;
    let config = AnalysisConfig {
        replicas: 1,
        ..analysis_config(&a.workload, interpose)
    };
    let orchestrator = Orchestrator::new(spec, config)?;
    let (outcome, trace) = orchestrator.probe_custom(&policy)?;
    if a.workload.json {
        return json(out, &ProbeRecord { outcome, trace });
    }
    let metric = outcome.perf_metric.map(|m| m.to_string()).unwrap_or_else(|| "-".into());
    emit(
        out,
        &format!(
            "success={} reason={:?} metric={metric} peak_rss={} peak_fds={} duration={:.3}s features={}",
            outcome.success,
            outcome.reason,
            outcome.peak_rss,
            outcome.peak_fds,
            outcome.duration,
            trace.observed.len()
        ),
    )
}

fn load_profiles(db: &DbArgs) -> Result<Vec<AppProfile>, Failure> {
    Ok(store::load_db(&db.db)?.into_iter().map(|e| e.profile).collect())
}

fn resolve_syscalls(tokens: &[String]) -> Result<BTreeSet<u64>, Failure> {
    tokens
        .iter()
        .map(|t| {
            syscalls::table()
                .resolve(t.trim())
                .ok_or_else(|| Failure::usage(format!("unknown syscall {t:?}")))
        })
        .collect()
}

fn plan(a: &PlanArgs, out: &mut dyn Write) -> CmdResult {
    let os = store::import_os_csv(&a.os_support)?;
    let profiles = load_profiles(&a.db)?;
    let targets = if a.apps.is_empty() {
        let confirmed: Vec<AppProfile> = profiles.iter().filter(|p| p.confirmed).cloned().collect();
        planner::app_names(&confirmed)
    } else {
        a.apps.clone()
    };
    let wont = resolve_syscalls(&a.wont_implement)?;
    let plan = planner::generate_plan(&os, &profiles, &targets, &Weights::default(), &wont)?;
    if a.db.json {
        json(out, &plan)
    } else {
        emit(out, &plan.render_table())
    }
}

fn importance(a: &DbArgs, out: &mut dyn Write) -> CmdResult {
    let report = planner::api_importance(&load_profiles(a)?)?;
    if a.json {
        json(out, &report)
    } else {
        emit(out, &report.render_table())
    }
}

fn compare(a: &CompareArgs, out: &mut dyn Write) -> CmdResult {
    let os = match &a.os_support {
        Some(p) => store::import_os_csv(p)?,
        None => OsSupportSet::default(),
    };
    let profiles: Vec<AppProfile> = load_profiles(&a.db)?.into_iter().filter(|p| p.confirmed).collect();
    let mut strategies = vec![Strategy::Plan, Strategy::Naive];
    if let Some(path) = &a.order {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        let order = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        strategies.push(Strategy::External(order));
    }
    let table = planner::compare_strategies(&profiles, &os, &strategies, &Weights::default())?;
    if a.db.json {
        json(out, &table)
    } else {
        emit(out, &table.to_csv())
    }
}

fn export(a: &ExportArgs, out: &mut dyn Write) -> CmdResult {
    let profiles = load_profiles(&a.db)?;
    let mut text = String::new();
    let mut chosen = Vec::new();
    for app in &a.apps {
        let latest = profiles
            .iter()
            .filter(|p| &p.app == app)
            .max_by(|x, y| x.metadata.date.cmp(&y.metadata.date))
            .ok_or_else(|| Failure::usage(format!("no profile for {app}")))?;
        chosen.push(latest);
        let csv = store::export_profile_csv(latest);
        // one header for several applications
        if text.is_empty() {
            text.push_str(&csv);
        } else {
            text.extend(csv.lines().skip(1).map(|l| format!("{l}\n")));
        }
    }
    if a.db.json {
        json(out, &chosen)
    } else {
        emit(out, &text)
    }
}
