//! One workload attempt: launch the application under the interposer, drive
//! it with the test script, sample its resource usage and tear it down.
//!
//! Test-script contract:
//! - `argv[1]` is the application host, `argv[2]` its port when one is assigned;
//! - the same values are exported as `SLENS_HOST` / `SLENS_PORT`, together with
//!   `SLENS_APP_PID`, `SLENS_WORKDIR` and, once the application has exited,
//!   `SLENS_APP_EXIT`;
//! - exit status 0 means success;
//! - a final stdout line that parses as a number is the performance metric.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, Read};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::os::unix::fs::PermissionsExt;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use log::{debug, warn};
use nix::sys::signal::{self, Signal};
use nix::unistd::Pid;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::feature::InterposeConfig;
use crate::interposer::{ExitHook, RunTrace, TraceCommand, TraceError, TraceSession, Whitelist};
use crate::policy::Policy;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("test script {0} is missing or not executable")]
    ScriptMissing(PathBuf),
    #[error("invalid application spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Launch(#[from] TraceError),
    #[error("executor: {0:#}")]
    Executor(anyhow::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Io { context, source }
}

/// How to tell the application is ready for the test script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readiness {
    /// Wait a fixed delay after launch.
    Delay(Duration),
    /// Poll until a TCP connection to the port succeeds; `None` assigns a free port per run.
    Port(Option<u16>),
    /// Self-contained program: wait for the whole application tree to exit.
    Exit,
}

impl std::str::FromStr for Readiness {
    type Err = String;

    /// Parses `exit`, `port`, `port:N` or `delay:MS`.
    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "exit" => Ok(Readiness::Exit),
            None if s == "port" => Ok(Readiness::Port(None)),
            Some(("port", p)) => p.parse().map(|p| Readiness::Port(Some(p))).map_err(|e| format!("port: {e}")),
            Some(("delay", ms)) => ms
                .parse()
                .map(|ms| Readiness::Delay(Duration::from_millis(ms)))
                .map_err(|e| format!("delay: {e}")),
            _ => Err("expected exit, port, port:N or delay:MS".into()),
        }
    }
}

/// Application + workload description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSpec {
    pub name: String,
    pub app_command: Vec<String>,
    pub test_script: PathBuf,
    pub env: Vec<(String, String)>,
    pub readiness: Readiness,
    pub whitelist: Whitelist,
    /// Copied into a fresh working directory for every run.
    pub workdir_template: Option<PathBuf>,
}

impl AppSpec {
    pub fn new(name: impl Into<String>, app_command: Vec<String>, test_script: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            app_command,
            test_script: test_script.into(),
            env: Vec::new(),
            readiness: Readiness::Exit,
            whitelist: Whitelist::empty(),
            workdir_template: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.app_command.is_empty() {
            return Err(HarnessError::InvalidSpec("empty application command".into()));
        }
        if self.name.is_empty() || self.name.contains('/') {
            return Err(HarnessError::InvalidSpec(format!("bad application name {:?}", self.name)));
        }
        let executable = std::fs::metadata(&self.test_script)
            .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
            .unwrap_or(false);
        if !executable {
            return Err(HarnessError::ScriptMissing(self.test_script.clone()));
        }
        if let Some(t) = &self.workdir_template {
            if !t.is_dir() {
                return Err(HarnessError::InvalidSpec(format!("workdir template {} is not a directory", t.display())));
            }
        }
        Ok(())
    }

    /// Content hash identifying the workload: command, environment,
    /// readiness, whitelist and the test script's bytes.
    pub fn workload_hash(&self) -> Result<String, HarnessError> {
        let script = std::fs::read(&self.test_script).map_err(io_err(self.test_script.display().to_string()))?;
        let mut h = Sha256::new();
        let descr = serde_json::json!({
            "app_command": self.app_command,
            "env": self.env,
            "readiness": self.readiness,
            "whitelist": self.whitelist,
        });
        h.update(descr.to_string().as_bytes());
        h.update([0u8]);
        h.update(&script);
        Ok(hex::encode(&h.finalize()[..8]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeReason {
    ScriptOk,
    ScriptFail,
    Crash,
    Timeout,
    TracerFault,
}

/// Verdict and measurements of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadOutcome {
    pub success: bool,
    pub reason: OutcomeReason,
    pub perf_metric: Option<f64>,
    pub peak_rss: u64,
    pub peak_fds: u64,
    /// seconds
    pub duration: f64,
}

impl WorkloadOutcome {
    fn new(reason: OutcomeReason) -> Self {
        Self {
            success: reason == OutcomeReason::ScriptOk,
            reason,
            perf_metric: None,
            peak_rss: 0,
            peak_fds: 0,
            duration: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceSample {
    /// monotonic seconds since the first sample of the run (0 for ad-hoc samples)
    pub timestamp: f64,
    /// bytes
    pub rss: u64,
    pub fd_count: u64,
    /// pids whose proc entries could not be read
    pub skipped: u32,
}

fn read_hwm(pid: i32) -> Option<u64> {
    let status = std::fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse::<u64>().ok())
        .map(|kb| kb * 1024)
}

fn count_fds(pid: i32) -> Option<u64> {
    std::fs::read_dir(format!("/proc/{pid}/fd"))
        .ok()
        .map(|d| d.count() as u64)
}

fn sample_one(pid: i32) -> Option<(u64, u64)> {
    Some((read_hwm(pid)?, count_fds(pid)?))
}

/// Sums resident high-water marks and open descriptors over `pids`.
/// Unreadable or vanished pids are skipped and counted.
pub fn sample_resources(pids: &[i32]) -> ResourceSample {
    let mut sample = ResourceSample {
        timestamp: 0.0,
        rss: 0,
        fd_count: 0,
        skipped: 0,
    };
    for &pid in pids {
        match sample_one(pid) {
            Some((rss, fds)) => {
                sample.rss += rss;
                sample.fd_count += fds;
            }
            None => sample.skipped += 1,
        }
    }
    sample
}

/// Peak tracking over the processes of one run.
#[derive(Debug, Default)]
struct ResourceTracker {
    last: HashMap<i32, (u64, u64)>,
    peak_rss: u64,
    peak_fds: u64,
    samples: Vec<ResourceSample>,
    started: Option<Instant>,
}

impl ResourceTracker {
    fn fold_peaks(&mut self) {
        let rss: u64 = self.last.values().map(|v| v.0).sum();
        let fds: u64 = self.last.values().map(|v| v.1).sum();
        self.peak_rss = self.peak_rss.max(rss);
        self.peak_fds = self.peak_fds.max(fds);
    }

    fn periodic(&mut self, pids: &[i32]) {
        let started = *self.started.get_or_insert_with(Instant::now);
        self.last.retain(|pid, _| pids.contains(pid));
        let mut skipped = 0;
        for &pid in pids {
            match sample_one(pid) {
                Some(v) => {
                    self.last.insert(pid, v);
                }
                None => skipped += 1,
            }
        }
        self.fold_peaks();
        self.samples.push(ResourceSample {
            timestamp: started.elapsed().as_secs_f64(),
            rss: self.last.values().map(|v| v.0).sum(),
            fd_count: self.last.values().map(|v| v.1).sum(),
            skipped,
        });
    }

    /// Final snapshot of a process about to exit.
    fn on_exit(&mut self, pid: i32) {
        if let Some(v) = sample_one(pid) {
            self.last.insert(pid, v);
            self.fold_peaks();
        }
        self.last.remove(&pid);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunLimits {
    /// Deadline for the whole run (launch, readiness and script).
    pub timeout: Duration,
    pub kill_grace: Duration,
    pub sample_period: Duration,
}

impl Default for RunLimits {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(10),
            kill_grace: Duration::from_millis(500),
            sample_period: Duration::from_millis(100),
        }
    }
}

/// Per-run placement: where the fresh working directory goes and extra environment.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    pub runs_root: Option<PathBuf>,
    pub extra_env: Vec<(String, String)>,
}

fn copy_dir(src: &Path, dst: &Path) -> io::Result<()> {
    for entry in std::fs::read_dir(src)? {
        let entry = entry?;
        let target = dst.join(entry.file_name());
        let ty = entry.file_type()?;
        if ty.is_dir() {
            std::fs::create_dir_all(&target)?;
            copy_dir(&entry.path(), &target)?;
        } else if ty.is_symlink() {
            std::os::unix::fs::symlink(std::fs::read_link(entry.path())?, &target)?;
        } else {
            std::fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

fn free_port() -> io::Result<u16> {
    Ok(TcpListener::bind("127.0.0.1:0")?.local_addr()?.port())
}

/// Parses the last non-empty stdout line as a number.
pub fn parse_metric(stdout: &str) -> Option<f64> {
    stdout
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| l.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite())
}

enum ScriptResult {
    Finished { status: std::process::ExitStatus, stdout: String },
    TimedOut,
}

fn run_script(
    spec: &AppSpec,
    workdir: &Path,
    env: &[(String, String)],
    host: &str,
    port: Option<u16>,
    deadline: Instant,
) -> Result<ScriptResult, HarnessError> {
    let mut cmd = Command::new(&spec.test_script);
    cmd.arg(host);
    if let Some(p) = port {
        cmd.arg(p.to_string());
    }
    let stderr = File::create(workdir.join("script.stderr")).map_err(io_err("creating script.stderr"))?;
    cmd.envs(env.iter().map(|(k, v)| (k, v)))
        .current_dir(workdir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(stderr)
        .process_group(0);
    let mut child = cmd
        .spawn()
        .map_err(io_err(format!("running {}", spec.test_script.display())))?;
    let mut out = child.stdout.take().expect("piped stdout");
    let reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = out.read_to_string(&mut s);
        s
    });
    let pgid = Pid::from_raw(child.id() as i32);
    loop {
        match child.try_wait().map_err(io_err("waiting for test script"))? {
            Some(status) => {
                // descendants left in the script's group would keep stdout open
                let _ = signal::killpg(pgid, Signal::SIGKILL);
                let stdout = reader.join().unwrap_or_default();
                return Ok(ScriptResult::Finished { status, stdout });
            }
            None if Instant::now() >= deadline => {
                let _ = signal::killpg(pgid, Signal::SIGKILL);
                let _ = child.wait();
                let _ = reader.join();
                return Ok(ScriptResult::TimedOut);
            }
            None => std::thread::sleep(Duration::from_millis(5)),
        }
    }
}

/// Executes one workload attempt under `policy`.
pub fn run_workload(
    spec: &AppSpec,
    policy: &Policy,
    config: &InterposeConfig,
    limits: &RunLimits,
    ctx: &RunContext,
) -> Result<(WorkloadOutcome, RunTrace), HarnessError> {
    spec.validate()?;
    let prefix = format!("syslens-{}-", spec.name);
    let mut builder = tempfile::Builder::new();
    builder.prefix(&prefix);
    let workdir = match &ctx.runs_root {
        Some(root) => {
            std::fs::create_dir_all(root).map_err(io_err(root.display().to_string()))?;
            builder.tempdir_in(root)
        }
        None => builder.tempdir(),
    }
    .map_err(io_err("creating working directory"))?;
    if let Some(template) = &spec.workdir_template {
        copy_dir(template, workdir.path()).map_err(io_err("copying workdir template"))?;
    }

    let host = "127.0.0.1".to_string();
    let port = match spec.readiness {
        Readiness::Port(Some(p)) => Some(p),
        Readiness::Port(None) => Some(free_port().map_err(io_err("allocating a port"))?),
        _ => None,
    };
    let mut env: Vec<(String, String)> = spec.env.clone();
    env.extend(ctx.extra_env.iter().cloned());
    env.push(("SLENS_HOST".into(), host.clone()));
    env.push(("SLENS_WORKDIR".into(), workdir.path().display().to_string()));
    if let Some(p) = port {
        env.push(("SLENS_PORT".into(), p.to_string()));
    }

    let tracker = Arc::new(Mutex::new(ResourceTracker::default()));
    let hook_tracker = Arc::clone(&tracker);
    let exit_hook: ExitHook = Arc::new(move |pid| hook_tracker.lock().unwrap().on_exit(pid));
    let command = TraceCommand {
        argv: spec.app_command.clone(),
        env: env.clone(),
        cwd: Some(workdir.path().to_path_buf()),
        stdout: Some(File::create(workdir.path().join("app.stdout")).map_err(io_err("creating app.stdout"))?),
        stderr: Some(File::create(workdir.path().join("app.stderr")).map_err(io_err("creating app.stderr"))?),
    };

    let start = Instant::now();
    let deadline = start + limits.timeout;
    let session = TraceSession::start(
        command,
        policy.clone(),
        spec.whitelist.clone(),
        config.clone(),
        Some(exit_hook),
    )?;
    let session = Arc::new(session);

    let stop_sampling = Arc::new(AtomicBool::new(false));
    let sampler = {
        let session = Arc::clone(&session);
        let tracker = Arc::clone(&tracker);
        let stop = Arc::clone(&stop_sampling);
        let period = limits.sample_period.max(Duration::from_millis(1));
        std::thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) && !session.is_finished() {
                let pids = session.traced_pids();
                tracker.lock().unwrap().periodic(&pids);
                session.wait_timeout(period);
            }
        })
    };

    let mut reason = None;
    let mut perf_metric = None;

    // readiness
    let ready_exit_ok = matches!(spec.readiness, Readiness::Exit);
    match &spec.readiness {
        Readiness::Delay(d) => {
            session.wait_timeout((*d).min(deadline.saturating_duration_since(Instant::now())));
        }
        Readiness::Port(_) => {
            let addr = SocketAddr::from(([127, 0, 0, 1], port.expect("port assigned")));
            loop {
                if TcpStream::connect_timeout(&addr, Duration::from_millis(100)).is_ok() {
                    break;
                }
                if session.is_finished() {
                    reason = Some(OutcomeReason::Crash);
                    break;
                }
                if Instant::now() >= deadline {
                    reason = Some(OutcomeReason::Timeout);
                    break;
                }
                session.wait_timeout(Duration::from_millis(20));
            }
        }
        Readiness::Exit => {
            if !session.wait_timeout(deadline.saturating_duration_since(Instant::now())) {
                reason = Some(OutcomeReason::Timeout);
            }
        }
    }
    if reason.is_none() && session.crashed() {
        reason = Some(OutcomeReason::Crash);
    }

    if reason.is_none() {
        env.push(("SLENS_APP_PID".into(), session.root_pid().to_string()));
        if let Some(code) = session.root_exit_code() {
            env.push(("SLENS_APP_EXIT".into(), code.to_string()));
            if !ready_exit_ok && code != 0 {
                reason = Some(OutcomeReason::Crash);
            }
        }
    }
    if reason.is_none() {
        match run_script(spec, workdir.path(), &env, &host, port, deadline)? {
            ScriptResult::TimedOut => reason = Some(OutcomeReason::Timeout),
            ScriptResult::Finished { status, stdout } => {
                perf_metric = parse_metric(&stdout);
                // crashes before the script completed invalidate the run
                let crashed = session.crashed()
                    || (!ready_exit_ok && session.root_exit_code().is_some_and(|c| c != 0));
                reason = Some(if crashed {
                    OutcomeReason::Crash
                } else if status.success() {
                    OutcomeReason::ScriptOk
                } else {
                    debug!("script exit {:?} signal {:?}", status.code(), status.signal());
                    OutcomeReason::ScriptFail
                });
            }
        }
    }
    let duration = start.elapsed().as_secs_f64();

    // teardown
    session.terminate(limits.kill_grace);
    stop_sampling.store(true, Ordering::SeqCst);
    let _ = sampler.join();
    let session = Arc::try_unwrap(session).unwrap_or_else(|_| panic!("sampler released the session"));
    let trace = match session.wait() {
        Ok(t) => t,
        Err(TraceError::TracerFault(msg)) => {
            warn!("tracer fault: {msg}");
            let mut outcome = WorkloadOutcome::new(OutcomeReason::TracerFault);
            outcome.duration = duration;
            return Ok((outcome, RunTrace::default()));
        }
        Err(e) => return Err(e.into()),
    };

    let reason = reason.expect("every path assigns a reason");
    let tracker = tracker.lock().unwrap();
    let mut outcome = WorkloadOutcome::new(reason);
    outcome.perf_metric = perf_metric;
    outcome.peak_rss = tracker.peak_rss;
    outcome.peak_fds = tracker.peak_fds;
    outcome.duration = duration;
    Ok((outcome, trace))
}
