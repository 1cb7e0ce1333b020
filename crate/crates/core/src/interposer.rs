//! ptrace-based interposition engine.
//!
//! A dedicated tracer thread launches the target, follows every fork/clone
//! and exec in its tree, and at each syscall entry of a traced process looks
//! up the [`Policy`]. Suppressed calls get their number rewritten to `-1`
//! (the kernel then does nothing) and the injected value is written to the
//! return register at the matching exit stop.
//!
//! Calls served by the vDSO (`clock_gettime`, `gettimeofday`, `time`,
//! `getcpu` on x86_64) never enter the kernel and are therefore invisible
//! here; they are never reported as unused, simply not interceptable.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io;
use std::os::unix::fs::FileExt;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use log::{debug, warn};
use nix::errno::Errno;
use nix::sys::ptrace::{self, Event, Options};
use nix::sys::signal::{self, Signal};
use nix::sys::wait::{waitpid, WaitPidFlag, WaitStatus};
use nix::unistd::Pid;
use serde::{Deserialize, Serialize};

use crate::feature::{classify_feature, FeatureId, InterposeConfig};
use crate::policy::{Action, Policy};
use crate::syscalls::{SYS_EXECVE, SYS_EXIT, SYS_EXIT_GROUP};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("failed to launch {program}: {source}")]
    LaunchFailure {
        program: String,
        #[source]
        source: io::Error,
    },
    #[error("tracer fault: {0}")]
    TracerFault(String),
    #[error("invalid trace request: {0}")]
    InvalidRequest(String),
}

/// Set of executables whose processes are analysed.
///
/// An empty whitelist traces the initially executed image only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Whitelist {
    binary_paths: BTreeSet<PathBuf>,
}

impl Whitelist {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Canonicalizes every path (resolving symlinks) at load time.
    pub fn new<I, P>(paths: I) -> io::Result<Self>
    where
        I: IntoIterator<Item = P>,
        P: AsRef<Path>,
    {
        let mut binary_paths = BTreeSet::new();
        for p in paths {
            let canonical = std::fs::canonicalize(p.as_ref()).map_err(|e| {
                io::Error::new(e.kind(), format!("{}: {e}", p.as_ref().display()))
            })?;
            binary_paths.insert(canonical);
        }
        Ok(Self { binary_paths })
    }

    pub fn is_empty(&self) -> bool {
        self.binary_paths.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.binary_paths.iter().map(PathBuf::as_path)
    }

    pub fn contains(&self, canonical: &Path) -> bool {
        self.binary_paths.contains(canonical)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecDecision {
    Traced,
    Ignored,
}

/// Decides whether the image a process just exec'd is analysed.
///
/// `path` is canonicalized here; an unresolvable path is ignored.
pub fn resolve_exec(path: &Path, whitelist: &Whitelist, first_exec: bool) -> ExecDecision {
    if whitelist.is_empty() {
        return if first_exec {
            ExecDecision::Traced
        } else {
            ExecDecision::Ignored
        };
    }
    match std::fs::canonicalize(path) {
        Ok(canonical) if whitelist.contains(&canonical) => ExecDecision::Traced,
        Ok(_) => ExecDecision::Ignored,
        Err(e) => {
            warn!("cannot resolve exec path {}: {e}", path.display());
            ExecDecision::Ignored
        }
    }
}

/// Outcome of one traced execution.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTrace {
    /// Invocation counts per feature, whitelisted processes only.
    #[serde(with = "crate::serde_util::map_as_list")]
    pub observed: BTreeMap<FeatureId, u64>,
    #[serde(with = "crate::serde_util::map_as_list")]
    pub decisions: BTreeMap<FeatureId, Action>,
    /// Exit status of the root process; `128 + signal` when it was killed.
    pub exit_code: i32,
    pub signaled: Option<i32>,
    pub timed_out: bool,
    pub whitelisted_pids_seen: u64,
    /// Whitelisted processes that died from a signal before teardown began.
    pub crashes: Vec<(i32, i32)>,
    pub warnings: Vec<String>,
}

impl RunTrace {
    pub fn features(&self) -> BTreeSet<FeatureId> {
        self.observed.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceLimits {
    pub timeout: Duration,
    pub kill_grace: Duration,
}

impl Default for TraceLimits {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(10),
            kill_grace: Duration::from_millis(500),
        }
    }
}

/// Command to launch under the tracer.
#[derive(Debug, Default)]
pub struct TraceCommand {
    pub argv: Vec<String>,
    pub env: Vec<(String, String)>,
    pub cwd: Option<PathBuf>,
    pub stdout: Option<File>,
    pub stderr: Option<File>,
}

impl TraceCommand {
    pub fn new<I, S>(argv: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            argv: argv.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }
}

/// Called with the pid of a traced process about to exit (still alive).
pub type ExitHook = Arc<dyn Fn(i32) + Send + Sync>;

#[derive(Default)]
struct Shared {
    /// every live tracee, traced or not
    live: Mutex<BTreeSet<i32>>,
    traced: Mutex<BTreeSet<i32>>,
    crashed: AtomicBool,
    tearing_down: AtomicBool,
    timed_out: AtomicBool,
    root_exit: Mutex<Option<i32>>,
    done: Mutex<bool>,
    done_cv: Condvar,
}

impl Shared {
    fn finish(&self) {
        *self.done.lock().unwrap() = true;
        self.done_cv.notify_all();
    }

    fn signal_all(&self, sig: Signal) {
        let pids: Vec<i32> = self.live.lock().unwrap().iter().copied().collect();
        for pid in pids {
            let _ = signal::kill(Pid::from_raw(pid), sig);
        }
    }
}

/// Handle on a running traced process tree.
pub struct TraceSession {
    shared: Arc<Shared>,
    root: i32,
    thread: Option<JoinHandle<Result<RunTrace, TraceError>>>,
}

impl TraceSession {
    pub fn start(
        command: TraceCommand,
        policy: Policy,
        whitelist: Whitelist,
        config: InterposeConfig,
        exit_hook: Option<ExitHook>,
    ) -> Result<Self, TraceError> {
        if command.argv.is_empty() {
            return Err(TraceError::InvalidRequest("empty command".into()));
        }
        let shared = Arc::new(Shared::default());
        let (tx, rx) = mpsc::channel();
        let thread_shared = Arc::clone(&shared);
        let thread = std::thread::Builder::new()
            .name("syslens-tracer".into())
            .spawn(move || {
                let root = match launch(command) {
                    Ok(root) => root,
                    Err(e) => {
                        thread_shared.finish();
                        let _ = tx.send(Err(e));
                        return Ok(RunTrace::default());
                    }
                };
                let _ = tx.send(Ok(root.pid));
                let mut tracer = Tracer::new(root, policy, whitelist, config, exit_hook, thread_shared);
                let result = tracer.run();
                if result.is_err() {
                    tracer.shared.tearing_down.store(true, Ordering::SeqCst);
                    tracer.shared.signal_all(Signal::SIGKILL);
                    tracer.drain();
                }
                tracer.shared.finish();
                result
            })
            .map_err(|e| TraceError::TracerFault(format!("spawning tracer thread: {e}")))?;
        match rx.recv() {
            Ok(Ok(root)) => Ok(Self {
                shared,
                root: root.as_raw(),
                thread: Some(thread),
            }),
            Ok(Err(e)) => {
                let _ = thread.join();
                Err(e)
            }
            Err(_) => {
                let joined = thread.join();
                Err(TraceError::TracerFault(format!("tracer thread exited early: {joined:?}")))
            }
        }
    }

    pub fn root_pid(&self) -> i32 {
        self.root
    }

    /// Live processes currently being analysed.
    pub fn traced_pids(&self) -> Vec<i32> {
        self.shared.traced.lock().unwrap().iter().copied().collect()
    }

    pub fn live_pids(&self) -> Vec<i32> {
        self.shared.live.lock().unwrap().iter().copied().collect()
    }

    /// Exit status of the root process (`128 + signal` if killed) once it has terminated.
    pub fn root_exit_code(&self) -> Option<i32> {
        *self.shared.root_exit.lock().unwrap()
    }

    pub fn crashed(&self) -> bool {
        self.shared.crashed.load(Ordering::SeqCst)
    }

    pub fn is_finished(&self) -> bool {
        *self.shared.done.lock().unwrap()
    }

    /// Blocks until every tracee is gone or `timeout` elapses; returns whether finished.
    pub fn wait_timeout(&self, timeout: Duration) -> bool {
        let guard = self.shared.done.lock().unwrap();
        let (guard, _) = self
            .shared
            .done_cv
            .wait_timeout_while(guard, timeout, |done| !*done)
            .unwrap();
        *guard
    }

    /// SIGTERM to the whole tree, then SIGKILL after `grace`.
    pub fn terminate(&self, grace: Duration) {
        self.shared.tearing_down.store(true, Ordering::SeqCst);
        if self.is_finished() {
            return;
        }
        self.shared.signal_all(Signal::SIGTERM);
        if !self.wait_timeout(grace) {
            self.kill();
        }
    }

    pub fn kill(&self) {
        self.shared.tearing_down.store(true, Ordering::SeqCst);
        let _ = signal::killpg(Pid::from_raw(self.root), Signal::SIGKILL);
        self.shared.signal_all(Signal::SIGKILL);
    }

    pub(crate) fn mark_timed_out(&self) {
        self.shared.timed_out.store(true, Ordering::SeqCst);
    }

    /// Waits for the tracer to reap the whole tree and returns the trace.
    pub fn wait(mut self) -> Result<RunTrace, TraceError> {
        let thread = self.thread.take().expect("joined once");
        match thread.join() {
            Ok(r) => r,
            Err(_) => Err(TraceError::TracerFault("tracer thread panicked".into())),
        }
    }
}

impl Drop for TraceSession {
    fn drop(&mut self) {
        if let Some(thread) = self.thread.take() {
            self.kill();
            let _ = thread.join();
        }
    }
}

/// Runs `command` to completion under `policy`.
///
/// On timeout the tree is terminated and the returned trace has
/// `timed_out` set and `signaled` equal to the kill signal.
pub fn trace_run(
    command: TraceCommand,
    policy: &Policy,
    whitelist: &Whitelist,
    limits: TraceLimits,
    config: &InterposeConfig,
) -> Result<RunTrace, TraceError> {
    if limits.timeout.is_zero() {
        return Err(TraceError::InvalidRequest("timeout must be positive".into()));
    }
    let session = TraceSession::start(command, policy.clone(), whitelist.clone(), config.clone(), None)?;
    if !session.wait_timeout(limits.timeout) {
        session.mark_timed_out();
        session.terminate(limits.kill_grace);
    }
    session.wait()
}

struct Root {
    pid: Pid,
    argv0: String,
}

fn launch(command: TraceCommand) -> Result<Root, TraceError> {
    let mut cmd = Command::new(&command.argv[0]);
    cmd.args(&command.argv[1..])
        .envs(command.env.iter().map(|(k, v)| (k, v)))
        .stdin(Stdio::null())
        .process_group(0);
    if let Some(cwd) = &command.cwd {
        cmd.current_dir(cwd);
    }
    if let Some(out) = command.stdout {
        cmd.stdout(out);
    }
    if let Some(err) = command.stderr {
        cmd.stderr(err);
    }
    // SAFETY: ptrace(PTRACE_TRACEME) is async-signal-safe.
    unsafe {
        cmd.pre_exec(|| ptrace::traceme().map_err(io::Error::from));
    }
    let child = cmd.spawn().map_err(|source| TraceError::LaunchFailure {
        program: command.argv[0].clone(),
        source,
    })?;
    let pid = Pid::from_raw(child.id() as i32);
    // the Child handle is not used for waiting; the tracer reaps the pid
    drop(child);
    Ok(Root {
        pid,
        argv0: command.argv[0].clone(),
    })
}

#[derive(Debug, Default)]
struct ProcState {
    traced: bool,
    in_syscall: bool,
    /// Return value to inject at the next syscall-exit stop.
    pending: Option<i64>,
    /// Path named by the execve being executed, if readable.
    exec_path: Option<PathBuf>,
    /// Auto-attached child whose initial SIGSTOP has not been consumed.
    awaiting_attach_stop: bool,
}

struct Tracer {
    root: Pid,
    root_argv0: String,
    policy: Policy,
    whitelist: Whitelist,
    config: InterposeConfig,
    exit_hook: Option<ExitHook>,
    shared: Arc<Shared>,
    procs: HashMap<Pid, ProcState>,
    /// Children that stopped before their parent's fork event arrived.
    orphan_stops: BTreeSet<Pid>,
    first_exec_done: bool,
    ever_traced: BTreeSet<i32>,
    trace: RunTrace,
}

const WAIT_FLAGS: WaitPidFlag = WaitPidFlag::__WALL.union(WaitPidFlag::__WNOTHREAD);

impl Tracer {
    fn new(
        root: Root,
        policy: Policy,
        whitelist: Whitelist,
        config: InterposeConfig,
        exit_hook: Option<ExitHook>,
        shared: Arc<Shared>,
    ) -> Self {
        Self {
            root: root.pid,
            root_argv0: root.argv0,
            policy,
            whitelist,
            config,
            exit_hook,
            shared,
            procs: HashMap::new(),
            orphan_stops: BTreeSet::new(),
            first_exec_done: false,
            ever_traced: BTreeSet::new(),
            trace: RunTrace::default(),
        }
    }

    fn fault(&self, what: &str, errno: Errno) -> TraceError {
        TraceError::TracerFault(format!("{what}: {errno}"))
    }

    fn run(&mut self) -> Result<RunTrace, TraceError> {
        // the launched child stops with SIGTRAP right after its exec succeeds
        match waitpid(self.root, Some(WAIT_FLAGS)) {
            Ok(WaitStatus::Stopped(_, Signal::SIGTRAP)) => {}
            Ok(other) => {
                return Err(TraceError::TracerFault(format!("unexpected initial state {other:?}")));
            }
            Err(e) => return Err(self.fault("waiting for initial stop", e)),
        }
        ptrace::setoptions(
            self.root,
            Options::PTRACE_O_TRACESYSGOOD
                | Options::PTRACE_O_TRACEFORK
                | Options::PTRACE_O_TRACEVFORK
                | Options::PTRACE_O_TRACECLONE
                | Options::PTRACE_O_TRACEEXEC
                | Options::PTRACE_O_EXITKILL,
        )
        .map_err(|e| self.fault("setting trace options", e))?;
        self.shared.live.lock().unwrap().insert(self.root.as_raw());
        self.procs.insert(self.root, ProcState::default());
        let initial = self.exec_decision(self.root, Some(PathBuf::from(&self.root_argv0)));
        self.set_traced(self.root, initial == ExecDecision::Traced);
        self.resume(self.root, None)?;

        loop {
            let status = match waitpid(None, Some(WAIT_FLAGS)) {
                Ok(s) => s,
                Err(Errno::EINTR) => continue,
                Err(Errno::ECHILD) => break,
                Err(e) => return Err(self.fault("waitpid", e)),
            };
            self.handle(status)?;
            if self.procs.is_empty() && self.orphan_stops.is_empty() {
                break;
            }
        }
        if self.shared.timed_out.load(Ordering::SeqCst) {
            self.trace.timed_out = true;
            if self.trace.signaled.is_none() {
                self.trace.signaled = Some(Signal::SIGKILL as i32);
                self.trace.exit_code = 128 + Signal::SIGKILL as i32;
            }
        }
        self.trace.whitelisted_pids_seen = self.ever_traced.len() as u64;
        Ok(std::mem::take(&mut self.trace))
    }

    /// Reaps whatever is left after a fault.
    fn drain(&mut self) {
        loop {
            match waitpid(None, Some(WAIT_FLAGS)) {
                Ok(WaitStatus::Exited(pid, _)) | Ok(WaitStatus::Signaled(pid, _, _)) => {
                    self.forget(pid);
                }
                Ok(WaitStatus::StillAlive) => break,
                Ok(other) => {
                    if let Some(pid) = other.pid() {
                        let _ = ptrace::cont(pid, Signal::SIGKILL);
                    }
                }
                Err(Errno::EINTR) => continue,
                Err(_) => break,
            }
        }
    }

    fn set_traced(&mut self, pid: Pid, traced: bool) {
        if let Some(state) = self.procs.get_mut(&pid) {
            state.traced = traced;
        }
        let mut set = self.shared.traced.lock().unwrap();
        if traced {
            set.insert(pid.as_raw());
            self.ever_traced.insert(pid.as_raw());
        } else {
            set.remove(&pid.as_raw());
        }
    }

    fn forget(&mut self, pid: Pid) {
        self.procs.remove(&pid);
        self.orphan_stops.remove(&pid);
        self.shared.live.lock().unwrap().remove(&pid.as_raw());
        self.shared.traced.lock().unwrap().remove(&pid.as_raw());
    }

    fn resume(&self, pid: Pid, sig: Option<Signal>) -> Result<(), TraceError> {
        match ptrace::syscall(pid, sig) {
            Ok(()) | Err(Errno::ESRCH) => Ok(()),
            Err(e) => Err(self.fault("resuming tracee", e)),
        }
    }

    fn handle(&mut self, status: WaitStatus) -> Result<(), TraceError> {
        match status {
            WaitStatus::Exited(pid, code) => {
                if pid == self.root {
                    self.trace.exit_code = code;
                    *self.shared.root_exit.lock().unwrap() = Some(code);
                }
                self.forget(pid);
            }
            WaitStatus::Signaled(pid, sig, _) => {
                let traced = self.procs.get(&pid).is_some_and(|p| p.traced);
                if traced && !self.shared.tearing_down.load(Ordering::SeqCst) {
                    self.shared.crashed.store(true, Ordering::SeqCst);
                    self.trace.crashes.push((pid.as_raw(), sig as i32));
                }
                if pid == self.root {
                    self.trace.signaled = Some(sig as i32);
                    self.trace.exit_code = 128 + sig as i32;
                    *self.shared.root_exit.lock().unwrap() = Some(self.trace.exit_code);
                }
                self.forget(pid);
            }
            WaitStatus::PtraceSyscall(pid) => self.on_syscall_stop(pid)?,
            WaitStatus::PtraceEvent(pid, _, event) => self.on_event(pid, event)?,
            WaitStatus::Stopped(pid, sig) => self.on_signal_stop(pid, sig)?,
            WaitStatus::Continued(_) | WaitStatus::StillAlive => {}
        }
        Ok(())
    }

    fn on_signal_stop(&mut self, pid: Pid, sig: Signal) -> Result<(), TraceError> {
        match self.procs.get_mut(&pid) {
            None => {
                // new child reported before its parent's fork event
                self.orphan_stops.insert(pid);
                self.shared.live.lock().unwrap().insert(pid.as_raw());
                Ok(())
            }
            Some(state) if state.awaiting_attach_stop && sig == Signal::SIGSTOP => {
                state.awaiting_attach_stop = false;
                self.resume(pid, None)
            }
            Some(_) => {
                // group-stops have no siginfo; resume them without a signal
                let inject = match ptrace::getsiginfo(pid) {
                    Ok(_) => Some(sig),
                    Err(_) => None,
                };
                self.resume(pid, inject)
            }
        }
    }

    fn on_event(&mut self, pid: Pid, event: i32) -> Result<(), TraceError> {
        let fork_like = [Event::PTRACE_EVENT_FORK, Event::PTRACE_EVENT_VFORK, Event::PTRACE_EVENT_CLONE]
            .iter()
            .any(|e| *e as i32 == event);
        if fork_like {
            let child = match ptrace::getevent(pid) {
                Ok(raw) => Pid::from_raw(raw as i32),
                Err(Errno::ESRCH) => return Ok(()),
                Err(e) => return Err(self.fault("reading fork event", e)),
            };
            let parent_traced = self.procs.get(&pid).is_some_and(|p| p.traced);
            self.shared.live.lock().unwrap().insert(child.as_raw());
            let already_stopped = self.orphan_stops.remove(&child);
            self.procs.insert(
                child,
                ProcState {
                    awaiting_attach_stop: !already_stopped,
                    ..Default::default()
                },
            );
            self.set_traced(child, parent_traced);
            if already_stopped {
                self.resume(child, None)?;
            }
        } else if event == Event::PTRACE_EVENT_EXEC as i32 {
            // a non-leader thread exec'ing takes over the leader's pid
            if let Ok(former) = ptrace::getevent(pid) {
                let former = Pid::from_raw(former as i32);
                if former != pid {
                    if let Some(state) = self.procs.remove(&former) {
                        self.procs.insert(pid, state);
                    }
                    self.shared.live.lock().unwrap().remove(&former.as_raw());
                }
            }
            let hint = self.procs.get_mut(&pid).and_then(|p| p.exec_path.take());
            let decision = self.exec_decision(pid, hint);
            self.set_traced(pid, decision == ExecDecision::Traced);
            debug!("exec in {pid}: {decision:?}");
        }
        self.resume(pid, None)
    }

    fn exec_decision(&mut self, pid: Pid, named_path: Option<PathBuf>) -> ExecDecision {
        let first = !self.first_exec_done;
        self.first_exec_done = true;
        if self.whitelist.is_empty() {
            return resolve_exec(Path::new("/"), &self.whitelist, first);
        }
        // scripts run through an interpreter: match either the named file or the loaded image
        let mut candidates = Vec::new();
        if let Some(p) = named_path {
            candidates.push(p);
        }
        match std::fs::read_link(format!("/proc/{pid}/exe")) {
            Ok(exe) => candidates.push(exe),
            Err(e) => self.trace.warnings.push(format!("pid {pid}: cannot read exe link: {e}")),
        }
        let traced = candidates
            .iter()
            .any(|c| resolve_exec(c, &self.whitelist, first) == ExecDecision::Traced);
        if traced {
            ExecDecision::Traced
        } else {
            ExecDecision::Ignored
        }
    }

    fn on_syscall_stop(&mut self, pid: Pid) -> Result<(), TraceError> {
        let Some(state) = self.procs.get_mut(&pid) else {
            return self.resume(pid, None);
        };
        if state.in_syscall {
            state.in_syscall = false;
            if let Some(value) = state.pending.take() {
                match ptrace::getregs(pid) {
                    Ok(mut regs) => {
                        regs.rax = value as u64;
                        match ptrace::setregs(pid, regs) {
                            Ok(()) | Err(Errno::ESRCH) => {}
                            Err(e) => return Err(self.fault("writing return value", e)),
                        }
                    }
                    Err(Errno::ESRCH) => return Ok(()),
                    Err(e) => return Err(self.fault("reading registers at exit", e)),
                }
            }
            return self.resume(pid, None);
        }
        state.in_syscall = true;
        let traced = state.traced;
        let mut regs = match ptrace::getregs(pid) {
            Ok(r) => r,
            Err(Errno::ESRCH) => return Ok(()),
            Err(e) => return Err(self.fault("reading registers at entry", e)),
        };
        let nr = regs.orig_rax;
        let args = [regs.rdi, regs.rsi, regs.rdx, regs.r10, regs.r8, regs.r9];
        if nr == SYS_EXECVE {
            let path = read_cstring(pid, args[0]).map(|p| absolutize(pid, &p));
            if let Some(state) = self.procs.get_mut(&pid) {
                state.exec_path = path;
            }
        }
        if !traced {
            return self.resume(pid, None);
        }
        let classified = classify_feature(nr, &args, &self.config, |addr| read_cstring(pid, addr));
        if classified.unreadable_path {
            self.trace
                .warnings
                .push(format!("pid {pid}: unreadable path argument for syscall {nr}"));
        }
        let feature = classified.feature;
        let action = self.policy.action_for(&feature);
        *self.trace.observed.entry(feature.clone()).or_insert(0) += 1;
        self.trace.decisions.insert(feature, action);
        if let Some(value) = action.injected_return() {
            regs.orig_rax = u64::MAX;
            match ptrace::setregs(pid, regs) {
                Ok(()) => {}
                Err(Errno::ESRCH) => return Ok(()),
                Err(e) => return Err(self.fault("suppressing syscall", e)),
            }
            if let Some(state) = self.procs.get_mut(&pid) {
                state.pending = Some(value);
            }
        } else if nr == SYS_EXIT_GROUP || nr == SYS_EXIT {
            if let Some(hook) = &self.exit_hook {
                hook(pid.as_raw());
            }
        }
        self.resume(pid, None)
    }
}

fn absolutize(pid: Pid, path: &str) -> PathBuf {
    let p = PathBuf::from(path);
    if p.is_absolute() {
        return p;
    }
    match std::fs::read_link(format!("/proc/{pid}/cwd")) {
        Ok(cwd) => cwd.join(p),
        Err(_) => p,
    }
}

/// Reads a NUL-terminated string (at most 4 KiB) from tracee memory.
fn read_cstring(pid: Pid, addr: u64) -> Option<String> {
    if addr == 0 {
        return None;
    }
    let mem = File::open(format!("/proc/{pid}/mem")).ok()?;
    let mut out = Vec::new();
    let mut cursor = addr;
    while out.len() < 4096 {
        // never read across a page boundary in one go
        let room = 4096 - (cursor % 4096) as usize;
        let mut buf = vec![0u8; room.min(4096 - out.len())];
        let n = mem.read_at(&mut buf, cursor).ok()?;
        if n == 0 {
            return None;
        }
        if let Some(end) = buf[..n].iter().position(|&b| b == 0) {
            out.extend_from_slice(&buf[..end]);
            return Some(String::from_utf8_lossy(&out).into_owned());
        }
        out.extend_from_slice(&buf[..n]);
        cursor += n as u64;
    }
    None
}
