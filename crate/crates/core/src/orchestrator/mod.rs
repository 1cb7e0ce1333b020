//! The analysis protocol: discovery, per-feature stub and fake probes,
//! replica merging, a combined confirmation run and regression detection.

mod executor;
mod profile;
mod regression;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use executor::{CommandExecutor, Executor, LocalExecutor, ProbeRecord};
pub use profile::{kernel_release, AppProfile, FeatureClass, Mode, ProfileMetadata, Verdict, PROFILE_SCHEMA};
pub use regression::{detect_regressions, BaselineStats, Metric, MetricStats, RegressionCheck, RegressionFlag};

use crate::feature::{FeatureId, InterposeConfig};
use crate::harness::{AppSpec, HarnessError, OutcomeReason, Readiness, RunLimits, WorkloadOutcome};
use crate::interposer::RunTrace;
use crate::policy::Policy;
use crate::store::{self, DbEntry, Provenance, StoreError};

/// Timeout for runs before the workload duration is known.
pub const DISCOVERY_TIMEOUT: Duration = Duration::from_secs(120);
/// Probe runs get this many times the longest baseline run, at least [`MIN_PROBE_TIMEOUT`].
pub const PROBE_TIMEOUT_FACTOR: f64 = 3.0;
pub const MIN_PROBE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub replicas: u32,
    pub parallelism: u32,
    /// Runs per statistic when regression detection is on.
    pub perf_runs: u32,
    pub subfeatures: bool,
    pub pseudofiles: bool,
    pub perf_margin: f64,
    pub detect_regressions: bool,
    /// Fixed per-run timeout; derived from the baseline when `None`.
    pub timeout: Option<Duration>,
    pub kill_grace: Duration,
    pub sample_period: Duration,
    pub interpose: InterposeConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let limits = RunLimits::default();
        Self {
            replicas: 3,
            parallelism: 1,
            perf_runs: 10,
            subfeatures: false,
            pseudofiles: false,
            perf_margin: 0.03,
            detect_regressions: false,
            timeout: None,
            kill_grace: limits.kill_grace,
            sample_period: limits.sample_period,
            interpose: InterposeConfig::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: String| Err(AnalysisError::InvalidConfig(m));
        if self.replicas < 1 {
            return bad("replicas must be at least 1".into());
        }
        if self.parallelism < 1 || self.parallelism > self.replicas {
            return bad(format!("parallelism must be between 1 and replicas ({})", self.replicas));
        }
        if self.perf_margin.is_nan() || self.perf_margin <= 0.0 {
            return bad("perf margin must be positive".into());
        }
        if self.detect_regressions && self.perf_runs < 2 {
            return bad("regression detection needs at least 2 perf runs".into());
        }
        Ok(())
    }

    /// Interposition settings with sub-feature and pseudo-file keying applied.
    pub fn effective_interpose(&self) -> InterposeConfig {
        self.interpose.restricted(self.subfeatures, self.pseudofiles)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("invalid analysis configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("baseline failure: unmodified workload failed in replica {replica} ({reason:?})")]
    BaselineFailure { replica: u32, reason: OutcomeReason },
    #[error("tracer fault during {context} (after one retry)")]
    TracerFault { context: String },
    #[error("inconsistent profile for {}: combined confirmation run failed", .0.profile.app)]
    Inconsistent(Box<AnalysisReport>),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Replica results of one feature/mode probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub feature: FeatureId,
    pub mode: Mode,
    pub outcomes: Vec<WorkloadOutcome>,
    pub verdict: Verdict,
    pub regression: Option<RegressionCheck>,
}

/// Workload executions, by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    /// discovery + stub/fake probes + confirmation
    pub analysis: u64,
    /// extra allow-all runs for baseline statistics
    pub baseline: u64,
    /// extra runs of working probes for regression statistics
    pub perf: u64,
    /// re-runs after tracer faults
    pub retries: u64,
    /// `probe_custom` runs
    pub custom: u64,
}

impl RunCounts {
    pub fn total(&self) -> u64 {
        self.analysis + self.baseline + self.perf + self.retries + self.custom
    }
}

#[derive(Debug, Default)]
struct Counters {
    analysis: AtomicU64,
    baseline: AtomicU64,
    perf: AtomicU64,
    retries: AtomicU64,
    custom: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Discovery,
    Baseline,
    Probe,
    Perf,
    Confirmation,
    Custom,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Discovery => "discovery",
            Phase::Baseline => "baseline",
            Phase::Probe => "probe",
            Phase::Perf => "perf",
            Phase::Confirmation => "confirm",
            Phase::Custom => "custom",
        }
    }
}

/// Everything a full analysis produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub profile: AppProfile,
    pub probes: Vec<ProbeResult>,
    pub confirmation: Vec<WorkloadOutcome>,
    pub baseline: BaselineStats,
    pub counts: RunCounts,
    pub stored_at: Option<PathBuf>,
    pub hint: Option<String>,
}

/// Result of the discovery phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    /// Union over replicas.
    pub features: BTreeSet<FeatureId>,
    pub outcomes: Vec<WorkloadOutcome>,
    pub baseline: BaselineStats,
}

pub type ProgressSink = Box<dyn Fn(&str) + Send + Sync>;

/// Runs the protocol for one application spec.
pub struct Orchestrator {
    spec: AppSpec,
    config: AnalysisConfig,
    interpose: InterposeConfig,
    executor: Box<dyn Executor>,
    db_root: Option<PathBuf>,
    submitter: String,
    progress: Option<ProgressSink>,
    counters: Counters,
    log: Mutex<Vec<String>>,
}

impl Orchestrator {
    pub fn new(spec: AppSpec, config: AnalysisConfig) -> Result<Self, AnalysisError> {
        config.validate()?;
        spec.validate()?;
        if config.parallelism > 1 && matches!(spec.readiness, Readiness::Port(Some(_))) {
            return Err(AnalysisError::InvalidConfig(
                "parallel replicas need a private port per run; use an automatic port".into(),
            ));
        }
        Ok(Self {
            interpose: config.effective_interpose(),
            spec,
            config,
            executor: Box::new(LocalExecutor::default()),
            db_root: None,
            submitter: std::env::var("USER").unwrap_or_else(|_| "unknown".into()),
            progress: None,
            counters: Counters::default(),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn with_executor(mut self, executor: Box<dyn Executor>) -> Self {
        self.executor = executor;
        self
    }

    /// Persist profiles produced by [`full_analysis`](Self::full_analysis) under `db_root`.
    pub fn with_store(mut self, db_root: impl Into<PathBuf>) -> Self {
        self.db_root = Some(db_root.into());
        self
    }

    pub fn with_submitter(mut self, submitter: impl Into<String>) -> Self {
        self.submitter = submitter.into();
        self
    }

    pub fn with_progress(mut self, sink: ProgressSink) -> Self {
        self.progress = Some(sink);
        self
    }

    pub fn spec(&self) -> &AppSpec {
        &self.spec
    }

    pub fn config(&self) -> &AnalysisConfig {
        &self.config
    }

    pub fn counts(&self) -> RunCounts {
        let c = &self.counters;
        RunCounts {
            analysis: c.analysis.load(Ordering::SeqCst),
            baseline: c.baseline.load(Ordering::SeqCst),
            perf: c.perf.load(Ordering::SeqCst),
            retries: c.retries.load(Ordering::SeqCst),
            custom: c.custom.load(Ordering::SeqCst),
        }
    }

    /// Progress lines emitted so far.
    pub fn progress_log(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }

    fn limits(&self, timeout: Duration) -> RunLimits {
        RunLimits {
            timeout,
            kill_grace: self.config.kill_grace,
            sample_period: self.config.sample_period,
        }
    }

    fn discovery_limits(&self) -> RunLimits {
        self.limits(self.config.timeout.unwrap_or(DISCOVERY_TIMEOUT))
    }

    fn probe_limits(&self, baseline: &BaselineStats) -> RunLimits {
        let derived = Duration::from_secs_f64(baseline.max_duration * PROBE_TIMEOUT_FACTOR).max(MIN_PROBE_TIMEOUT);
        self.limits(self.config.timeout.unwrap_or(derived))
    }

    fn emit(&self, line: String) {
        log::info!("{line}");
        if let Some(sink) = &self.progress {
            sink(&line);
        }
        self.log.lock().unwrap().push(line);
    }

    fn count(&self, phase: Phase) {
        let c = &self.counters;
        let counter = match phase {
            Phase::Discovery | Phase::Probe | Phase::Confirmation => &c.analysis,
            Phase::Baseline => &c.baseline,
            Phase::Perf => &c.perf,
            Phase::Custom => &c.custom,
        };
        counter.fetch_add(1, Ordering::SeqCst);
    }

    /// One execution, re-run once on a tracer fault.
    fn run_one(
        &self,
        phase: Phase,
        policy: &Policy,
        limits: &RunLimits,
        replica: usize,
        of: usize,
        label: &str,
    ) -> Result<(WorkloadOutcome, RunTrace), AnalysisError> {
        self.count(phase);
        let mut attempt = self.executor.execute(&self.spec, policy, &self.interpose, limits)?;
        if attempt.0.reason == OutcomeReason::TracerFault {
            self.counters.retries.fetch_add(1, Ordering::SeqCst);
            self.emit(format!(
                "phase={} replica={}/{of} {label} tracer fault, retrying",
                phase.name(),
                replica + 1
            ));
            attempt = self.executor.execute(&self.spec, policy, &self.interpose, limits)?;
            if attempt.0.reason == OutcomeReason::TracerFault {
                return Err(AnalysisError::TracerFault {
                    context: format!("{} {label}", phase.name()),
                });
            }
        }
        let o = &attempt.0;
        let verdict = if o.success { Verdict::Works } else { Verdict::Breaks };
        self.emit(format!(
            "phase={} replica={}/{of} {label} verdict={verdict} reason={} duration={:.3}s",
            phase.name(),
            replica + 1,
            serde_json::to_value(o.reason).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            o.duration
        ));
        Ok(attempt)
    }

    /// `count` executions in waves of at most `parallelism`.
    fn run_batch(
        &self,
        phase: Phase,
        policy: &Policy,
        limits: &RunLimits,
        count: usize,
        label: &str,
    ) -> Result<Vec<(WorkloadOutcome, RunTrace)>, AnalysisError> {
        let wave = self.config.parallelism.max(1) as usize;
        let mut results = Vec::with_capacity(count);
        let mut start = 0;
        while start < count {
            let end = (start + wave).min(count);
            if end - start == 1 {
                results.push(self.run_one(phase, policy, limits, start, count, label)?);
            } else {
                let batch: Vec<_> = std::thread::scope(|s| {
                    let handles: Vec<_> = (start..end)
                        .map(|i| s.spawn(move || self.run_one(phase, policy, limits, i, count, label)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("replica thread panicked"))
                        .collect()
                });
                for r in batch {
                    results.push(r?);
                }
            }
            start = end;
        }
        Ok(results)
    }

    /// Allow-all runs; the union of features seen across `replicas` successful runs.
    pub fn discover(&self) -> Result<Discovery, AnalysisError> {
        let r = self.config.replicas as usize;
        let limits = self.discovery_limits();
        let policy = Policy::allow_all();
        let runs = self.run_batch(Phase::Discovery, &policy, &limits, r, "feature=- mode=allow")?;
        let mut features = BTreeSet::new();
        let mut outcomes = Vec::with_capacity(r);
        for (i, (outcome, trace)) in runs.into_iter().enumerate() {
            if !outcome.success {
                return Err(AnalysisError::BaselineFailure {
                    replica: i as u32 + 1,
                    reason: outcome.reason,
                });
            }
            features.extend(trace.features());
            outcomes.push(outcome);
        }
        let mut stats_input = outcomes.clone();
        if self.config.detect_regressions {
            let extra = (self.config.perf_runs as usize).saturating_sub(r);
            let more = self.run_batch(Phase::Baseline, &policy, &limits, extra, "feature=- mode=allow")?;
            for (i, (outcome, _)) in more.into_iter().enumerate() {
                if !outcome.success {
                    return Err(AnalysisError::BaselineFailure {
                        replica: (r + i) as u32 + 1,
                        reason: outcome.reason,
                    });
                }
                stats_input.push(outcome);
            }
        }
        Ok(Discovery {
            features,
            baseline: BaselineStats::from_outcomes(&stats_input),
            outcomes,
        })
    }

    /// Runs every replica with `feature` stubbed or faked.
    ///
    /// `baseline` drives the probe timeout and, when regression detection is
    /// on, the comparison for working probes.
    pub fn probe_feature(
        &self,
        feature: &FeatureId,
        mode: Mode,
        baseline: &BaselineStats,
    ) -> Result<ProbeResult, AnalysisError> {
        let mut policy = Policy::allow_all();
        match mode {
            Mode::Stub => policy.stub(feature.clone()),
            Mode::Fake => policy.fake(feature.clone(), &self.interpose),
        };
        let limits = self.probe_limits(baseline);
        let label = format!("feature={feature} mode={mode}");
        let r = self.config.replicas as usize;
        let outcomes: Vec<WorkloadOutcome> = self
            .run_batch(Phase::Probe, &policy, &limits, r, &label)?
            .into_iter()
            .map(|(o, _)| o)
            .collect();
        let verdict = if outcomes.iter().all(|o| o.success) {
            Verdict::Works
        } else {
            Verdict::Breaks
        };
        let regression = if self.config.detect_regressions && verdict.works() {
            let extra = (self.config.perf_runs as usize).saturating_sub(r);
            let mut samples = outcomes.clone();
            samples.extend(
                self.run_batch(Phase::Perf, &policy, &limits, extra, &label)?
                    .into_iter()
                    .map(|(o, _)| o),
            );
            Some(detect_regressions(baseline, &samples, self.config.perf_margin))
        } else {
            None
        };
        Ok(ProbeResult {
            feature: feature.clone(),
            mode,
            outcomes,
            verdict,
            regression,
        })
    }

    /// Single run under an arbitrary policy, for manual culprit hunting.
    pub fn probe_custom(&self, policy: &Policy) -> Result<(WorkloadOutcome, RunTrace), AnalysisError> {
        self.run_one(Phase::Custom, policy, &self.discovery_limits(), 0, 1, "feature=* mode=custom")
    }

    /// Policy of the combined confirmation run.
    pub fn confirmation_policy(&self, classes: &BTreeMap<FeatureId, FeatureClass>) -> Policy {
        let mut policy = Policy::allow_all();
        for (feature, class) in classes {
            match class {
                FeatureClass::StubOnly | FeatureClass::Any => {
                    policy.stub(feature.clone());
                }
                FeatureClass::FakeOnly => {
                    policy.fake(feature.clone(), &self.interpose);
                }
                FeatureClass::Required => {}
            }
        }
        policy
    }

    /// Discovery, stub and fake probes for every feature, then the combined
    /// confirmation run. Exactly `(2 + 2s)·r` analysis executions.
    ///
    /// A failed confirmation run still yields a stored profile (with
    /// `confirmed = false`), returned inside [`AnalysisError::Inconsistent`].
    pub fn full_analysis(&self) -> Result<AnalysisReport, AnalysisError> {
        let workload = self.spec.workload_hash()?;
        let discovery = self.discover()?;
        self.emit(format!(
            "discovered {} features, longest baseline run {:.3}s",
            discovery.features.len(),
            discovery.baseline.max_duration
        ));

        let mut probes = Vec::with_capacity(discovery.features.len() * 2);
        let mut classes = BTreeMap::new();
        let mut regressions = BTreeMap::new();
        for feature in &discovery.features {
            let stub = self.probe_feature(feature, Mode::Stub, &discovery.baseline)?;
            let fake = self.probe_feature(feature, Mode::Fake, &discovery.baseline)?;
            classes.insert(feature.clone(), FeatureClass::from_verdicts(stub.verdict, fake.verdict));
            for probe in [&stub, &fake] {
                if let Some(check) = &probe.regression {
                    if !check.flags.is_empty() {
                        regressions.insert((feature.clone(), probe.mode), check.flags.clone());
                    }
                }
            }
            probes.push(stub);
            probes.push(fake);
        }

        let policy = self.confirmation_policy(&classes);
        let limits = self.probe_limits(&discovery.baseline);
        let confirmation: Vec<WorkloadOutcome> = self
            .run_batch(Phase::Confirmation, &policy, &limits, self.config.replicas as usize, "feature=* mode=combined")?
            .into_iter()
            .map(|(o, _)| o)
            .collect();
        let confirmed = confirmation.iter().all(|o| o.success);

        let profile = AppProfile {
            schema: PROFILE_SCHEMA,
            app: self.spec.name.clone(),
            workload,
            observed: discovery.features,
            classes,
            regressions,
            confirmed,
            metadata: ProfileMetadata::current(self.config.replicas, self.config.parallelism),
        };
        debug_assert_eq!(profile.check(), Ok(()));

        let stored_at = match &self.db_root {
            Some(root) => {
                let entry = DbEntry {
                    provenance: Provenance::for_profile(&profile, &self.submitter),
                    profile: profile.clone(),
                };
                Some(store::save_profile(root, &entry)?)
            }
            None => None,
        };
        let hint = (!confirmed).then(|| {
            "stubs/fakes interact: probe subsets of the combined policy with `syslens probe --policy <file>`".to_string()
        });
        let report = AnalysisReport {
            profile,
            probes,
            confirmation,
            baseline: discovery.baseline,
            counts: self.counts(),
            stored_at,
            hint,
        };
        if confirmed {
            Ok(report)
        } else {
            Err(AnalysisError::Inconsistent(Box::new(report)))
        }
    }
}
