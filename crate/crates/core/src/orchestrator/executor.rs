//! Where a single workload execution happens.

use std::io;
use std::process::{Command, Stdio};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::feature::InterposeConfig;
use crate::harness::{run_workload, AppSpec, HarnessError, RunContext, RunLimits, WorkloadOutcome};
use crate::interposer::RunTrace;
use crate::policy::Policy;

/// Runs one replica of a workload under a policy.
///
/// Implementations must keep concurrent executions isolated from each other.
pub trait Executor: Send + Sync {
    fn execute(
        &self,
        spec: &AppSpec,
        policy: &Policy,
        config: &InterposeConfig,
        limits: &RunLimits,
    ) -> Result<(WorkloadOutcome, RunTrace), HarnessError>;
}

/// In-process-tree isolation: fresh working directory and private port per run.
#[derive(Debug, Clone, Default)]
pub struct LocalExecutor {
    pub ctx: RunContext,
}

impl Executor for LocalExecutor {
    fn execute(
        &self,
        spec: &AppSpec,
        policy: &Policy,
        config: &InterposeConfig,
        limits: &RunLimits,
    ) -> Result<(WorkloadOutcome, RunTrace), HarnessError> {
        run_workload(spec, policy, config, limits, &self.ctx)
    }
}

/// Output of `syslens probe --json`, also the wire format of [`CommandExecutor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub outcome: WorkloadOutcome,
    pub trace: RunTrace,
}

/// Delegates each run to an external command, typically a container runtime
/// invoking `syslens probe --json` inside the image.
///
/// Template arguments may contain `{policy}` (path of a JSON policy file)
/// and `{timeout}` (seconds). The command must print a [`ProbeRecord`].
#[derive(Debug, Clone)]
pub struct CommandExecutor {
    pub template: Vec<String>,
}

impl CommandExecutor {
    pub fn new(template: Vec<String>) -> Self {
        Self { template }
    }
}

impl CommandExecutor {
    fn run(&self, policy: &Policy, limits: &RunLimits) -> anyhow::Result<ProbeRecord> {
        let (program, args) = self.template.split_first().context("empty executor template")?;
        let mut file = tempfile::Builder::new()
            .prefix("syslens-policy-")
            .suffix(".json")
            .tempfile()
            .context("creating policy file")?;
        io::Write::write_all(&mut file, policy.to_json().as_bytes()).context("writing policy file")?;
        let policy_path = file.path().display().to_string();
        let timeout = limits.timeout.as_secs_f64().to_string();
        let expand = |a: &String| a.replace("{policy}", &policy_path).replace("{timeout}", &timeout);
        let out = Command::new(expand(program))
            .args(args.iter().map(expand))
            .stdin(Stdio::null())
            .stderr(Stdio::inherit())
            .output()
            .with_context(|| format!("running {program}"))?;
        if !out.status.success() {
            bail!("{program} exited with {}", out.status);
        }
        serde_json::from_slice(&out.stdout).context("unreadable probe record")
    }
}

impl Executor for CommandExecutor {
    fn execute(
        &self,
        _spec: &AppSpec,
        policy: &Policy,
        _config: &InterposeConfig,
        limits: &RunLimits,
    ) -> Result<(WorkloadOutcome, RunTrace), HarnessError> {
        let record = self.run(policy, limits).map_err(HarnessError::Executor)?;
        Ok((record.outcome, record.trace))
    }
}
