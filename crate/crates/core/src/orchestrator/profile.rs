use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::regression::RegressionFlag;
use crate::feature::FeatureId;
use crate::syscalls;

pub const PROFILE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Stub,
    Fake,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Stub => "stub",
            Mode::Fake => "fake",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Works,
    Breaks,
}

impl Verdict {
    pub fn works(self) -> bool {
        self == Verdict::Works
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.works() { "works" } else { "breaks" })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureClass {
    /// Neither stubbing nor faking keeps the workload passing.
    Required,
    StubOnly,
    FakeOnly,
    /// Both stubbing and faking work.
    Any,
}

impl FeatureClass {
    pub fn from_verdicts(stub: Verdict, fake: Verdict) -> Self {
        match (stub.works(), fake.works()) {
            (false, false) => FeatureClass::Required,
            (true, false) => FeatureClass::StubOnly,
            (false, true) => FeatureClass::FakeOnly,
            (true, true) => FeatureClass::Any,
        }
    }

    pub fn stubbable(self) -> bool {
        matches!(self, FeatureClass::StubOnly | FeatureClass::Any)
    }

    pub fn fakeable(self) -> bool {
        matches!(self, FeatureClass::FakeOnly | FeatureClass::Any)
    }

    /// Short label used in tables and CSV exports.
    pub fn label(self) -> &'static str {
        match self {
            FeatureClass::Required => "required",
            FeatureClass::StubOnly => "stub",
            FeatureClass::FakeOnly => "fake",
            FeatureClass::Any => "any",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileMetadata {
    pub kernel: String,
    pub tool_version: String,
    pub date: String,
    pub replicas: u32,
    pub parallelism: u32,
}

impl ProfileMetadata {
    pub fn current(replicas: u32, parallelism: u32) -> Self {
        Self {
            kernel: kernel_release(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            date: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            replicas,
            parallelism,
        }
    }
}

pub fn kernel_release() -> String {
    std::fs::read_to_string("/proc/sys/kernel/osrelease")
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|_| "unknown".into())
}

/// Classification of every feature a workload exercised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppProfile {
    pub schema: u32,
    pub app: String,
    /// Content hash of the application spec and test script.
    pub workload: String,
    pub observed: BTreeSet<FeatureId>,
    #[serde(with = "crate::serde_util::map_as_list")]
    pub classes: BTreeMap<FeatureId, FeatureClass>,
    /// Only probes with at least one flagged metric appear.
    #[serde(with = "crate::serde_util::map_as_list")]
    pub regressions: BTreeMap<(FeatureId, Mode), Vec<RegressionFlag>>,
    pub confirmed: bool,
    pub metadata: ProfileMetadata,
}

impl AppProfile {
    pub fn class_of(&self, feature: &FeatureId) -> Option<FeatureClass> {
        self.classes.get(feature).copied()
    }

    /// Distinct syscall numbers among observed features.
    pub fn traced_syscalls(&self) -> BTreeSet<u64> {
        self.observed.iter().map(|f| f.syscall_nr).collect()
    }

    /// Syscalls with at least one required feature.
    pub fn required_syscalls(&self) -> BTreeSet<u64> {
        self.classes
            .iter()
            .filter(|(_, c)| **c == FeatureClass::Required)
            .map(|(f, _)| f.syscall_nr)
            .collect()
    }

    /// Checks the structural invariants: classes cover exactly the observed
    /// set, and required syscalls are a subset of traced ones.
    pub fn check(&self) -> Result<(), String> {
        if self.schema != PROFILE_SCHEMA {
            return Err(format!("unsupported profile schema {}", self.schema));
        }
        let domain: BTreeSet<&FeatureId> = self.classes.keys().collect();
        let observed: BTreeSet<&FeatureId> = self.observed.iter().collect();
        if domain != observed {
            return Err("classified features differ from observed features".into());
        }
        if !self.required_syscalls().is_subset(&self.traced_syscalls()) {
            return Err("required syscalls not contained in traced syscalls".into());
        }
        for (feature, _) in self.regressions.keys() {
            if !self.observed.contains(feature) {
                return Err(format!("regression recorded for unobserved feature {feature}"));
            }
        }
        Ok(())
    }

    /// Plain-text classification table, one row per feature.
    pub fn render_table(&self) -> String {
        let mut rows = vec![["feature".to_string(), "nr".into(), "class".into(), "regressions".into()]];
        for (feature, class) in &self.classes {
            let mut notes = Vec::new();
            for mode in [Mode::Stub, Mode::Fake] {
                if let Some(flags) = self.regressions.get(&(feature.clone(), mode)) {
                    for flag in flags {
                        notes.push(format!("{mode}:{:?}{:+.1}%", flag.metric, flag.delta * 100.0).to_lowercase());
                    }
                }
            }
            rows.push([
                feature.to_string(),
                feature.syscall_nr.to_string(),
                class.label().to_string(),
                notes.join(" "),
            ]);
        }
        let widths: Vec<usize> = (0..4).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &rows {
            let line = row
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ");
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }

    pub fn syscall_name(nr: u64) -> String {
        syscalls::table().display_name(nr)
    }
}
