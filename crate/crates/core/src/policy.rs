//! Per-feature interposition decisions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::feature::{FeatureId, InterposeConfig};
use crate::syscalls::ENOSYS_RETURN;

/// What happens to a call when it is intercepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    /// Let the kernel run the call.
    Allow,
    /// Suppress the call and return `-ENOSYS`.
    Stub,
    /// Suppress the call and return the given value.
    Fake(i64),
}

impl Action {
    /// Value written to the return register, `None` for `Allow`.
    pub fn injected_return(self) -> Option<i64> {
        match self {
            Action::Allow => None,
            Action::Stub => Some(ENOSYS_RETURN),
            Action::Fake(v) => Some(v),
        }
    }

    pub fn suppresses(self) -> bool {
        !matches!(self, Action::Allow)
    }
}

/// Decision table: `Allow` unless overridden.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Policy {
    overrides: BTreeMap<FeatureId, Action>,
}

impl Policy {
    pub fn allow_all() -> Self {
        Self::default()
    }

    pub fn set(&mut self, feature: FeatureId, action: Action) -> &mut Self {
        if action == Action::Allow {
            self.overrides.remove(&feature);
        } else {
            self.overrides.insert(feature, action);
        }
        self
    }

    pub fn stub(&mut self, feature: FeatureId) -> &mut Self {
        self.set(feature, Action::Stub)
    }

    /// Fakes `feature` with the configured success value for its syscall.
    pub fn fake(&mut self, feature: FeatureId, config: &InterposeConfig) -> &mut Self {
        let value = config.fake_value(feature.syscall_nr);
        self.set(feature, Action::Fake(value))
    }

    pub fn action_for(&self, feature: &FeatureId) -> Action {
        self.overrides.get(feature).copied().unwrap_or(Action::Allow)
    }

    pub fn overrides(&self) -> &BTreeMap<FeatureId, Action> {
        &self.overrides
    }

    pub fn is_allow_all(&self) -> bool {
        self.overrides.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyEntry {
    feature: String,
    action: Action,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct PolicyDocument {
    #[serde(default)]
    overrides: Vec<PolicyEntry>,
}

impl Policy {
    /// Parses a policy document:
    /// `{"overrides": [{"feature": "prctl", "action": {"fake": 0}}, {"feature": "openat</dev>", "action": "stub"}]}`
    pub fn from_json(text: &str) -> Result<Self, String> {
        let doc: PolicyDocument = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut policy = Policy::default();
        for entry in doc.overrides {
            let feature = FeatureId::parse(&entry.feature)
                .ok_or_else(|| format!("unknown feature {:?}", entry.feature))?;
            policy.set(feature, entry.action);
        }
        Ok(policy)
    }

    pub fn to_json(&self) -> String {
        let doc = PolicyDocument {
            overrides: self
                .overrides
                .iter()
                .map(|(f, a)| PolicyEntry {
                    feature: f.to_string(),
                    action: *a,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("policy serializes")
    }
}
