//! Dynamic analysis of the system calls an application needs.
//!
//! Runs an application under ptrace, stubs or fakes each observed feature in
//! turn, and classifies every feature as required, stubbable, fakeable or
//! either. A directory database of such profiles feeds an incremental
//! support planner for compatibility layers.

pub mod cli;
pub mod feature;
pub mod harness;
pub mod interposer;
pub mod orchestrator;
pub mod planner;
pub mod policy;
mod serde_util;
pub mod store;
pub mod syscalls;

pub use feature::{classify_feature, FeatureId, InterposeConfig};
pub use interposer::{resolve_exec, trace_run, ExecDecision, RunTrace, TraceCommand, TraceLimits, TraceSession, Whitelist};
pub use orchestrator::{AnalysisConfig, AnalysisError, AppProfile, FeatureClass, Mode, Orchestrator, Verdict};
pub use policy::{Action, Policy};
pub use store::{DbEntry, OsSupportSet, Provenance};
