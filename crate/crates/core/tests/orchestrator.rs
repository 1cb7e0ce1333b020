mod common;

use std::path::Path;
use std::time::Duration;

use common::{fixture, fixture_with, nr, script};
use syslens::harness::AppSpec;
use syslens::orchestrator::{AnalysisError, FeatureClass, Mode};
use syslens::{AnalysisConfig, FeatureId, Orchestrator, Policy};

const OK_AND_READY: &str = r#"test "$SLENS_APP_EXIT" = 0 && grep -q ready app.stdout"#;

fn spec(dir: &Path, bin: &Path, check: &str) -> AppSpec {
    let s = script(dir, "check.sh", check);
    AppSpec::new("fixture", vec![bin.display().to_string()], s)
}

fn config(r: u32) -> AnalysisConfig {
    AnalysisConfig {
        replicas: r,
        timeout: Some(Duration::from_secs(20)),
        kill_grace: Duration::from_millis(200),
        sample_period: Duration::from_millis(20),
        ..Default::default()
    }
}

fn class(report: &syslens::orchestrator::AnalysisReport, name: &str) -> FeatureClass {
    report.profile.classes[&FeatureId::syscall(nr(name))]
}

#[test]
fn getrlimit_fallback_is_stubbable() {
    let dir = tempfile::tempdir().unwrap();
    let o = Orchestrator::new(spec(dir.path(), &fixture("getrlimit_fallback"), OK_AND_READY), config(1)).unwrap();
    let report = o.full_analysis().unwrap();
    assert!(class(&report, "getrlimit").stubbable());
    assert_eq!(class(&report, "write"), FeatureClass::Required);
    assert_eq!(class(&report, "exit_group"), FeatureClass::Required);
    assert!(report.profile.confirmed);
}

#[test]
fn prctl_keepcaps_is_fake_only() {
    let dir = tempfile::tempdir().unwrap();
    let o = Orchestrator::new(spec(dir.path(), &fixture("prctl_keepcaps"), OK_AND_READY), config(1)).unwrap();
    let report = o.full_analysis().unwrap();
    assert_eq!(class(&report, "prctl"), FeatureClass::FakeOnly);
}

#[test]
fn output_bearing_write_is_required() {
    let dir = tempfile::tempdir().unwrap();
    let o = Orchestrator::new(
        spec(dir.path(), &fixture("write_output"), r#"grep -qx "hello from fixture" app.stdout"#),
        config(1),
    )
    .unwrap();
    let report = o.full_analysis().unwrap();
    assert_eq!(report.profile.observed.len(), 2);
    assert_eq!(class(&report, "write"), FeatureClass::Required);
    let stub_write = report
        .probes
        .iter()
        .find(|p| p.feature == FeatureId::syscall(1) && p.mode == Mode::Stub)
        .unwrap();
    assert!(!stub_write.verdict.works());
}

#[test]
fn run_count_law_on_fixtures() {
    for s in [3u64, 5] {
        let dir = tempfile::tempdir().unwrap();
        let bin = fixture_with("nsys", &[("NSYS", &s.to_string())]);
        let r = 2;
        let o = Orchestrator::new(spec(dir.path(), &bin, r#"grep -q ok app.stdout"#), config(r)).unwrap();
        let report = o.full_analysis().unwrap();
        assert_eq!(report.profile.observed.len() as u64, s);
        assert_eq!(report.counts.analysis, (2 + 2 * s) * r as u64);
        assert_eq!(report.counts.total(), report.counts.analysis);
    }
}

#[test]
fn parallel_replicas_keep_the_count() {
    let dir = tempfile::tempdir().unwrap();
    let bin = fixture_with("nsys", &[("NSYS", "3")]);
    let cfg = AnalysisConfig {
        parallelism: 3,
        ..config(3)
    };
    let o = Orchestrator::new(spec(dir.path(), &bin, r#"grep -q ok app.stdout"#), cfg).unwrap();
    let report = o.full_analysis().unwrap();
    assert_eq!(report.counts.analysis, 8 * 3);
    assert_eq!(report.profile.metadata.parallelism, 3);
}

#[test]
fn interacting_stubs_make_the_profile_inconsistent() {
    let dir = tempfile::tempdir().unwrap();
    let db = tempfile::tempdir().unwrap();
    let o = Orchestrator::new(spec(dir.path(), &fixture("redundant_sources"), r#"grep -q configured app.stdout"#), config(1))
        .unwrap()
        .with_store(db.path());
    let report = match o.full_analysis() {
        Err(AnalysisError::Inconsistent(report)) => report,
        other => panic!("expected an inconsistent profile, got {other:?}"),
    };
    assert!(!report.profile.confirmed);
    assert!(class(&report, "uname").stubbable());
    assert!(class(&report, "sysinfo").stubbable());
    assert!(report.hint.as_deref().unwrap().contains("probe --policy"));
    // the profile is stored anyway
    let entries = syslens::store::load_db(db.path()).unwrap();
    assert_eq!(entries.len(), 1);
    assert!(!entries[0].profile.confirmed);

    // manual culprit hunting
    let mut both = Policy::allow_all();
    both.stub(FeatureId::syscall(nr("uname"))).stub(FeatureId::syscall(nr("sysinfo")));
    assert!(!o.probe_custom(&both).unwrap().0.success);
    let mut one = Policy::allow_all();
    one.stub(FeatureId::syscall(nr("uname")));
    assert!(o.probe_custom(&one).unwrap().0.success);
    let (allow, trace) = o.probe_custom(&Policy::allow_all()).unwrap();
    assert!(allow.success);
    assert_eq!(trace.features(), report.profile.observed);
    assert_eq!(o.counts().custom, 3);
}

#[test]
fn failing_workload_is_a_baseline_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = Orchestrator::new(spec(dir.path(), &fixture("noop"), "exit 1"), config(2)).unwrap();
    match o.discover() {
        Err(AnalysisError::BaselineFailure { replica: 1, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert_eq!(o.counts().analysis, 2);
}

#[test]
fn progress_lines_name_replica_feature_mode_and_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let bin = fixture_with("nsys", &[("NSYS", "2")]);
    let o = Orchestrator::new(spec(dir.path(), &bin, r#"grep -q ok app.stdout"#), config(1)).unwrap();
    o.full_analysis().unwrap();
    let log = o.progress_log();
    assert!(log.iter().any(|l| l.starts_with("phase=probe replica=1/1 feature=write mode=stub verdict=breaks")));
    assert!(log.iter().all(|l| !l.starts_with("phase=") || l.contains(" duration=")));
}

#[test]
fn analysis_is_stored_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let db = tempfile::tempdir().unwrap();
    let bin = fixture_with("nsys", &[("NSYS", "3")]);
    let make = || {
        Orchestrator::new(spec(dir.path(), &bin, r#"grep -q ok app.stdout"#), config(1))
            .unwrap()
            .with_store(db.path())
    };
    let first = make().full_analysis().unwrap();
    let second = make().full_analysis().unwrap();
    assert_eq!(first.stored_at, second.stored_at);
    assert_eq!(syslens::store::load_db(db.path()).unwrap().len(), 1);
}
