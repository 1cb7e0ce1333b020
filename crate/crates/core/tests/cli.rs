mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{fixture, fixture_with, script};
use sha2::{Digest, Sha256};
use syslens::orchestrator::{AppProfile, FeatureClass, ProbeRecord, ProfileMetadata, PROFILE_SCHEMA};
use syslens::store::{export_profile_csv, save_profile};
use syslens::{DbEntry, FeatureId, Provenance};

const BIN: &str = env!("CARGO_BIN_EXE_syslens");

fn syslens(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SLENS_DB").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn hash_tree(root: &Path) -> String {
    fn walk(dir: &Path, root: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let Ok(rd) = std::fs::read_dir(dir) else { return };
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(&p, root, acc);
            } else {
                acc.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut files = BTreeMap::new();
    walk(root, root, &mut files);
    let mut h = Sha256::new();
    for (p, bytes) in files {
        h.update(p.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(&bytes);
    }
    hex::encode(h.finalize())
}

fn synthetic(app: &str, features: &[(u64, FeatureClass)]) -> DbEntry {
    let classes: BTreeMap<FeatureId, FeatureClass> =
        features.iter().map(|(nr, c)| (FeatureId::syscall(*nr), *c)).collect();
    let profile = AppProfile {
        schema: PROFILE_SCHEMA,
        app: app.into(),
        workload: format!("{app}0000"),
        observed: classes.keys().cloned().collect(),
        classes,
        regressions: BTreeMap::new(),
        confirmed: true,
        metadata: ProfileMetadata {
            kernel: "6.1".into(),
            tool_version: "0.1.0".into(),
            date: "2026-01-01T00:00:00Z".into(),
            replicas: 3,
            parallelism: 1,
        },
    };
    DbEntry {
        provenance: Provenance::for_profile(&profile, "tests"),
        profile,
    }
}

/// The two-application example database.
fn two_app_db() -> tempfile::TempDir {
    let db = tempfile::tempdir().unwrap();
    save_profile(db.path(), &synthetic("A", &[(1, FeatureClass::Required), (2, FeatureClass::Any)])).unwrap();
    save_profile(db.path(), &synthetic("B", &[(1, FeatureClass::Required), (3, FeatureClass::Required)])).unwrap();
    db
}

#[test]
fn analyze_prints_one_row_per_feature() {
    let dir = tempfile::tempdir().unwrap();
    let db = tempfile::tempdir().unwrap();
    let bin = fixture_with("nsys", &[("NSYS", "5")]);
    let check = script(dir.path(), "check.sh", "grep -q ok app.stdout");
    let o = syslens(&[
        "analyze",
        "--app-cmd",
        bin.to_str().unwrap(),
        "--test-script",
        check.to_str().unwrap(),
        "--replicas",
        "1",
        "--db",
        db.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 6, "{out}");
    assert!(lines[0].starts_with("feature"));
    assert!(out.contains("write") && out.contains("required"));
    // progress lines on stderr
    assert!(stderr(&o).contains("phase=discovery replica=1/1"));
    assert_eq!(syslens::store::load_db(db.path()).unwrap().len(), 1);
}

#[test]
fn analyze_json_parses() {
    let dir = tempfile::tempdir().unwrap();
    let db = tempfile::tempdir().unwrap();
    let bin = fixture_with("nsys", &[("NSYS", "3")]);
    let check = script(dir.path(), "check.sh", "grep -q ok app.stdout");
    let o = syslens(&[
        "analyze",
        "--app-cmd",
        bin.to_str().unwrap(),
        "--test-script",
        check.to_str().unwrap(),
        "--replicas",
        "1",
        "--db",
        db.path().to_str().unwrap(),
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: syslens::orchestrator::AnalysisReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report.profile.observed.len(), 3);
    assert_eq!(report.counts.analysis, 8);
}

#[test]
fn missing_test_script_is_a_usage_error() {
    let db = tempfile::tempdir().unwrap();
    let o = syslens(&[
        "analyze",
        "--app-cmd",
        "/bin/true",
        "--test-script",
        "/nonexistent/check.sh",
        "--db",
        db.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).lines().any(|l| l.starts_with("syslens: usage: ")));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let o = syslens(&["analyze", "--app-cmd", "/bin/true"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("Usage:"));
    let o = syslens(&["analyze", "--app-cmd", "/bin/true", "--test-script", "x", "--db", "d", "--replicas", "two"]);
    assert_eq!(o.status.code(), Some(4));
    let o = syslens(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn interacting_stubs_exit_2_with_a_hint() {
    let dir = tempfile::tempdir().unwrap();
    let db = tempfile::tempdir().unwrap();
    let check = script(dir.path(), "check.sh", "grep -q configured app.stdout");
    let o = syslens(&[
        "analyze",
        "--app-cmd",
        fixture("redundant_sources").to_str().unwrap(),
        "--test-script",
        check.to_str().unwrap(),
        "--replicas",
        "1",
        "--db",
        db.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).lines().any(|l| l.starts_with("syslens: inconsistent:") && l.contains("probe --policy")));
}

#[test]
fn failing_baseline_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let db = tempfile::tempdir().unwrap();
    let check = script(dir.path(), "check.sh", "exit 1");
    let o = syslens(&[
        "analyze",
        "--app-cmd",
        fixture("noop").to_str().unwrap(),
        "--test-script",
        check.to_str().unwrap(),
        "--replicas",
        "1",
        "--db",
        db.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).lines().any(|l| l.starts_with("syslens: baseline-failure:")));
}

#[test]
fn probe_runs_a_policy_file() {
    let dir = tempfile::tempdir().unwrap();
    let check = script(dir.path(), "check.sh", "grep -q configured app.stdout");
    let policy = dir.path().join("policy.json");
    std::fs::write(
        &policy,
        r#"{"overrides":[{"feature":"uname","action":"stub"},{"feature":"sysinfo","action":"stub"}]}"#,
    )
    .unwrap();
    let bin = fixture("redundant_sources");
    let base = [
        "probe",
        "--app-cmd",
        bin.to_str().unwrap(),
        "--test-script",
        check.to_str().unwrap(),
        "--policy",
        policy.to_str().unwrap(),
    ];
    let o = syslens(&base);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("success=false"));
    let mut json_args = base.to_vec();
    json_args.push("--json");
    let o = syslens(&json_args);
    let record: ProbeRecord = serde_json::from_slice(&o.stdout).unwrap();
    assert!(!record.outcome.success);
    assert_eq!(record.trace.decisions.values().filter(|a| **a == syslens::Action::Stub).count(), 2);

    std::fs::write(&policy, "{not json").unwrap();
    assert_eq!(syslens(&base).status.code(), Some(4));
}

#[test]
fn plan_over_two_app_db_prints_two_steps() {
    let db = two_app_db();
    let os = db.path().join("empty.csv");
    std::fs::write(&os, "# nothing yet\n").unwrap();
    let o = syslens(&["plan", "--db", db.path().to_str().unwrap(), "--os-support", os.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().collect();
    assert!(rows[0].starts_with("Step | Implement | Stub | Fake | Support for"), "{out}");
    assert!(rows[2].starts_with("1    | 1         | 2    | -    | + A"), "{out}");
    assert!(rows[3].starts_with("2    | 3         | -    | -    | + B"), "{out}");

    let o = syslens(&["plan", "--db", db.path().to_str().unwrap(), "--os-support", os.to_str().unwrap(), "--json"]);
    let plan: syslens::planner::SupportPlan = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(plan.steps.len(), 2);
}

#[test]
fn bad_os_csv_reports_file_and_line() {
    let db = two_app_db();
    let os = db.path().join("os.csv");
    std::fs::write(&os, "read\nwrite\nnotasyscall\n").unwrap();
    let o = syslens(&["plan", "--db", db.path().to_str().unwrap(), "--os-support", os.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("os.csv:3:"), "{}", stderr(&o));
}

#[test]
fn importance_over_empty_db_fails() {
    let db = tempfile::tempdir().unwrap();
    let o = syslens(&["importance", "--db", db.path().to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("empty database"));
}

#[test]
fn db_from_environment() {
    let db = two_app_db();
    let o = Command::new(BIN)
        .args(["importance", "--json"])
        .env("SLENS_DB", db.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let report: syslens::planner::ImportanceReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report.apps, 2);
}

#[test]
fn export_matches_the_store() {
    let db = two_app_db();
    let o = syslens(&["export", "--db", db.path().to_str().unwrap(), "--apps", "B"]);
    assert_eq!(o.status.code(), Some(0));
    let expected = export_profile_csv(&synthetic("B", &[(1, FeatureClass::Required), (3, FeatureClass::Required)]).profile);
    assert_eq!(stdout(&o), expected);
}

#[test]
fn read_only_subcommands_leave_the_db_untouched_and_json_parses() {
    let db = two_app_db();
    let d = db.path().to_str().unwrap();
    let os = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(os.path(), "write\n").unwrap();
    let order = tempfile::NamedTempFile::new().unwrap();
    std::fs::write(order.path(), "B\nA\n").unwrap();
    let before = hash_tree(db.path());
    let os_path = os.path().to_str().unwrap();
    let order_path = order.path().to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["plan", "--db", d, "--os-support", os_path],
        vec!["importance", "--db", d],
        vec!["compare", "--db", d, "--os-support", os_path, "--order", order_path],
        vec!["export", "--db", d, "--apps", "A,B"],
    ];
    for cmd in commands {
        for json in [false, true] {
            let mut args = cmd.clone();
            if json {
                args.push("--json");
            }
            let o = syslens(&args);
            assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
            if json {
                serde_json::from_slice::<serde_json::Value>(&o.stdout).unwrap_or_else(|e| panic!("{args:?}: {e}"));
            }
            assert_eq!(hash_tree(db.path()), before, "{args:?} modified the database");
        }
    }
    let o = syslens(&["compare", "--db", d, "--order", order_path]);
    let out = stdout(&o);
    assert!(out.starts_with("strategy,x,y\n"));
    assert!(out.contains("external,"));
}

#[test]
fn command_template_executor_matches_local_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let db = tempfile::tempdir().unwrap();
    let bin = fixture("prctl_keepcaps");
    let check = script(dir.path(), "check.sh", r#"test "$SLENS_APP_EXIT" = 0 && grep -q ready app.stdout"#);
    let template = format!(
        "{BIN} probe --app-cmd {} --test-script {} --policy {{policy}} --timeout {{timeout}} --json",
        bin.display(),
        check.display()
    );
    let o = syslens(&[
        "analyze",
        "--app-cmd",
        bin.to_str().unwrap(),
        "--test-script",
        check.to_str().unwrap(),
        "--replicas",
        "1",
        "--db",
        db.path().to_str().unwrap(),
        "--executor",
        &template,
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: syslens::orchestrator::AnalysisReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(
        report.profile.classes[&FeatureId::syscall(common::nr("prctl"))],
        FeatureClass::FakeOnly
    );
}
