//! Python bindings. Structured results (reports, plans, tables) cross the
//! boundary as plain dicts and lists decoded from their JSON form.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use syslens::harness::{AppSpec, Readiness};
use syslens::orchestrator::{AnalysisReport, AppProfile as CoreProfile, ProbeRecord};
use syslens::planner::{self, PlanError, Strategy, Weights};
use syslens::store::{self, StoreError};
use syslens::{
    AnalysisConfig, AnalysisError, FeatureId as CoreFeature, Mode, Orchestrator, OsSupportSet, Policy as CorePolicy,
    Whitelist,
};

create_exception!(syslens, SyslensError, PyException);
create_exception!(syslens, BaselineFailure, SyslensError);
create_exception!(syslens, StoreFailure, SyslensError);

fn analysis_err(e: AnalysisError) -> PyErr {
    match e {
        AnalysisError::InvalidConfig(_) => PyValueError::new_err(e.to_string()),
        AnalysisError::BaselineFailure { .. } => BaselineFailure::new_err(e.to_string()),
        AnalysisError::Store(s) => store_err(s),
        e => SyslensError::new_err(e.to_string()),
    }
}

fn store_err(e: StoreError) -> PyErr {
    match e {
        StoreError::Parse { .. } | StoreError::UnknownSyscallName { .. } | StoreError::InvalidKey(_) => {
            PyValueError::new_err(e.to_string())
        }
        e => StoreFailure::new_err(e.to_string()),
    }
}

fn plan_err(e: PlanError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| SyslensError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn resolve_syscall(token: &str) -> PyResult<u64> {
    syslens::syscalls::table()
        .resolve(token)
        .ok_or_else(|| PyValueError::new_err(format!("unknown syscall {token:?}")))
}

/// A system call, optionally narrowed to one subfeature value or pseudo-file class.
#[pyclass(name = "FeatureId", frozen, eq, hash, ord, skip_from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct FeatureId(CoreFeature);

#[pymethods]
impl FeatureId {
    /// `syscall` is a name or number.
    #[new]
    #[pyo3(signature = (syscall, subfeature=None, pseudofile=None))]
    fn new(syscall: &Bound<'_, PyAny>, subfeature: Option<u64>, pseudofile: Option<String>) -> PyResult<Self> {
        let nr = match syscall.extract::<u64>() {
            Ok(nr) => nr,
            Err(_) => resolve_syscall(&syscall.extract::<String>()?)?,
        };
        Ok(Self(CoreFeature {
            syscall_nr: nr,
            subfeature,
            pseudofile_class: pseudofile,
        }))
    }

    /// Parses the display form, e.g. `fcntl[0x3]` or `openat</dev>`.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        CoreFeature::parse(text)
            .map(Self)
            .ok_or_else(|| PyValueError::new_err(format!("cannot parse feature {text:?}")))
    }

    #[getter]
    fn syscall_nr(&self) -> u64 {
        self.0.syscall_nr
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name()
    }

    #[getter]
    fn subfeature(&self) -> Option<u64> {
        self.0.subfeature
    }

    #[getter]
    fn pseudofile(&self) -> Option<String> {
        self.0.pseudofile_class.clone()
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("FeatureId('{}')", self.0)
    }
}

/// Per-feature interposition actions; unlisted features are allowed.
#[pyclass(name = "Policy", skip_from_py_object)]
#[derive(Clone, Default)]
struct Policy(CorePolicy);

#[pymethods]
impl Policy {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    fn stub(&mut self, feature: &FeatureId) {
        self.0.stub(feature.0.clone());
    }

    fn fake(&mut self, feature: &FeatureId) {
        self.0.fake(feature.0.clone(), &Default::default());
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        CorePolicy::from_json(text).map(Self).map_err(PyValueError::new_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn __len__(&self) -> usize {
        self.0.overrides().len()
    }
}

/// Classification of one application's features under one workload.
#[pyclass(name = "AppProfile", frozen)]
struct AppProfile(CoreProfile);

#[pymethods]
impl AppProfile {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(Self)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.0).map_err(|e| SyslensError::new_err(e.to_string()))
    }

    #[getter]
    fn app(&self) -> String {
        self.0.app.clone()
    }

    #[getter]
    fn workload(&self) -> String {
        self.0.workload.clone()
    }

    #[getter]
    fn confirmed(&self) -> bool {
        self.0.confirmed
    }

    /// Feature display name to class label (`required`, `stub`, `fake`, `any`).
    fn classes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (f, c) in &self.0.classes {
            d.set_item(f.to_string(), c.label())?;
        }
        Ok(d)
    }

    fn class_of(&self, feature: &FeatureId) -> Option<&'static str> {
        self.0.class_of(&feature.0).map(|c| c.label())
    }

    fn traced_syscalls(&self) -> BTreeSet<u64> {
        self.0.traced_syscalls()
    }

    fn required_syscalls(&self) -> BTreeSet<u64> {
        self.0.required_syscalls()
    }

    fn table(&self) -> String {
        self.0.render_table()
    }

    /// One CSV row per feature in the export format, with header.
    fn export_csv(&self) -> String {
        store::export_profile_csv(&self.0)
    }

    fn __repr__(&self) -> String {
        format!(
            "AppProfile(app={:?}, workload={:?}, features={}, confirmed={})",
            self.0.app,
            self.0.workload,
            self.0.classes.len(),
            self.0.confirmed
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn build(
    app_cmd: Vec<String>,
    test_script: PathBuf,
    name: Option<String>,
    whitelist: Vec<PathBuf>,
    ready: &str,
    workdir: Option<PathBuf>,
    subfeatures: bool,
    pseudofiles: bool,
    timeout: Option<f64>,
) -> PyResult<(AppSpec, AnalysisConfig)> {
    let first = app_cmd.first().ok_or_else(|| PyValueError::new_err("app_cmd is empty"))?;
    let name = name.unwrap_or_else(|| {
        std::path::Path::new(first)
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "app".into())
    });
    let mut spec = AppSpec::new(name, app_cmd, std::path::absolute(&test_script)?);
    spec.readiness = ready.parse::<Readiness>().map_err(PyValueError::new_err)?;
    spec.whitelist = Whitelist::new(&whitelist).map_err(|e| PyValueError::new_err(e.to_string()))?;
    spec.workdir_template = workdir;
    let timeout = match timeout {
        Some(t) if t > 0.0 && t.is_finite() => Some(Duration::from_secs_f64(t)),
        Some(_) => return Err(PyValueError::new_err("timeout must be positive")),
        None => None,
    };
    let config = AnalysisConfig {
        subfeatures,
        pseudofiles,
        timeout,
        ..Default::default()
    };
    Ok((spec, config))
}

/// Runs a full analysis and returns the report as a dict.
///
/// A failed confirmation run does not raise: the report is returned with
/// `profile["confirmed"]` false.
#[pyfunction]
#[pyo3(signature = (
    app_cmd, test_script, *, name=None, replicas=3, parallel=1, perf_runs=None, perf_margin=0.03,
    whitelist=Vec::new(), ready="exit", workdir=None, subfeatures=false, pseudofiles=false, timeout=None, db=None,
))]
#[allow(clippy::too_many_arguments)]
fn analyze(
    py: Python<'_>,
    app_cmd: Vec<String>,
    test_script: PathBuf,
    name: Option<String>,
    replicas: u32,
    parallel: u32,
    perf_runs: Option<u32>,
    perf_margin: f64,
    whitelist: Vec<PathBuf>,
    ready: &str,
    workdir: Option<PathBuf>,
    subfeatures: bool,
    pseudofiles: bool,
    timeout: Option<f64>,
    db: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let (spec, mut config) = build(app_cmd, test_script, name, whitelist, ready, workdir, subfeatures, pseudofiles, timeout)?;
    config.replicas = replicas;
    config.parallelism = parallel;
    config.perf_margin = perf_margin;
    if let Some(n) = perf_runs {
        config.perf_runs = n;
        config.detect_regressions = true;
    }
    let mut orchestrator = Orchestrator::new(spec, config).map_err(analysis_err)?;
    if let Some(db) = db {
        orchestrator = orchestrator.with_store(db);
    }
    let result: Result<AnalysisReport, AnalysisError> = py.detach(|| match orchestrator.full_analysis() {
        Err(AnalysisError::Inconsistent(r)) => Ok(*r),
        other => other,
    });
    to_py(py, &result.map_err(analysis_err)?)
}

/// Runs the workload once under `policy`; returns `{"outcome": ..., "trace": ...}`.
#[pyfunction]
#[pyo3(signature = (
    app_cmd, test_script, policy, *, name=None, whitelist=Vec::new(), ready="exit", workdir=None,
    subfeatures=false, pseudofiles=false, timeout=None,
))]
#[allow(clippy::too_many_arguments)]
fn probe(
    py: Python<'_>,
    app_cmd: Vec<String>,
    test_script: PathBuf,
    policy: &Policy,
    name: Option<String>,
    whitelist: Vec<PathBuf>,
    ready: &str,
    workdir: Option<PathBuf>,
    subfeatures: bool,
    pseudofiles: bool,
    timeout: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let (spec, mut config) = build(app_cmd, test_script, name, whitelist, ready, workdir, subfeatures, pseudofiles, timeout)?;
    config.replicas = 1;
    let orchestrator = Orchestrator::new(spec, config).map_err(analysis_err)?;
    let policy = policy.0.clone();
    let (outcome, trace) = py.detach(|| orchestrator.probe_custom(&policy)).map_err(analysis_err)?;
    to_py(py, &ProbeRecord { outcome, trace })
}

fn profiles_of(db: &std::path::Path) -> PyResult<Vec<CoreProfile>> {
    Ok(store::load_db(db).map_err(store_err)?.into_iter().map(|e| e.profile).collect())
}

fn os_of(os_support: Option<PathBuf>) -> PyResult<OsSupportSet> {
    match os_support {
        Some(p) => store::import_os_csv(&p).map_err(store_err),
        None => Ok(OsSupportSet::default()),
    }
}

/// Loads every profile stored under `db`.
#[pyfunction]
fn load_db(db: PathBuf) -> PyResult<Vec<AppProfile>> {
    Ok(profiles_of(&db)?.into_iter().map(AppProfile).collect())
}

/// Stores a profile; raises `StoreFailure` on a conflicting entry.
#[pyfunction]
#[pyo3(signature = (db, profile, submitter="python"))]
fn save_profile(db: PathBuf, profile: &AppProfile, submitter: &str) -> PyResult<PathBuf> {
    let entry = syslens::DbEntry {
        provenance: syslens::Provenance::for_profile(&profile.0, submitter),
        profile: profile.0.clone(),
    };
    store::save_profile(&db, &entry).map_err(store_err)
}

/// Support plan for `apps` (default: every confirmed profile) as a dict.
#[pyfunction]
#[pyo3(signature = (db, os_support=None, apps=None, wont_implement=Vec::new()))]
fn plan(
    py: Python<'_>,
    db: PathBuf,
    os_support: Option<PathBuf>,
    apps: Option<Vec<String>>,
    wont_implement: Vec<String>,
) -> PyResult<Py<PyAny>> {
    let profiles = profiles_of(&db)?;
    let os = os_of(os_support)?;
    let targets = apps.unwrap_or_else(|| {
        let confirmed: Vec<CoreProfile> = profiles.iter().filter(|p| p.confirmed).cloned().collect();
        planner::app_names(&confirmed)
    });
    let wont = wont_implement.iter().map(|t| resolve_syscall(t)).collect::<PyResult<BTreeSet<u64>>>()?;
    let plan = planner::generate_plan(&os, &profiles, &targets, &Weights::default(), &wont).map_err(plan_err)?;
    to_py(py, &plan)
}

/// Traced and required importance per syscall as a dict.
#[pyfunction]
fn importance(py: Python<'_>, db: PathBuf) -> PyResult<Py<PyAny>> {
    let report = planner::api_importance(&profiles_of(&db)?).map_err(plan_err)?;
    to_py(py, &report)
}

/// Support curves (plan, naive and optionally an external order) as CSV text.
#[pyfunction]
#[pyo3(signature = (db, os_support=None, order=None))]
fn compare(db: PathBuf, os_support: Option<PathBuf>, order: Option<Vec<String>>) -> PyResult<String> {
    let profiles: Vec<CoreProfile> = profiles_of(&db)?.into_iter().filter(|p| p.confirmed).collect();
    let os = os_of(os_support)?;
    let mut strategies = vec![Strategy::Plan, Strategy::Naive];
    if let Some(o) = order {
        strategies.push(Strategy::External(o));
    }
    let table = planner::compare_strategies(&profiles, &os, &strategies, &Weights::default()).map_err(plan_err)?;
    Ok(table.to_csv())
}

/// Stub and fake mode names, as used in reports.
#[pyfunction]
fn modes() -> Vec<String> {
    [Mode::Stub, Mode::Fake].iter().map(|m| m.to_string()).collect()
}

#[pymodule]
#[pyo3(name = "syslens")]
pub fn syslens_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("EXPORT_HEADER", store::EXPORT_HEADER)?;
    m.add("SyslensError", m.py().get_type::<SyslensError>())?;
    m.add("BaselineFailure", m.py().get_type::<BaselineFailure>())?;
    m.add("StoreFailure", m.py().get_type::<StoreFailure>())?;
    m.add_class::<FeatureId>()?;
    m.add_class::<Policy>()?;
    m.add_class::<AppProfile>()?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(probe, m)?)?;
    m.add_function(wrap_pyfunction!(load_db, m)?)?;
    m.add_function(wrap_pyfunction!(save_profile, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(importance, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(modes, m)?)?;
    Ok(())
}
