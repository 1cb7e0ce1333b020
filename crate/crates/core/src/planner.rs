//! Incremental support plans, API importance and effort curves computed
//! from a set of profiles and an OS support description.
//!
//! Planning is per syscall. For each application a syscall is needed in one
//! of four ways, the conservative meet over every feature of that syscall
//! (and over every profile of the application): it must be implemented, it
//! may be stubbed, it may be faked, or either.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::orchestrator::{AppProfile, FeatureClass};
use crate::store::OsSupportSet;
use crate::syscalls;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("profile for {0} is not confirmed")]
    UnconfirmedProfile(String),
    #[error("no profile for target {0}")]
    MissingProfile(String),
    #[error("ordering does not cover targets: {}", .0.join(", "))]
    IncompleteOrdering(Vec<String>),
    #[error("ordering names unknown application {0}")]
    UnknownApp(String),
    #[error("empty database")]
    EmptyDatabase,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

/// Cost of one new implemented, stubbed and faked syscall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub implement: f64,
    pub stub: f64,
    pub fake: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            implement: 1.0,
            stub: 0.1,
            fake: 0.1,
        }
    }
}

/// How an application needs one syscall.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Need {
    stub_ok: bool,
    fake_ok: bool,
}

impl Need {
    fn of(class: FeatureClass) -> Self {
        Self {
            stub_ok: class.stubbable(),
            fake_ok: class.fakeable(),
        }
    }

    fn meet(self, other: Need) -> Need {
        Need {
            stub_ok: self.stub_ok && other.stub_ok,
            fake_ok: self.fake_ok && other.fake_ok,
        }
    }

    fn satisfied_by(self, nr: u64, os: &OsSupportSet) -> bool {
        os.implemented.contains(&nr)
            || (self.stub_ok && os.declared_stubs.contains(&nr))
            || (self.fake_ok && os.declared_fakes.contains(&nr))
    }
}

/// Per-syscall needs of one application.
#[derive(Debug, Clone, PartialEq)]
struct AppNeeds {
    name: String,
    needs: BTreeMap<u64, Need>,
    /// syscall -> observed sub-feature values, `None` when used without a selector
    subfeatures: BTreeMap<u64, BTreeSet<Option<u64>>>,
}

impl AppNeeds {
    fn from_profiles<'a>(name: &str, profiles: impl IntoIterator<Item = &'a AppProfile>) -> Self {
        let mut needs: BTreeMap<u64, Need> = BTreeMap::new();
        let mut subfeatures: BTreeMap<u64, BTreeSet<Option<u64>>> = BTreeMap::new();
        for p in profiles {
            for f in &p.observed {
                let class = p.class_of(f).unwrap_or(FeatureClass::Required);
                let n = Need::of(class);
                needs.entry(f.syscall_nr).and_modify(|e| *e = e.meet(n)).or_insert(n);
                subfeatures.entry(f.syscall_nr).or_default().insert(f.subfeature);
            }
        }
        Self {
            name: name.to_string(),
            needs,
            subfeatures,
        }
    }

    fn supported(&self, os: &OsSupportSet) -> bool {
        self.needs.iter().all(|(nr, n)| n.satisfied_by(*nr, os))
    }

    /// Additions to `os` that make this app supported. `any` resolves to stub.
    /// A syscall already stubbed (faked) that the app cannot tolerate stubbed
    /// (faked) is upgraded to an implementation.
    fn delta(&self, os: &OsSupportSet) -> Delta {
        let mut d = Delta::default();
        for (&nr, n) in &self.needs {
            if n.satisfied_by(nr, os) {
                continue;
            }
            let declared = os.declared_stubs.contains(&nr) || os.declared_fakes.contains(&nr);
            if declared || !(n.stub_ok || n.fake_ok) {
                d.implement.insert(nr);
            } else if n.stub_ok {
                d.stub.insert(nr);
            } else {
                d.fake.insert(nr);
            }
        }
        d
    }

    fn traced(&self) -> BTreeSet<u64> {
        self.needs.keys().copied().collect()
    }

    fn required(&self) -> BTreeSet<u64> {
        self.needs
            .iter()
            .filter(|(_, n)| !n.stub_ok && !n.fake_ok)
            .map(|(nr, _)| *nr)
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Delta {
    implement: BTreeSet<u64>,
    stub: BTreeSet<u64>,
    fake: BTreeSet<u64>,
}

impl Delta {
    fn cost(&self, w: &Weights) -> f64 {
        w.implement * self.implement.len() as f64 + w.stub * self.stub.len() as f64 + w.fake * self.fake.len() as f64
    }

    fn apply(&self, os: &mut OsSupportSet) {
        for nr in &self.implement {
            os.declared_stubs.remove(nr);
            os.declared_fakes.remove(nr);
            os.implemented.insert(*nr);
        }
        os.declared_stubs.extend(&self.stub);
        os.declared_fakes.extend(&self.fake);
    }
}

/// Whether the OS state runs the profiled workload.
pub fn app_supported(profile: &AppProfile, os: &OsSupportSet) -> Result<bool, PlanError> {
    if !profile.confirmed {
        return Err(PlanError::UnconfirmedProfile(profile.app.clone()));
    }
    Ok(profile.observed.iter().all(|f| {
        let nr = f.syscall_nr;
        let class = profile.class_of(f).unwrap_or(FeatureClass::Required);
        os.implemented.contains(&nr)
            || (class.stubbable() && os.declared_stubs.contains(&nr))
            || (class.fakeable() && os.declared_fakes.contains(&nr))
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub index: usize,
    pub implement: BTreeSet<u64>,
    pub stub: BTreeSet<u64>,
    pub fake: BTreeSet<u64>,
    /// The chosen application first, then any others the step completes.
    pub unlocks: Vec<String>,
    /// Advisory notes on implement entries, e.g. sub-features actually used.
    pub annotations: BTreeMap<u64, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportPlan {
    pub os: String,
    pub initial_supported: Vec<String>,
    pub steps: Vec<PlanStep>,
    pub unreachable: Vec<String>,
}

/// Groups profiles by application name.
fn group(profiles: &[AppProfile]) -> BTreeMap<&str, Vec<&AppProfile>> {
    let mut by_app: BTreeMap<&str, Vec<&AppProfile>> = BTreeMap::new();
    for p in profiles {
        by_app.entry(p.app.as_str()).or_default().push(p);
    }
    by_app
}

fn target_needs(profiles: &[AppProfile], targets: &[String]) -> Result<Vec<AppNeeds>, PlanError> {
    let by_app = group(profiles);
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for t in targets {
        if !seen.insert(t.as_str()) {
            continue;
        }
        let ps = by_app.get(t.as_str()).ok_or_else(|| PlanError::MissingProfile(t.clone()))?;
        if let Some(p) = ps.iter().find(|p| !p.confirmed) {
            return Err(PlanError::UnconfirmedProfile(p.app.clone()));
        }
        out.push(AppNeeds::from_profiles(t, ps.iter().copied()));
    }
    Ok(out)
}

/// All application names in `profiles`, sorted.
pub fn app_names(profiles: &[AppProfile]) -> Vec<String> {
    group(profiles).keys().map(|s| s.to_string()).collect()
}

fn annotate(nr: u64, apps: &[&AppNeeds]) -> Option<String> {
    let mut values = BTreeSet::new();
    for a in apps {
        for v in a.subfeatures.get(&nr).into_iter().flatten() {
            values.insert((*v)?);
        }
    }
    if values.is_empty() {
        return None;
    }
    let list: Vec<String> = values.iter().map(|v| format!("{v:#x}")).collect();
    Some(format!("{}: only {} observed", syscalls::table().display_name(nr), list.join(", ")))
}

/// Greedy cheapest-application-next plan.
///
/// Applications needing an implementation of any syscall in `wont_implement`
/// are reported as unreachable.
pub fn generate_plan(
    os_support: &OsSupportSet,
    profiles: &[AppProfile],
    targets: &[String],
    weights: &Weights,
    wont_implement: &BTreeSet<u64>,
) -> Result<SupportPlan, PlanError> {
    for (name, w) in [("implement", weights.implement), ("stub", weights.stub), ("fake", weights.fake)] {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(PlanError::InvalidWeights(format!("{name} weight {w}")));
        }
    }
    let apps = target_needs(profiles, targets)?;
    let mut state = os_support.clone();
    let mut plan = SupportPlan {
        os: os_support.name.clone(),
        initial_supported: Vec::new(),
        steps: Vec::new(),
        unreachable: Vec::new(),
    };
    let mut pending: Vec<&AppNeeds> = Vec::new();
    for a in &apps {
        if a.supported(&state) {
            plan.initial_supported.push(a.name.clone());
        } else {
            pending.push(a);
        }
    }
    loop {
        let mut best: Option<(usize, Delta, f64)> = None;
        let mut blocked = Vec::new();
        for (i, a) in pending.iter().enumerate() {
            let d = a.delta(&state);
            if !d.implement.is_disjoint(wont_implement) {
                blocked.push(i);
                continue;
            }
            let cost = d.cost(weights);
            let better = match &best {
                None => true,
                Some((j, bd, bc)) => {
                    (cost, d.implement.len(), a.name.as_str()) < (*bc, bd.implement.len(), pending[*j].name.as_str())
                }
            };
            if better {
                best = Some((i, d, cost));
            }
        }
        // blocked apps can only get more expensive as the state grows; set them aside
        for &i in blocked.iter().rev() {
            plan.unreachable.push(pending.remove(i).name.clone());
            if let Some((j, _, _)) = &mut best {
                if *j > i {
                    *j -= 1;
                }
            }
        }
        let Some((chosen, delta, _)) = best else { break };
        delta.apply(&mut state);
        let chosen_app = pending.remove(chosen);
        let mut unlocked = vec![chosen_app];
        pending.retain(|a| {
            if a.supported(&state) {
                unlocked.push(a);
                false
            } else {
                true
            }
        });
        let annotations = delta
            .implement
            .iter()
            .filter_map(|nr| annotate(*nr, &unlocked).map(|s| (*nr, s)))
            .collect();
        plan.steps.push(PlanStep {
            index: plan.steps.len() + 1,
            implement: delta.implement,
            stub: delta.stub,
            fake: delta.fake,
            unlocks: unlocked.iter().map(|a| a.name.clone()).collect(),
            annotations,
        });
    }
    plan.unreachable.sort();
    Ok(plan)
}

/// OS state after applying steps `1..=k` of `plan`.
pub fn replay(os_support: &OsSupportSet, plan: &SupportPlan, k: usize) -> OsSupportSet {
    let mut state = os_support.clone();
    for step in plan.steps.iter().take(k) {
        Delta {
            implement: step.implement.clone(),
            stub: step.stub.clone(),
            fake: step.fake.clone(),
        }
        .apply(&mut state);
    }
    state
}

fn join_nrs(set: &BTreeSet<u64>) -> String {
    if set.is_empty() {
        "-".into()
    } else {
        set.iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
    }
}

impl SupportPlan {
    /// Table with columns Step, Implement, Stub, Fake and Support for.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<[String; 5]> = vec![[
            "Step".into(),
            "Implement".into(),
            "Stub".into(),
            "Fake".into(),
            "Support for".into(),
        ]];
        if !self.initial_supported.is_empty() {
            rows.push([
                "0".into(),
                "-".into(),
                "-".into(),
                "-".into(),
                self.initial_supported.join(", "),
            ]);
        }
        for s in &self.steps {
            rows.push([
                s.index.to_string(),
                join_nrs(&s.implement),
                join_nrs(&s.stub),
                join_nrs(&s.fake),
                format!("+ {}", s.unlocks.join(", ")),
            ]);
        }
        let widths: Vec<usize> = (0..5).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (n, row) in rows.iter().enumerate() {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", line.join(" | ").trim_end());
            if n == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                let _ = writeln!(out, "{}", rule.join("-|-"));
            }
        }
        for s in &self.steps {
            for note in s.annotations.values() {
                let _ = writeln!(out, "step {}: {note}", s.index);
            }
        }
        if !self.unreachable.is_empty() {
            let _ = writeln!(out, "unreachable: {}", self.unreachable.join(", "));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub syscall_nr: u64,
    pub name: String,
    pub traced: f64,
    pub required: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub apps: usize,
    /// Sorted by required importance, then traced importance, descending.
    pub syscalls: Vec<Importance>,
}

/// Fraction of applications tracing, and requiring, each syscall.
pub fn api_importance(profiles: &[AppProfile]) -> Result<ImportanceReport, PlanError> {
    let by_app = group(profiles);
    if by_app.is_empty() {
        return Err(PlanError::EmptyDatabase);
    }
    let n = by_app.len() as f64;
    let mut traced: BTreeMap<u64, usize> = BTreeMap::new();
    let mut required: BTreeMap<u64, usize> = BTreeMap::new();
    for (name, ps) in &by_app {
        let needs = AppNeeds::from_profiles(name, ps.iter().copied());
        for nr in needs.traced() {
            *traced.entry(nr).or_default() += 1;
        }
        // required: some feature of the syscall is classified required
        let req: BTreeSet<u64> = ps.iter().flat_map(|p| p.required_syscalls()).collect();
        for nr in req {
            *required.entry(nr).or_default() += 1;
        }
    }
    let table = syscalls::table();
    let mut rows: Vec<Importance> = traced
        .iter()
        .map(|(&nr, &t)| Importance {
            syscall_nr: nr,
            name: table.display_name(nr),
            traced: t as f64 / n,
            required: required.get(&nr).copied().unwrap_or(0) as f64 / n,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.required
            .total_cmp(&a.required)
            .then(b.traced.total_cmp(&a.traced))
            .then(a.syscall_nr.cmp(&b.syscall_nr))
    });
    debug_assert!(rows.iter().all(|r| r.required <= r.traced));
    Ok(ImportanceReport {
        apps: by_app.len(),
        syscalls: rows,
    })
}

impl ImportanceReport {
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<6} {:<24} {:>8} {:>8}\n", "nr", "syscall", "required", "traced");
        for r in &self.syscalls {
            let _ = writeln!(out, "{:<6} {:<24} {:>8.3} {:>8.3}", r.syscall_nr, r.name, r.required, r.traced);
        }
        let _ = writeln!(out, "{} applications", self.apps);
        out
    }
}

/// Ordering of applications for [`compare_strategies`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// The support planner.
    Plan,
    /// Cheapest app next by newly traced syscalls, implementing all of them.
    Naive,
    /// A given order of applications, each supported with stubs and fakes where possible.
    External(Vec<String>),
}

impl Strategy {
    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Plan => "plan",
            Strategy::Naive => "naive",
            Strategy::External(_) => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub strategy: String,
    /// cumulative distinct syscalls implemented
    pub x: usize,
    /// applications supported
    pub y: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurveTable {
    pub points: Vec<CurvePoint>,
}

impl CurveTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(["strategy", "x", "y"]).expect("in-memory write");
        for p in &self.points {
            w.serialize(p).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn curve(&self, strategy: &str) -> Vec<(usize, usize)> {
        self.points.iter().filter(|p| p.strategy == strategy).map(|p| (p.x, p.y)).collect()
    }

    /// Fewest implemented syscalls at which `strategy` supports `apps` applications.
    pub fn effort_for(&self, strategy: &str, apps: usize) -> Option<usize> {
        self.curve(strategy).into_iter().find(|&(_, y)| y >= apps).map(|(x, _)| x)
    }
}

/// Effort (implemented syscalls) versus applications supported, per strategy,
/// over every application in `profiles`.
pub fn compare_strategies(
    profiles: &[AppProfile],
    os_support: &OsSupportSet,
    strategies: &[Strategy],
    weights: &Weights,
) -> Result<CurveTable, PlanError> {
    let names = app_names(profiles);
    let mut table = CurveTable::default();
    if names.is_empty() {
        return Ok(table);
    }
    let apps = target_needs(profiles, &names)?;
    let count = |os: &OsSupportSet| apps.iter().filter(|a| a.supported(os)).count();
    for strategy in strategies {
        let label = strategy.label().to_string();
        let mut push = |x: usize, y: usize| {
            table.points.push(CurvePoint {
                strategy: label.clone(),
                x,
                y,
            })
        };
        match strategy {
            Strategy::Plan => {
                let plan = generate_plan(os_support, profiles, &names, weights, &BTreeSet::new())?;
                let mut x = 0;
                push(0, count(os_support));
                for (k, step) in plan.steps.iter().enumerate() {
                    x += step.implement.len();
                    push(x, count(&replay(os_support, &plan, k + 1)));
                }
            }
            Strategy::Naive => {
                let mut implemented = os_support.implemented.clone();
                let naive_count = |imp: &BTreeSet<u64>| apps.iter().filter(|a| a.traced().is_subset(imp)).count();
                let mut x = 0;
                push(0, naive_count(&implemented));
                loop {
                    let next = apps
                        .iter()
                        .filter(|a| !a.traced().is_subset(&implemented))
                        .min_by_key(|a| (a.traced().difference(&implemented).count(), a.name.clone()));
                    let Some(a) = next else { break };
                    let new: Vec<u64> = a.traced().difference(&implemented).copied().collect();
                    x += new.len();
                    implemented.extend(new);
                    push(x, naive_count(&implemented));
                }
            }
            Strategy::External(order) => {
                let known: BTreeSet<&str> = names.iter().map(String::as_str).collect();
                if let Some(unknown) = order.iter().find(|n| !known.contains(n.as_str())) {
                    return Err(PlanError::UnknownApp(unknown.clone()));
                }
                let listed: BTreeSet<&str> = order.iter().map(String::as_str).collect();
                let missing: Vec<String> = names.iter().filter(|n| !listed.contains(n.as_str())).cloned().collect();
                if !missing.is_empty() {
                    return Err(PlanError::IncompleteOrdering(missing));
                }
                let mut state = os_support.clone();
                let mut x = 0;
                push(0, count(&state));
                let mut seen = BTreeSet::new();
                for name in order {
                    if !seen.insert(name.as_str()) {
                        continue;
                    }
                    let a = apps.iter().find(|a| &a.name == name).expect("validated above");
                    let d = a.delta(&state);
                    x += d.implement.len();
                    d.apply(&mut state);
                    push(x, count(&state));
                }
            }
        }
    }
    Ok(table)
}

/// Syscalls with at least one required feature in any of the profiles for `app`.
pub fn required_syscalls(profiles: &[AppProfile], app: &str) -> BTreeSet<u64> {
    let ps: Vec<&AppProfile> = profiles.iter().filter(|p| p.app == app).collect();
    AppNeeds::from_profiles(app, ps).required()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::FeatureId;
    use crate::orchestrator::{ProfileMetadata, PROFILE_SCHEMA};

    pub(crate) fn profile(app: &str, features: &[(u64, FeatureClass)]) -> AppProfile {
        let classes: BTreeMap<FeatureId, FeatureClass> =
            features.iter().map(|(nr, c)| (FeatureId::syscall(*nr), *c)).collect();
        AppProfile {
            schema: PROFILE_SCHEMA,
            app: app.into(),
            workload: "0".into(),
            observed: classes.keys().cloned().collect(),
            classes,
            regressions: BTreeMap::new(),
            confirmed: true,
            metadata: ProfileMetadata::current(1, 1),
        }
    }

    use FeatureClass::*;

    #[test]
    fn two_app_worked_example() {
        let profiles = vec![profile("A", &[(1, Required), (2, Any)]), profile("B", &[(1, Required), (3, Required)])];
        let plan = generate_plan(
            &OsSupportSet::default(),
            &profiles,
            &["A".into(), "B".into()],
            &Weights::default(),
            &BTreeSet::new(),
        )
        .unwrap();
        assert!(plan.initial_supported.is_empty());
        assert_eq!(plan.steps.len(), 2);
        assert_eq!(plan.steps[0].implement, [1].into());
        assert_eq!(plan.steps[0].stub, [2].into());
        assert!(plan.steps[0].fake.is_empty());
        assert_eq!(plan.steps[0].unlocks, vec!["A".to_string()]);
        assert_eq!(plan.steps[1].implement, [3].into());
        assert_eq!(plan.steps[1].unlocks, vec!["B".to_string()]);
        let text = plan.render_table();
        assert!(text.contains("1    | 1         | 2    | -    | + A"), "{text}");
    }

    #[test]
    fn supported_truth_table_for_one_feature() {
        let nr = 7;
        for class in [Required, StubOnly, FakeOnly, Any] {
            for status in 0..4 {
                let mut os = OsSupportSet::default();
                match status {
                    1 => os.implemented.insert(nr),
                    2 => os.declared_stubs.insert(nr),
                    3 => os.declared_fakes.insert(nr),
                    _ => false,
                };
                let expected = matches!((status, class), (1, _) | (2, StubOnly | Any) | (3, FakeOnly | Any));
                let p = profile("x", &[(nr, class)]);
                assert_eq!(app_supported(&p, &os), Ok(expected), "{class:?} status {status}");
            }
        }
    }

    #[test]
    fn unconfirmed_profiles_are_rejected() {
        let mut p = profile("x", &[(1, Required)]);
        p.confirmed = false;
        assert_eq!(app_supported(&p, &OsSupportSet::default()), Err(PlanError::UnconfirmedProfile("x".into())));
        let err = generate_plan(&OsSupportSet::default(), &[p], &["x".into()], &Weights::default(), &BTreeSet::new());
        assert_eq!(err, Err(PlanError::UnconfirmedProfile("x".into())));
    }

    #[test]
    fn already_supported_targets() {
        let profiles = vec![profile("A", &[(1, Required)]), profile("B", &[(2, StubOnly)])];
        let os = OsSupportSet {
            implemented: [1, 2].into(),
            ..Default::default()
        };
        let plan = generate_plan(&os, &profiles, &["A".into(), "B".into()], &Weights::default(), &BTreeSet::new()).unwrap();
        assert!(plan.steps.is_empty());
        assert_eq!(plan.initial_supported, vec!["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn stubbed_syscall_later_required_is_upgraded() {
        let profiles = vec![profile("A", &[(5, StubOnly)]), profile("B", &[(5, Required), (6, Required)])];
        let plan = generate_plan(
            &OsSupportSet::default(),
            &profiles,
            &["A".into(), "B".into()],
            &Weights::default(),
            &BTreeSet::new(),
        )
        .unwrap();
        assert_eq!(plan.steps[0].stub, [5].into());
        assert_eq!(plan.steps[1].implement, [5, 6].into());
        let end = replay(&OsSupportSet::default(), &plan, 2);
        assert!(end.is_disjoint());
        assert!(app_supported(&profiles[0], &end).unwrap());
    }

    #[test]
    fn mixed_subfeature_classes_need_an_implementation() {
        let mut p = profile("A", &[]);
        for (f, c) in [(FeatureId::with_subfeature(72, 3), StubOnly), (FeatureId::with_subfeature(72, 4), FakeOnly)] {
            p.observed.insert(f.clone());
            p.classes.insert(f, c);
        }
        let plan = generate_plan(&OsSupportSet::default(), &[p], &["A".into()], &Weights::default(), &BTreeSet::new()).unwrap();
        assert_eq!(plan.steps[0].implement, [72].into());
        assert_eq!(plan.steps[0].annotations[&72], "fcntl: only 0x3, 0x4 observed");
    }

    #[test]
    fn wont_implement_makes_apps_unreachable() {
        let profiles = vec![profile("A", &[(1, Required)]), profile("B", &[(9, Required)])];
        let plan = generate_plan(
            &OsSupportSet::default(),
            &profiles,
            &["A".into(), "B".into()],
            &Weights::default(),
            &[9].into(),
        )
        .unwrap();
        assert_eq!(plan.unreachable, vec!["B".to_string()]);
        assert_eq!(plan.steps.len(), 1);
    }

    #[test]
    fn side_effect_unlocks_share_the_step() {
        let profiles = vec![profile("A", &[(1, Required), (2, Required)]), profile("B", &[(1, Required)])];
        let plan = generate_plan(
            &OsSupportSet::default(),
            &profiles,
            &["A".into(), "B".into()],
            &Weights::default(),
            &BTreeSet::new(),
        )
        .unwrap();
        assert_eq!(plan.steps.len(), 2);
        assert_eq!(plan.steps[0].unlocks, vec!["B".to_string()]);
        let profiles = vec![profile("A", &[(1, Required)]), profile("B", &[(1, Required)])];
        let plan = generate_plan(
            &OsSupportSet::default(),
            &profiles,
            &["A".into(), "B".into()],
            &Weights::default(),
            &BTreeSet::new(),
        )
        .unwrap();
        assert_eq!(plan.steps.len(), 1);
        assert_eq!(plan.steps[0].unlocks, vec!["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn importance_counts() {
        let r = api_importance(&[profile("one", &[(1, Required)])]).unwrap();
        assert_eq!(r.syscalls.len(), 1);
        assert_eq!((r.syscalls[0].traced, r.syscalls[0].required), (1.0, 1.0));

        let x = 42;
        let profiles = vec![
            profile("a", &[(x, Required)]),
            profile("b", &[(x, StubOnly)]),
            profile("c", &[(x, Any), (1, Required)]),
            profile("d", &[(1, Required)]),
        ];
        let r = api_importance(&profiles).unwrap();
        let row = r.syscalls.iter().find(|i| i.syscall_nr == x).unwrap();
        assert_eq!((row.traced, row.required), (0.75, 0.25));
        assert_eq!(api_importance(&[]), Err(PlanError::EmptyDatabase));
    }

    #[test]
    fn single_app_curves() {
        let profiles = vec![profile(
            "A",
            &[(1, Required), (2, Required), (3, StubOnly), (4, FakeOnly), (5, Any)],
        )];
        let t = compare_strategies(
            &profiles,
            &OsSupportSet::default(),
            &[Strategy::Plan, Strategy::Naive, Strategy::External(vec!["A".into()])],
            &Weights::default(),
        )
        .unwrap();
        assert_eq!(t.effort_for("plan", 1), Some(2));
        assert_eq!(t.effort_for("naive", 1), Some(5));
        assert_eq!(t.effort_for("external", 1), Some(2));
        assert!(t.to_csv().starts_with("strategy,x,y\nplan,0,0\nplan,2,1\n"));

        let empty = compare_strategies(&[], &OsSupportSet::default(), &[Strategy::Plan], &Weights::default()).unwrap();
        assert!(empty.points.is_empty());

        let err = compare_strategies(
            &[profile("A", &[(1, Required)]), profile("B", &[(2, Required)])],
            &OsSupportSet::default(),
            &[Strategy::External(vec!["A".into()])],
            &Weights::default(),
        );
        assert_eq!(err, Err(PlanError::IncompleteOrdering(vec!["B".into()])));
    }
}
