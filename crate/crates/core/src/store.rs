//! Directory database of profiles, OS support descriptions and CSV export.
//!
//! Layout: `<db_root>/db/<app>/<workload-hash>/{profile.json,meta.json}`.
//! A second entry for the same key measured under a different kernel or
//! tool version lives in `<workload-hash>-<suffix>` next to the first.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::feature::FeatureId;
use crate::orchestrator::{AppProfile, Metric, Mode};
use crate::syscalls;

pub const PROFILE_FILE: &str = "profile.json";
pub const META_FILE: &str = "meta.json";
const LOCK_FILE: &str = ".lock";

/// Header of [`export_profile_csv`].
pub const EXPORT_HEADER: &str = "syscall_nr,name,subfeature,pseudofile,class,stub_perf_delta,fake_perf_delta,stub_rss_delta,fake_rss_delta,stub_fds_delta,fake_fds_delta";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: corrupt entry: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("duplicate key {app}/{workload} with different content: {}", .diff.join("; "))]
    DuplicateKey {
        app: String,
        workload: String,
        diff: Vec<String>,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: u64,
        column: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown syscall name {name:?}")]
    UnknownSyscallName { path: String, line: u64, name: String },
    #[error("invalid key component {0:?}")]
    InvalidKey(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Who measured a profile, where and when.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub submitter: String,
    pub date: String,
    pub kernel: String,
    pub tool_version: String,
}

impl Provenance {
    pub fn for_profile(profile: &AppProfile, submitter: &str) -> Self {
        Self {
            submitter: submitter.to_string(),
            date: profile.metadata.date.clone(),
            kernel: profile.metadata.kernel.clone(),
            tool_version: profile.metadata.tool_version.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbEntry {
    pub profile: AppProfile,
    pub provenance: Provenance,
}

impl DbEntry {
    /// Canonical serialized form: profile JSON, newline, meta JSON.
    pub fn canonical(&self) -> String {
        format!("{}\n{}\n", profile_json(&self.profile), meta_json(&self.provenance))
    }

    fn same_versions(&self, other: &Provenance) -> bool {
        self.provenance.kernel == other.kernel && self.provenance.tool_version == other.tool_version
    }
}

fn profile_json(p: &AppProfile) -> String {
    serde_json::to_string_pretty(p).expect("profile serializes") + "\n"
}

fn meta_json(p: &Provenance) -> String {
    serde_json::to_string_pretty(p).expect("provenance serializes") + "\n"
}

fn check_component(s: &str) -> Result<(), StoreError> {
    if s.is_empty() || s.starts_with('.') || s.contains('/') || s.contains('\0') {
        return Err(StoreError::InvalidKey(s.to_string()));
    }
    Ok(())
}

/// Differences that make two measurements of one key disagree. Dates,
/// versions and exact regression magnitudes are not compared.
pub fn profile_diff(old: &AppProfile, new: &AppProfile) -> Vec<String> {
    let mut diff = Vec::new();
    for f in old.observed.difference(&new.observed) {
        diff.push(format!("-{f}"));
    }
    for f in new.observed.difference(&old.observed) {
        diff.push(format!("+{f}"));
    }
    for (f, class) in &new.classes {
        if let Some(prev) = old.classes.get(f) {
            if prev != class {
                diff.push(format!("{f}: {} -> {}", prev.label(), class.label()));
            }
        }
    }
    let flagged = |p: &AppProfile| -> BTreeSet<(FeatureId, Mode, Metric)> {
        p.regressions
            .iter()
            .flat_map(|((f, m), flags)| flags.iter().map(move |x| (f.clone(), *m, x.metric)))
            .collect()
    };
    let (a, b) = (flagged(old), flagged(new));
    for (f, m, x) in a.symmetric_difference(&b) {
        let sign = if b.contains(&(f.clone(), *m, *x)) { '+' } else { '-' };
        diff.push(format!("{sign}regression {f} {m} {x:?}").to_lowercase());
    }
    if old.confirmed != new.confirmed {
        diff.push(format!("confirmed: {} -> {}", old.confirmed, new.confirmed));
    }
    if old.schema != new.schema {
        diff.push(format!("schema: {} -> {}", old.schema, new.schema));
    }
    diff
}

fn read_entry(dir: &Path) -> Result<DbEntry, StoreError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|source| StoreError::Io { path, source })
    };
    let corrupt = |message: String| StoreError::Corrupt {
        path: dir.to_path_buf(),
        message,
    };
    let profile: AppProfile = serde_json::from_str(&read(PROFILE_FILE)?).map_err(|e| corrupt(e.to_string()))?;
    let provenance: Provenance = serde_json::from_str(&read(META_FILE)?).map_err(|e| corrupt(e.to_string()))?;
    profile.check().map_err(corrupt)?;
    Ok(DbEntry { profile, provenance })
}

/// Entry directories for one key: `<hash>` and `<hash>-<suffix>`.
fn key_dirs(app_dir: &Path, workload: &str) -> Result<Vec<PathBuf>, StoreError> {
    let mut out = Vec::new();
    let rd = match fs::read_dir(app_dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(io_err(app_dir)(e)),
    };
    for e in rd {
        let e = e.map_err(io_err(app_dir))?;
        let name = e.file_name().to_string_lossy().into_owned();
        let matches = name == workload || name.strip_prefix(workload).is_some_and(|r| r.starts_with('-'));
        if matches && e.path().join(PROFILE_FILE).is_file() {
            out.push(e.path());
        }
    }
    out.sort();
    Ok(out)
}

fn version_suffix(p: &Provenance) -> String {
    let mut h = Sha256::new();
    h.update(p.kernel.as_bytes());
    h.update([0u8]);
    h.update(p.tool_version.as_bytes());
    hex::encode(&h.finalize()[..4])
}

/// Exclusive lock on the database, released on drop.
struct DbLock(File);

impl DbLock {
    fn acquire(db_root: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(db_root).map_err(io_err(db_root))?;
        let path = db_root.join(LOCK_FILE);
        let file = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.lock().map_err(io_err(&path))?;
        Ok(Self(file))
    }
}

impl Drop for DbLock {
    fn drop(&mut self) {
        let _ = self.0.unlock();
    }
}

/// Stores `entry`, returning its directory.
///
/// Saving content equal to an existing entry with the same key and versions
/// is a no-op; different content is refused with [`StoreError::DuplicateKey`].
pub fn save_profile(db_root: &Path, entry: &DbEntry) -> Result<PathBuf, StoreError> {
    let profile = &entry.profile;
    check_component(&profile.app)?;
    check_component(&profile.workload)?;
    profile.check().map_err(|message| StoreError::Corrupt {
        path: db_root.to_path_buf(),
        message,
    })?;

    let _lock = DbLock::acquire(db_root)?;
    let app_dir = db_root.join("db").join(&profile.app);
    let existing = key_dirs(&app_dir, &profile.workload)?;
    for dir in &existing {
        let old = read_entry(dir)?;
        if !entry.same_versions(&old.provenance) {
            continue;
        }
        let diff = profile_diff(&old.profile, profile);
        if diff.is_empty() {
            return Ok(dir.clone());
        }
        return Err(StoreError::DuplicateKey {
            app: profile.app.clone(),
            workload: profile.workload.clone(),
            diff,
        });
    }
    let target = if existing.is_empty() {
        app_dir.join(&profile.workload)
    } else {
        app_dir.join(format!("{}-{}", profile.workload, version_suffix(&entry.provenance)))
    };

    fs::create_dir_all(&app_dir).map_err(io_err(&app_dir))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(&app_dir)
        .map_err(io_err(&app_dir))?;
    for (name, text) in [(PROFILE_FILE, profile_json(profile)), (META_FILE, meta_json(&entry.provenance))] {
        let path = staging.path().join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        File::open(&path).and_then(|f| f.sync_all()).map_err(io_err(&path))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, &target).map_err(|source| {
        let _ = fs::remove_dir_all(&staged);
        StoreError::Io {
            path: target.clone(),
            source,
        }
    })?;
    Ok(target)
}

/// Every entry under `db_root`, ordered by key and provenance.
pub fn load_db(db_root: &Path) -> Result<Vec<DbEntry>, StoreError> {
    let mut entries = Vec::new();
    let db = db_root.join("db");
    let apps = match fs::read_dir(&db) {
        Ok(rd) => rd,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(entries),
        Err(e) => return Err(io_err(&db)(e)),
    };
    for app in apps {
        let app = app.map_err(io_err(&db))?;
        if !app.file_type().map_err(io_err(&app.path()))?.is_dir() {
            continue;
        }
        for dir in fs::read_dir(app.path()).map_err(io_err(&app.path()))? {
            let dir = dir.map_err(io_err(&app.path()))?;
            if dir.file_name().to_string_lossy().starts_with('.') || !dir.path().join(PROFILE_FILE).is_file() {
                continue;
            }
            entries.push(read_entry(&dir.path())?);
        }
    }
    sort_entries(&mut entries);
    Ok(entries)
}

fn sort_entries(entries: &mut Vec<DbEntry>) {
    entries.sort_by_cached_key(|e| (e.profile.app.clone(), e.profile.workload.clone(), e.provenance.clone(), e.canonical()));
    entries.dedup_by(|a, b| a.canonical() == b.canonical());
}

/// Union of several databases, independent of the order of `roots`.
pub fn load_dbs(roots: &[PathBuf]) -> Result<Vec<DbEntry>, StoreError> {
    let mut entries = Vec::new();
    for root in roots {
        entries.extend(load_db(root)?);
    }
    sort_entries(&mut entries);
    Ok(entries)
}

/// Syscalls an OS provides, and those it knowingly stubs or fakes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OsSupportSet {
    pub name: String,
    pub revision: String,
    pub implemented: BTreeSet<u64>,
    pub declared_stubs: BTreeSet<u64>,
    pub declared_fakes: BTreeSet<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportStatus {
    Implemented,
    Stubbed,
    Faked,
}

impl OsSupportSet {
    pub fn status(&self, nr: u64) -> Option<SupportStatus> {
        if self.implemented.contains(&nr) {
            Some(SupportStatus::Implemented)
        } else if self.declared_stubs.contains(&nr) {
            Some(SupportStatus::Stubbed)
        } else if self.declared_fakes.contains(&nr) {
            Some(SupportStatus::Faked)
        } else {
            None
        }
    }

    pub fn is_disjoint(&self) -> bool {
        self.implemented.is_disjoint(&self.declared_stubs)
            && self.implemented.is_disjoint(&self.declared_fakes)
            && self.declared_stubs.is_disjoint(&self.declared_fakes)
    }

    /// Parses `syscall[,status]` lines; `path` labels error messages.
    pub fn parse_csv(text: &str, path: &str) -> Result<Self, StoreError> {
        let table = syscalls::table();
        let mut statuses: BTreeMap<u64, SupportStatus> = BTreeMap::new();
        let mut first = true;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx as u64 + 1;
            let parse_err = |column: usize, message: String| StoreError::Parse {
                path: path.to_string(),
                line,
                column,
                message,
            };
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            // csv handles quoting; line numbers are tracked here because the
            // reader does not count blank and comment lines
            let record = csv::ReaderBuilder::new()
                .has_headers(false)
                .trim(csv::Trim::All)
                .from_reader(raw.as_bytes())
                .records()
                .next()
                .transpose()
                .map_err(|e| parse_err(1, e.to_string()))?
                .unwrap_or_default();
            let is_header = first && record.get(0) == Some("syscall");
            first = false;
            if is_header || record.iter().all(|f| f.is_empty()) {
                continue;
            }
            if record.len() > 2 {
                return Err(parse_err(3, format!("expected at most 2 fields, found {}", record.len())));
            }
            let token = &record[0];
            let nr = if token.bytes().all(|b| b.is_ascii_digit()) {
                token.parse::<u64>().map_err(|e| parse_err(1, e.to_string()))?
            } else {
                table.number(token).ok_or_else(|| StoreError::UnknownSyscallName {
                    path: path.to_string(),
                    line,
                    name: token.to_string(),
                })?
            };
            let status = match record.get(1).unwrap_or("") {
                "" | "implemented" => SupportStatus::Implemented,
                "stubbed" => SupportStatus::Stubbed,
                "faked" => SupportStatus::Faked,
                other => return Err(parse_err(2, format!("unknown status {other:?}"))),
            };
            if let Some(prev) = statuses.insert(nr, status) {
                if prev != status {
                    return Err(parse_err(1, format!("{token} listed as both {prev:?} and {status:?}").to_lowercase()));
                }
            }
        }
        let mut set = OsSupportSet {
            name: Path::new(path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            revision: hex::encode(&Sha256::digest(text.as_bytes())[..4]),
            ..Default::default()
        };
        for (nr, status) in statuses {
            match status {
                SupportStatus::Implemented => set.implemented.insert(nr),
                SupportStatus::Stubbed => set.declared_stubs.insert(nr),
                SupportStatus::Faked => set.declared_fakes.insert(nr),
            };
        }
        Ok(set)
    }
}

pub fn import_os_csv(path: &Path) -> Result<OsSupportSet, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    OsSupportSet::parse_csv(&text, &path.display().to_string())
}

/// One row per observed feature, header [`EXPORT_HEADER`]. Delta columns
/// hold signed relative changes of flagged metrics and are empty otherwise.
pub fn export_profile_csv(profile: &AppProfile) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(EXPORT_HEADER.split(',')).expect("in-memory write");
    let table = syscalls::table();
    for (feature, class) in &profile.classes {
        let delta = |mode: Mode, metric: Metric| {
            profile
                .regressions
                .get(&(feature.clone(), mode))
                .and_then(|flags| flags.iter().find(|f| f.metric == metric))
                .map(|f| f.delta.to_string())
                .unwrap_or_default()
        };
        let mut row = vec![
            feature.syscall_nr.to_string(),
            table.display_name(feature.syscall_nr),
            feature.subfeature.map(|v| format!("{v:#x}")).unwrap_or_default(),
            feature.pseudofile_class.clone().unwrap_or_default(),
            class.label().to_string(),
        ];
        for metric in Metric::ALL {
            for mode in [Mode::Stub, Mode::Fake] {
                row.push(delta(mode, metric));
            }
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}
