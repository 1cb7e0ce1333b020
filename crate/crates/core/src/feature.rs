//! Feature identities and the argument-based classification of intercepted calls.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::syscalls::{self, open_family_path_arg};

/// An interceptable OS feature: a syscall, optionally narrowed to one
/// sub-operation (selector argument value) or to a pseudo-file class.
///
/// Ordering is lexicographic over `(syscall_nr, subfeature, pseudofile_class)`
/// with absent values first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureId {
    pub syscall_nr: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subfeature: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudofile_class: Option<String>,
}

impl FeatureId {
    pub fn syscall(nr: u64) -> Self {
        Self {
            syscall_nr: nr,
            subfeature: None,
            pseudofile_class: None,
        }
    }

    pub fn with_subfeature(nr: u64, value: u64) -> Self {
        Self {
            syscall_nr: nr,
            subfeature: Some(value),
            pseudofile_class: None,
        }
    }

    pub fn with_pseudofile(nr: u64, class: impl Into<String>) -> Self {
        Self {
            syscall_nr: nr,
            subfeature: None,
            pseudofile_class: Some(class.into()),
        }
    }

    pub fn name(&self) -> String {
        syscalls::table().display_name(self.syscall_nr)
    }

    /// Parses the textual form produced by `Display`: `name`, `name[0x5401]`
    /// or `name</dev>`. Numbers are accepted in place of names.
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        if let Some(open) = text.find('<') {
            let class = text[open + 1..].strip_suffix('>')?;
            let nr = syscalls::table().resolve(&text[..open])?;
            return Some(Self::with_pseudofile(nr, class));
        }
        if let Some(open) = text.find('[') {
            let raw = text[open + 1..].strip_suffix(']')?;
            let value = match raw.strip_prefix("0x") {
                Some(hex) => u64::from_str_radix(hex, 16).ok()?,
                None => raw.parse().ok()?,
            };
            let nr = syscalls::table().resolve(&text[..open])?;
            return Some(Self::with_subfeature(nr, value));
        }
        syscalls::table().resolve(text).map(Self::syscall)
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())?;
        if let Some(sub) = self.subfeature {
            write!(f, "[{sub:#x}]")?;
        }
        if let Some(class) = &self.pseudofile_class {
            write!(f, "<{class}>")?;
        }
        Ok(())
    }
}

/// Tables driving classification and fake return values.
///
/// Loaded from the `subfeature_selectors`, `fake_values` and `pseudo_prefixes`
/// keys of the configuration file; syscalls may be given by name or number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterposeConfig {
    /// syscall number -> index (0..6) of the argument selecting the sub-operation
    pub subfeature_selectors: BTreeMap<u64, usize>,
    /// syscall number -> return value injected when faking it
    pub fake_values: BTreeMap<u64, i64>,
    pub pseudo_prefixes: Vec<String>,
}

impl Default for InterposeConfig {
    fn default() -> Self {
        let t = syscalls::table();
        let selectors = [
            ("ioctl", 1),
            ("fcntl", 1),
            ("prctl", 0),
            ("arch_prctl", 0),
            ("madvise", 2),
            ("futex", 1),
            ("setsockopt", 2),
        ];
        Self {
            subfeature_selectors: selectors
                .iter()
                .map(|(name, idx)| (t.number(name).expect("known syscall"), *idx))
                .collect(),
            fake_values: BTreeMap::new(),
            pseudo_prefixes: vec!["/proc".into(), "/dev".into(), "/sys".into()],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    subfeature_selectors: Option<BTreeMap<String, usize>>,
    fake_values: Option<BTreeMap<String, i64>>,
    pseudo_prefixes: Option<Vec<String>>,
}

impl InterposeConfig {
    /// Reads a TOML configuration file. Missing keys keep their defaults.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text).map_err(|message| ConfigError::Invalid {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        let table = syscalls::table();
        let resolve = |name: &str| {
            table
                .resolve(name)
                .ok_or_else(|| format!("unknown syscall {name:?}"))
        };
        let mut config = Self::default();
        if let Some(selectors) = raw.subfeature_selectors {
            config.subfeature_selectors = BTreeMap::new();
            for (name, idx) in selectors {
                if idx > 5 {
                    return Err(format!("selector for {name}: argument index {idx} out of range"));
                }
                config.subfeature_selectors.insert(resolve(&name)?, idx);
            }
        }
        if let Some(values) = raw.fake_values {
            for (name, value) in values {
                config.fake_values.insert(resolve(&name)?, value);
            }
        }
        if let Some(prefixes) = raw.pseudo_prefixes {
            for p in &prefixes {
                if !p.starts_with('/') {
                    return Err(format!("pseudo prefix {p:?} is not absolute"));
                }
            }
            config.pseudo_prefixes = prefixes
                .into_iter()
                .map(|p| p.trim_end_matches('/').to_string())
                .collect();
        }
        Ok(config)
    }

    /// Copy with sub-feature and/or pseudo-file keying switched off.
    pub fn restricted(&self, subfeatures: bool, pseudofiles: bool) -> Self {
        let mut out = self.clone();
        if !subfeatures {
            out.subfeature_selectors.clear();
        }
        if !pseudofiles {
            out.pseudo_prefixes.clear();
        }
        out
    }

    pub fn fake_value(&self, syscall_nr: u64) -> i64 {
        self.fake_values.get(&syscall_nr).copied().unwrap_or(0)
    }
}

/// Result of classifying one syscall entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classified {
    pub feature: FeatureId,
    /// Set when the path argument of an open-family call could not be read.
    pub unreadable_path: bool,
}

/// Maps a raw syscall entry to its feature identity.
///
/// `read_path` dereferences a string pointer in the tracee; it is only called
/// for open-family syscalls when pseudo-file prefixes are configured.
pub fn classify_feature<F>(
    syscall_nr: u64,
    args: &[u64; 6],
    config: &InterposeConfig,
    read_path: F,
) -> Classified
where
    F: FnOnce(u64) -> Option<String>,
{
    if !config.pseudo_prefixes.is_empty() {
        if let Some(idx) = open_family_path_arg(syscall_nr) {
            return match read_path(args[idx]) {
                Some(path) => Classified {
                    feature: match pseudo_class(&path, &config.pseudo_prefixes) {
                        Some(class) => FeatureId::with_pseudofile(syscall_nr, class),
                        None => FeatureId::syscall(syscall_nr),
                    },
                    unreadable_path: false,
                },
                None => Classified {
                    feature: FeatureId::syscall(syscall_nr),
                    unreadable_path: true,
                },
            };
        }
    }
    let feature = match config.subfeature_selectors.get(&syscall_nr) {
        // selector arguments are C ints; upper register bits carry no meaning
        Some(&idx) => FeatureId::with_subfeature(syscall_nr, args[idx] & 0xffff_ffff),
        None => FeatureId::syscall(syscall_nr),
    };
    Classified {
        feature,
        unreadable_path: false,
    }
}

/// Returns the configured prefix `path` falls under, matching whole path components.
pub fn pseudo_class(path: &str, prefixes: &[String]) -> Option<String> {
    prefixes
        .iter()
        .find(|prefix| {
            path.strip_prefix(prefix.as_str())
                .is_some_and(|rest| rest.is_empty() || rest.starts_with('/'))
        })
        .cloned()
}
