//! System call name/number table for the reference architecture (x86_64).
//!
//! The table is shipped as a data file so other architectures can be added
//! without code changes.

use std::collections::HashMap;
use std::sync::OnceLock;

const X86_64_TABLE: &str = include_str!("../data/syscalls_x86_64.tsv");

/// Negated `ENOSYS` on the reference platform.
pub const ENOSYS_RETURN: i64 = -(libc::ENOSYS as i64);

pub const SYS_OPEN: u64 = libc::SYS_open as u64;
pub const SYS_OPENAT: u64 = libc::SYS_openat as u64;
pub const SYS_CREAT: u64 = libc::SYS_creat as u64;
pub const SYS_OPENAT2: u64 = 437;
pub const SYS_EXECVE: u64 = libc::SYS_execve as u64;
pub const SYS_EXECVEAT: u64 = libc::SYS_execveat as u64;
pub const SYS_EXIT: u64 = libc::SYS_exit as u64;
pub const SYS_EXIT_GROUP: u64 = libc::SYS_exit_group as u64;

/// Bidirectional syscall name/number mapping.
#[derive(Debug, Clone)]
pub struct SyscallTable {
    by_nr: HashMap<u64, String>,
    by_name: HashMap<String, u64>,
}

impl SyscallTable {
    /// Parses a `number<TAB>name` table; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut by_nr = HashMap::new();
        let mut by_name = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(nr), Some(name)) = (parts.next(), parts.next()) else {
                return Err(format!("line {}: expected `number name`", i + 1));
            };
            let nr: u64 = nr
                .parse()
                .map_err(|_| format!("line {}: bad syscall number {nr:?}", i + 1))?;
            by_nr.insert(nr, name.to_string());
            by_name.insert(name.to_string(), nr);
        }
        Ok(Self { by_nr, by_name })
    }

    pub fn name(&self, nr: u64) -> Option<&str> {
        self.by_nr.get(&nr).map(String::as_str)
    }

    pub fn number(&self, name: &str) -> Option<u64> {
        self.by_name.get(name).copied()
    }

    /// Name if known, otherwise `syscall_<nr>`.
    pub fn display_name(&self, nr: u64) -> String {
        self.name(nr)
            .map(str::to_string)
            .unwrap_or_else(|| format!("syscall_{nr}"))
    }

    /// Accepts either a decimal number or a known lowercase name.
    pub fn resolve(&self, token: &str) -> Option<u64> {
        let token = token.trim();
        if let Ok(nr) = token.parse::<u64>() {
            return Some(nr);
        }
        self.number(token)
    }

    pub fn len(&self) -> usize {
        self.by_nr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_nr.is_empty()
    }
}

/// The table for the architecture this crate was built for.
pub fn table() -> &'static SyscallTable {
    static TABLE: OnceLock<SyscallTable> = OnceLock::new();
    TABLE.get_or_init(|| SyscallTable::parse(X86_64_TABLE).expect("bundled syscall table is valid"))
}

/// Open-family syscalls and the index of their path argument.
pub fn open_family_path_arg(nr: u64) -> Option<usize> {
    match nr {
        SYS_OPEN | SYS_CREAT => Some(0),
        SYS_OPENAT | SYS_OPENAT2 => Some(1),
        _ => None,
    }
}
