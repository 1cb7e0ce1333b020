//! Shared helpers for integration tests: freestanding C fixtures and workload scripts.
#![allow(dead_code)]

use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::Command;

const FIXTURE_SRC: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");

fn fixture_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("syslens-fixtures");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Compiles `tests/fixtures/<name>.c` (with optional `-D` defines) and returns the binary path.
pub fn fixture_with(name: &str, defines: &[(&str, &str)]) -> PathBuf {
    let mut tag = name.to_string();
    for (k, v) in defines {
        tag.push_str(&format!("_{k}{v}"));
    }
    let out = fixture_dir().join(&tag);
    let src = Path::new(FIXTURE_SRC).join(format!("{name}.c"));
    let header = Path::new(FIXTURE_SRC).join("sys.h");
    let newest_input = [&src, &header]
        .iter()
        .map(|p| std::fs::metadata(p).unwrap().modified().unwrap())
        .max()
        .unwrap();
    if let Ok(meta) = std::fs::metadata(&out) {
        if meta.modified().unwrap() >= newest_input {
            return out;
        }
    }
    // compile to a private name and rename so concurrent test binaries never see a partial file
    let tmp = fixture_dir().join(format!(".{tag}.{}", std::process::id()));
    let mut cmd = Command::new("cc");
    cmd.args([
        "-O1",
        "-nostdlib",
        "-static",
        "-ffreestanding",
        "-fno-stack-protector",
        "-fno-pie",
        "-no-pie",
        "-fno-asynchronous-unwind-tables",
    ]);
    for (k, v) in defines {
        cmd.arg(format!("-D{k}={v}"));
    }
    cmd.arg("-o").arg(&tmp).arg(&src);
    let status = cmd.status().expect("C compiler available");
    assert!(status.success(), "failed to compile fixture {name}");
    std::fs::rename(&tmp, &out).unwrap();
    out
}

pub fn fixture(name: &str) -> PathBuf {
    fixture_with(name, &[])
}

/// Writes an executable shell script into `dir`.
pub fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path
}

pub fn nr(name: &str) -> u64 {
    syslens::syscalls::table().number(name).unwrap()
}
