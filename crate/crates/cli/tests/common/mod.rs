#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn earmesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_earmesh"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs and asserts success, returning stdout.
pub fn ok(args: &[&str]) -> String {
    let out = earmesh(args);
    assert!(
        out.status.success(),
        "{args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn code(args: &[&str]) -> Option<i32> {
    earmesh(args).status.code()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `dir`, keyed by relative path.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// A small synthetic corpus for command tests.
pub fn small_corpus(dir: &Path, count: usize, seed: u64) {
    ok(&[
        "synth",
        "--out",
        s(dir),
        "--count",
        &count.to_string(),
        "--vertices",
        "600",
        "--k-full",
        "60",
        "--width",
        "96",
        "--height",
        "96",
        "--seed",
        &seed.to_string(),
    ]);
}
