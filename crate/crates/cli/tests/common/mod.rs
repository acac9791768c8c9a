#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn studies() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("studies")
}

pub fn synthcontrol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthcontrol"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn text(out: &Output) -> (String, String) {
    (String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned())
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Runs `simulate` on `design` inside `dir` and returns the study path.
pub fn simulated_study(dir: &Path, design: &str) -> PathBuf {
    let design_path = dir.join("design.toml");
    fs::write(&design_path, design).unwrap();
    let out = synthcontrol(&["simulate", "--config", path_str(&design_path), "--out", path_str(dir)]);
    assert_eq!(code(&out), 0, "{:?}", text(&out));
    dir.join("study.toml")
}

/// Rewrites a generated study config in place.
pub fn edit(path: &Path, from: &str, to: &str) {
    let s = fs::read_to_string(path).unwrap();
    assert!(s.contains(from), "{from:?} not in {}", path.display());
    fs::write(path, s.replacen(from, to, 1)).unwrap();
}

/// CSV rows as string fields, header first.
pub fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
