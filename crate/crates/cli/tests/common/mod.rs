#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small enough that every command finishes in a few seconds.
pub const FAST_CONFIG: &str = "\
# quick test settings
sim.duration = 3
dataset.trials_per_terrain = 1
net.hidden = 8
net.mlp_hidden = 16
net.fused = 8
net.max_epochs = 4
benchmark.calibrate = false
benchmark.seeds = 1
";

pub fn kneeassist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kneeassist"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = kneeassist(args);
    assert!(
        out.status.success(),
        "kneeassist {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn key(line: &str) -> Option<&str> {
    line.split_once('=').map(|(k, _)| k.trim())
}

/// `FAST_CONFIG` with the `key = value` lines of `extra` taking precedence.
pub fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let overridden: Vec<&str> = extra.lines().filter_map(key).collect();
    let mut text: String = FAST_CONFIG
        .lines()
        .filter(|l| key(l).is_none_or(|k| !overridden.contains(&k)))
        .map(|l| format!("{l}\n"))
        .collect();
    text.push_str(extra);
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file in a directory, by name.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

/// Data rows of a CSV with a schema comment and a header line.
pub fn csv_rows(path: &Path) -> (String, Vec<String>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# schema: kneeassist."));
    let header = lines.next().unwrap().to_string();
    (header, lines.map(str::to_string).collect())
}
