//! Helpers shared by the binary-level tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mini")
}

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mirc-lab"));
    cmd.env_remove("MIRC_LAB_SEED").env("RUST_LOG", "error");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// Every pipeline step in order, as argument lists after the global options.
pub fn pipeline_steps(out: &Path) -> Vec<Vec<String>> {
    let labeled = out.join("labeled_trees.json").display().to_string();
    [
        "score",
        "reduce",
        "scramble",
        "mirc-label",
        "pairs",
        "pairs --kind any --measure model",
        "pairs --kind spatiotemporal",
        "metrics rg",
        "metrics arr",
        "metrics arr --kind any --measure model",
        "features ratios",
        "features transitions",
        "features deltas",
        "features correlate --method pearson",
        "features correlate --method spearman",
        "features temporal",
    ]
    .iter()
    .map(|s| s.split(' ').map(String::from).collect())
    .chain(std::iter::once(vec![
        "summarize".into(),
        "--trees".into(),
        labeled,
    ]))
    .collect()
}

/// Runs the whole pipeline on the mini dataset into `out`. Panics with the
/// step's stderr when a step fails.
pub fn run_pipeline(out: &Path) {
    let config = fixture_dir().join("run.toml");
    for step in pipeline_steps(out) {
        let o = bin()
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(out)
            .args(&step)
            .output()
            .expect("binary runs");
        assert!(
            o.status.success(),
            "step {:?} failed: {}",
            step,
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

/// Relative path to contents for every file under `dir`.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}
