use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
rounds = 3
seeds = [0, 1]
policies = ["itl", "uncertainty_sampling"]

[selection]
noise_std = 0.1
target_size = 4

[kernel]
family = "gaussian"
lengthscale = 0.3

[domain]
source = "synthetic"
relevant_radius = 0.2

[domain.sample]
generator = "uniform"
count = 30
dim = 2

[domain.targets]
mode = "disjoint"

[domain.targets.points]
generator = "disk"
center = [0.5, 0.5]
radius = 0.1
"#;

fn transduct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transduct"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn repo_config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn run_is_byte_identical_across_executions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = transduct(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta.len(), 2 * 2 + 2);
    assert_eq!(ta, tb);
}

#[test]
fn zero_rounds_gives_header_only_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("rounds = 3", "rounds = 0"));
    let out = dir.path().join("out");
    let o = transduct(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seeds", "0..3"]);
    assert!(o.status.success());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
    assert_eq!(std::fs::read_dir(out.join("records")).unwrap().count(), 2 * 3);
}

#[test]
fn bad_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let missing = dir.path().join("missing.toml");
    let o = transduct(&["run", "--config", missing.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(dir.path(), &SMALL.replace("noise_std = 0.1", "noise_std = 0.0"));
    let o = transduct(&["run", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("selection.noise_std"));

    let cfg = write_config(dir.path(), SMALL);
    let o = transduct(&["run", "--config", cfg.to_str().unwrap(), "--out", out, "--seeds", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeds"));
}

#[test]
fn markov_budget_overrun_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = repo_config("theory.toml");
    let o = transduct(&["markov", "--config", &cfg, "--out", out.to_str().unwrap(), "--x", "22"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));

    let o = transduct(&["markov", "--config", &cfg, "--out", out.to_str().unwrap(), "--x", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("markov.json").exists());
}

#[test]
fn theory_command_succeeds_on_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = transduct(&["theory", "--config", &repo_config("theory.toml"), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("gamma_bound: Pass"), "{stdout}");
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("theory.json")).unwrap()).unwrap();
    assert!(json["convergence_bound"]["bound"]["rows"].as_array().unwrap().len() > 1);
}
