use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = r#"
config_version = 1
seed = 3

[pipeline]
window = 5
cumsum_columns = []

[[datasets]]
name = "sine"
synthetic = { kind = "sinusoid", length = 160 }

[[machines]]
kind = "ridge"

[[machines]]
kind = "knn"
params = { k = 3 }

[tuning]
budget = 6

[dynamic]
horizon = 3
"#;

fn proxens(dir: &Path, config: &str, args: &[&str]) -> Output {
    std::fs::write(dir.join("proxens.toml"), config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_proxens"))
        .current_dir(dir)
        .args(["--config", "proxens.toml", "--out-dir", "out"])
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn run_then_report_succeeds() {
    let dir = TempDir::new().unwrap();
    let o = proxens(dir.path(), CONFIG, &["--jobs", "2", "run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["runs.json", "metrics_rmse.csv", "comparison.json", "manifest.json", "config.resolved.toml"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    assert_eq!(code(&proxens(dir.path(), CONFIG, &["report"])), 0);
}

#[test]
fn other_subcommands_succeed() {
    let dir = TempDir::new().unwrap();
    for args in [&["prepare"][..], &["tune"], &["sweep", "--parameter", "alpha"], &["dynamic", "--horizon", "2"]] {
        let o = proxens(dir.path(), CONFIG, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read_to_string(dir.path().join("out/dynamic/sine.csv")).unwrap().lines().count(), 3);
}

#[test]
fn seed_override_changes_the_manifest() {
    let dir = TempDir::new().unwrap();
    proxens(dir.path(), CONFIG, &["prepare"]);
    let a = std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    proxens(dir.path(), CONFIG, &["--seed", "4", "prepare"]);
    let b = std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn bad_config_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let o = proxens(dir.path(), &CONFIG.replace("\"ridge\"", "\"svm\""), &["run"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("svm"));
    assert_eq!(code(&proxens(dir.path(), "not = [toml", &["run"])), 1);
}

#[test]
fn missing_csv_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let cfg = CONFIG.replace(r#"synthetic = { kind = "sinusoid", length = 160 }"#, r#"csv = { path = "missing.csv" }"#);
    let o = proxens(dir.path(), &cfg, &["prepare"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.csv"));
}

#[test]
fn failed_cells_exit_with_three_after_writing_reports() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{CONFIG}\n[[machines]]\nkind = \"knn\"\nname = \"huge_k\"\nparams = {{ k = 100000 }}\n");
    let o = proxens(dir.path(), &cfg, &["run"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("huge_k"));
    let metrics = std::fs::read_to_string(dir.path().join("out/metrics_rmse.csv")).unwrap();
    assert!(metrics.contains("failed"), "{metrics}");
}
