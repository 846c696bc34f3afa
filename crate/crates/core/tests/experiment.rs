use std::path::Path;

use ndarray::Array1;
use proxens::data::{Frame, FramePair};
use proxens::evaluation::SweepParameter;
use proxens::experiment::{Experiment, ExperimentConfig, ExperimentError, Manifest};
use proxens::machines::{Machine, MachineError, Registry};
use serde_json::Value;
use tempfile::TempDir;

const BASE: &str = r#"
config_version = 1
seed = 5

[pipeline]
window = 6
cumsum_columns = []

[[datasets]]
name = "sine"
synthetic = { kind = "sinusoid", length = 220 }

[[machines]]
kind = "ridge"

[[machines]]
kind = "knn"
params = { k = 3 }
budget = 4
space = { k = { type = "quantized", lo = 1, hi = 7, step = 1 } }

[[machines]]
kind = "mlp"
params = { hidden = 4, epochs = 5, learning_rate = 0.01 }

[tuning]
budget = 8

[dynamic]
horizon = 4

[ablation]
tpe_budget = 10
grid = { resolution = { epsilon = 5, partition_fraction = 2 } }
"#;

fn config(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!("{BASE}\n{extra}")).unwrap()
}

fn experiment(cfg: ExperimentConfig, out: &Path) -> Experiment {
    Experiment::new(cfg, ".", out).unwrap()
}

fn read(dir: &Path, rel: &str) -> String {
    std::fs::read_to_string(dir.join(rel)).unwrap()
}

fn assert_same_outputs(a: &Path, b: &Path) {
    let ma = Manifest::load(a).unwrap();
    let mb = Manifest::load(b).unwrap();
    assert_eq!(ma, mb);
    assert!(ma.verify(a).is_empty());
    for rel in ma.artifacts.keys() {
        assert_eq!(std::fs::read(a.join(rel)).unwrap(), std::fs::read(b.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn prepare_cache_keys() {
    let dir = TempDir::new().unwrap();
    let a = experiment(config(""), dir.path()).cmd_prepare().unwrap();
    let b = experiment(config(""), dir.path()).cmd_prepare().unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].split.n_train + a[0].split.n_val + a[0].split.n_test, 214);

    let mut wider = config("");
    wider.pipeline.window = 7;
    let c = experiment(wider, dir.path()).cmd_prepare().unwrap();
    assert_ne!(a[0].cache_key, c[0].cache_key);
    assert_eq!(std::fs::read_dir(dir.path().join("cache")).unwrap().count(), 2);
}

#[test]
fn data_errors_name_the_path_and_stage() {
    let dir = TempDir::new().unwrap();
    let toml = BASE.replace(
        r#"synthetic = { kind = "sinusoid", length = 220 }"#,
        r#"csv = { path = "no/such/file.csv" }"#,
    );
    let exp = Experiment::new(ExperimentConfig::from_toml(&toml).unwrap(), dir.path(), dir.path()).unwrap();
    let err = exp.cmd_prepare().unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("no/such/file.csv"), "{err}");

    let mut short = config("");
    short.pipeline.window = 500;
    let err = experiment(short, dir.path()).cmd_prepare().unwrap_err();
    assert!(matches!(&err, ExperimentError::Data { stage, .. } if stage == "frame"), "{err}");
}

#[test]
fn config_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let mut bad = config("");
    bad.machines[0].kind = "svm".into();
    let err = Experiment::new(bad, ".", dir.path()).err().unwrap();
    assert_eq!(err.exit_code(), 1);
    let err = Experiment::new(config("[evaluation]\nreference = \"lasso\""), ".", dir.path()).err().unwrap();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn run_is_complete_and_reproducible() {
    let (d1, d2) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let s = experiment(config(""), d1.path()).cmd_run().unwrap();
    experiment(config(""), d2.path()).cmd_run().unwrap();
    assert!(s.failures().is_empty());
    assert_eq!(s.rmse.models, ["ridge", "knn", "mlp", "DPE", "PaDPE", "COBRA"]);
    assert!(s.rmse.matrix[0].iter().all(|c| c.is_some()));
    assert_eq!(s.rmse.p_value_basis, "steps");
    assert_same_outputs(d1.path(), d2.path());

    let header = read(d1.path(), "metrics_rmse.csv").lines().next().unwrap().to_string();
    assert_eq!(header, "dataset,ridge,knn,mlp,DPE,PaDPE,COBRA");
    let tuned: Value = serde_json::from_str(&read(d1.path(), "tuned.json")).unwrap();
    let k = &tuned[0]["machines"][1]["spec"]["params"]["k"];
    assert!(k.is_u64(), "{k}");
    let forecast = read(d1.path(), "forecasts/sine/DPE.csv");
    assert_eq!(forecast.lines().count(), 1 + s.runs.records[3].run.as_ref().unwrap().actual.nrows());
    for t in ["knn", "DPE", "PaDPE", "COBRA"] {
        assert!(d1.path().join(format!("trials/sine/{t}.csv")).exists());
    }

    // Reports rebuilt from runs.json are byte-identical.
    let before = read(d1.path(), "comparison.json");
    std::fs::remove_file(d1.path().join("comparison.json")).unwrap();
    experiment(config(""), d1.path()).cmd_report().unwrap();
    assert_eq!(before, read(d1.path(), "comparison.json"));
}

#[test]
fn seed_is_part_of_the_hash() {
    let mut other = config("");
    other.seed = 6;
    assert_ne!(config("").hash(), other.hash());
}

struct Broken(String);

impl Machine<f64> for Broken {
    fn name(&self) -> &str {
        &self.0
    }
    fn kind(&self) -> &str {
        "broken"
    }
    fn fit(&mut self, _: &[FramePair<f64>], _: u64) -> Result<(), MachineError> {
        Err(MachineError::Failed {
            name: self.0.clone(),
            message: "diverged".into(),
        })
    }
    fn predict(&self, _: &Frame<f64>) -> Result<Array1<f64>, MachineError> {
        unreachable!()
    }
    fn state(&self) -> Result<Value, MachineError> {
        Ok(Value::Null)
    }
}

struct Panicky(String);

impl Machine<f64> for Panicky {
    fn name(&self) -> &str {
        &self.0
    }
    fn kind(&self) -> &str {
        "panicky"
    }
    fn fit(&mut self, _: &[FramePair<f64>], _: u64) -> Result<(), MachineError> {
        Ok(())
    }
    fn predict(&self, _: &Frame<f64>) -> Result<Array1<f64>, MachineError> {
        panic!("index out of range")
    }
    fn state(&self) -> Result<Value, MachineError> {
        Ok(Value::Null)
    }
}

#[test]
fn a_crashing_machine_only_fails_its_own_column() {
    let mut reg = Registry::default();
    reg.register("broken", |name, _| Ok(Box::new(Broken(name.into()))), |_| Err(MachineError::Format("no state".into())));
    reg.register("panicky", |name, _| Ok(Box::new(Panicky(name.into()))), |_| Err(MachineError::Format("no state".into())));
    let cfg = config("[[machines]]\nkind = \"broken\"\n\n[[machines]]\nkind = \"panicky\"");
    let dir = TempDir::new().unwrap();
    let s = Experiment::with_registry(cfg, ".", dir.path(), reg).unwrap().cmd_run().unwrap();
    assert_eq!(
        s.failures(),
        [("sine".to_string(), "broken".to_string()), ("sine".to_string(), "panicky".to_string())]
    );
    let row = &s.rmse.matrix[0];
    assert_eq!(s.rmse.models.len(), 8);
    assert!(row[3].is_none() && row[4].is_none());
    assert!(row.iter().enumerate().filter(|(j, _)| *j != 3 && *j != 4).all(|(_, c)| c.is_some()));
    assert!(read(dir.path(), "metrics_rmse.csv").contains(",failed,failed,"));
    assert!(s.tuned[0].machines[3].error.as_deref().unwrap().contains("diverged"));
    assert!(s.tuned[0].machines[4].error.as_deref().unwrap().contains("panicked"));
}

#[test]
fn ablation_rows_and_parity() {
    let (d1, d2) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let rows = experiment(config(""), d1.path()).cmd_ablate().unwrap();
    experiment(config(""), d2.path()).cmd_ablate().unwrap();
    let names: Vec<_> = rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["GridCOBRA", "BOACOBRA", "GridDPE", "BOADPE", "BOAPaDPE", "GridPaDPE"]);
    for r in &rows {
        assert!(r.rmse_normalized > 0.0 && r.rmse_normalized <= 1.0);
        assert!(r.mape_normalized > 0.0 && r.mape_normalized <= 1.0);
    }
    assert!(rows.iter().any(|r| r.rmse_normalized == 1.0));
    assert_eq!(read(d1.path(), "ablation.csv").lines().count(), 7);
    assert_same_outputs(d1.path(), d2.path());

    let mut unfair = config("");
    unfair.ablation.tpe_budget = 60;
    unfair.ablation.grid = unfair.ablation.grid.with_resolution("epsilon", 10).with_resolution("partition_fraction", 5);
    let err = experiment(unfair, d1.path()).cmd_ablate().unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("budget parity"), "{err}");
}

#[test]
fn sweeps_write_one_row_per_value() {
    let dir = TempDir::new().unwrap();
    let out = experiment(config(""), dir.path()).cmd_sweep(SweepParameter::Alpha).unwrap();
    let xs: Vec<f64> = out[0].1.iter().map(|p| p.x).collect();
    assert_eq!(xs, [1.0 / 3.0, 2.0 / 3.0, 1.0]);
    let out = experiment(config("[sweep]\nepsilons = [0.02]"), dir.path()).cmd_sweep(SweepParameter::Epsilon).unwrap();
    assert_eq!(out[0].1.len(), 1);
    assert_eq!(read(dir.path(), "sweep_epsilon/sine.csv").lines().count(), 2);
    let out = experiment(config(""), dir.path()).cmd_sweep(SweepParameter::Epsilon).unwrap();
    assert_eq!(out[0].1.len(), 10);
}

#[test]
fn tune_and_dynamic_commands() {
    let dir = TempDir::new().unwrap();
    let exp = experiment(config(""), dir.path());
    let tuned = exp.cmd_tune().unwrap();
    assert!(tuned[0].ensembles.iter().all(|e| e.config.is_some() && e.validation.is_some()));
    assert!(!dir.path().join("runs.json").exists());

    let (pred, log) = exp.cmd_dynamic(Some(3)).unwrap();
    assert_eq!((pred.nrows(), log.len()), (3, 3));
    assert_eq!(read(dir.path(), "dynamic/sine.csv").lines().count(), 4);
    let manifest = Manifest::load(dir.path()).unwrap();
    assert!(manifest.artifacts.contains_key("tuned.json") && manifest.artifacts.contains_key("dynamic/sine.csv"));
}
