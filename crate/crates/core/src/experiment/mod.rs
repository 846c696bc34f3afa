//! Config-driven experiments: preparation, runs, tuning, ablations, sweeps
//! and dynamic forecasts, each writing its outputs under one directory.
//!
//! Every command records what it wrote in `manifest.json` together with the
//! config hash. Outputs depend only on the config (which includes the seed),
//! so rerunning a command reproduces them byte for byte.

mod config;
mod manifest;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    AblationSection, CsvSpec, DatasetSpec, DynamicSection, EnsembleSection, EvaluationSection, ExperimentConfig,
    RosterEntry, SweepSection, SyntheticSpec, CONFIG_VERSION,
};
pub use manifest::{sha256_hex, Manifest, MANIFEST_FILE};

use crate::data::{prepare_staged, read_csv, CsvSchema, DataError, FramePair, Prepared, Split};
use crate::dynamic::{dynamic_forecast, export_dynamic_log, DynamicConfig, RefitPlan, Rollout, StepLog};
use crate::ensemble::{training_range, write_forecasts_csv, Ensemble, EnsembleConfig, Phase, ValidationProblem, ValidationScore, Variant};
use crate::evaluation::{
    alpha_levels, log_spaced, sweep, write_sweep_csv, ComparisonReport, ForecastRun, MetricSpace, RunMetrics, SweepParameter,
    SweepPoint, MIN_PAIRS,
};
use crate::hpo::{tune_ensemble, tune_machine, Method, Outcome};
use crate::machines::{machine_seed, MachineBank, MachineSpec, Registry};
use crate::Series;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset `{dataset}`, {stage} stage: {source}")]
    Data {
        dataset: String,
        stage: String,
        #[source]
        source: DataError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl ExperimentError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for config errors, 2 for data errors, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Data { .. } => 2,
            Self::Io { .. } | Self::Runtime(_) => 3,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Runtime(e.to_string())
}

/// Order-independent child seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let d = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(tag.as_bytes()).finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Runs `f`, turning a panic into an error message.
fn guarded<R>(f: impl FnOnce() -> Result<R, String>) -> Result<R, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    })
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// A dataset after the pipeline, with the key of its cache entry.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub name: String,
    pub cache_key: String,
    pub prepared: Prepared<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub dataset: String,
    pub cache_key: String,
    pub rows: usize,
    pub columns: Vec<String>,
    pub split: Split,
}

/// One (dataset, model) cell of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<ForecastRun>,
}

/// Contents of `runs.json`, enough to rebuild every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunsFile {
    pub config_hash: String,
    pub metric_space: MetricSpace,
    pub reference: String,
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    pub records: Vec<RunRecord>,
}

impl RunsFile {
    pub fn record(&self, dataset: &str, model: &str) -> Option<&RunRecord> {
        self.records.iter().find(|r| r.dataset == dataset && r.model == model)
    }

    /// (dataset, model) cells that failed.
    pub fn failures(&self) -> Vec<(String, String)> {
        self.records
            .iter()
            .filter(|r| r.run.is_none())
            .map(|r| (r.dataset.clone(), r.model.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedMachine {
    pub label: String,
    pub spec: MachineSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedEnsemble {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<EnsembleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedDataset {
    pub dataset: String,
    pub machines: Vec<TunedMachine>,
    pub ensembles: Vec<TunedEnsemble>,
}

/// What `run` produced; failed cells are listed but do not abort the run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub runs: RunsFile,
    pub tuned: Vec<TunedDataset>,
    pub rmse: ComparisonReport,
    pub mape: ComparisonReport,
}

impl RunSummary {
    pub fn failures(&self) -> Vec<(String, String)> {
        self.runs.failures()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub rmse: f64,
    pub mape: f64,
    pub rmse_normalized: f64,
    pub mape_normalized: f64,
}

/// The six tuning-method × variant combinations compared by `ablate`.
pub const ABLATION_VARIANTS: [(Method, Variant); 6] = [
    (Method::Grid, Variant::Cobra),
    (Method::Tpe, Variant::Cobra),
    (Method::Grid, Variant::Dpe),
    (Method::Tpe, Variant::Dpe),
    (Method::Tpe, Variant::Padpe),
    (Method::Grid, Variant::Padpe),
];

pub fn ablation_label(method: Method, variant: Variant) -> String {
    format!("{method}{variant}")
}

/// Per-dataset products of the shared tune/run path.
struct DatasetOutput {
    tuned: TunedDataset,
    records: Vec<RunRecord>,
    artifacts: Vec<(String, Vec<u8>)>,
}

pub struct Experiment {
    config: ExperimentConfig,
    base_dir: PathBuf,
    out_dir: PathBuf,
    registry: Registry<f64>,
}

impl Experiment {
    /// `base_dir` anchors relative CSV paths in the config.
    pub fn new(config: ExperimentConfig, base_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Result<Self, ExperimentError> {
        Self::with_registry(config, base_dir, out_dir, Registry::default())
    }

    pub fn with_registry(
        config: ExperimentConfig,
        base_dir: impl Into<PathBuf>,
        out_dir: impl Into<PathBuf>,
        registry: Registry<f64>,
    ) -> Result<Self, ExperimentError> {
        config.validate(&registry)?;
        let models = Self::model_names(&config);
        if !models.contains(&config.evaluation.reference) {
            return Err(ExperimentError::Config(format!(
                "reference model `{}` is not in the run (models: {})",
                config.evaluation.reference,
                models.join(", ")
            )));
        }
        Ok(Self {
            config,
            base_dir: base_dir.into(),
            out_dir: out_dir.into(),
            registry,
        })
    }

    /// Loads a TOML config, optionally overriding its seed.
    pub fn from_file(path: &Path, out_dir: impl Into<PathBuf>, seed: Option<u64>) -> Result<Self, ExperimentError> {
        let mut config = ExperimentConfig::load(path)?;
        if let Some(s) = seed {
            config.seed = s;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(config, base, out_dir)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    fn model_names(config: &ExperimentConfig) -> Vec<String> {
        let mut models: Vec<String> = config.machines.iter().map(|m| m.spec().label().to_string()).collect();
        models.extend(config.ensemble.variants.iter().map(Variant::to_string));
        models
    }

    fn manifest(&self) -> Manifest {
        Manifest::open(&self.out_dir, &self.config.hash(), self.config.seed)
    }

    fn finish(&self, mut manifest: Manifest) -> Result<(), ExperimentError> {
        manifest.write(&self.out_dir, "config.resolved.toml", self.config.to_toml().as_bytes())?;
        manifest.save(&self.out_dir)
    }

    fn dataset_seed(&self, name: &str) -> u64 {
        derive_seed(self.config.seed, &format!("dataset/{name}"))
    }

    fn dataset(&self, name: &str) -> Result<&DatasetSpec, ExperimentError> {
        self.config
            .datasets
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| ExperimentError::Config(format!("unknown dataset `{name}`")))
    }

    fn load_series(&self, spec: &DatasetSpec) -> Result<(Series, serde_json::Value), ExperimentError> {
        if let Some(s) = &spec.synthetic {
            let seed = s.seed.unwrap_or(self.config.seed);
            return Ok((s.kind.generate(s.length, seed), serde_json::json!({ "seed": seed })));
        }
        let c = spec.csv.as_ref().expect("validated: csv or synthetic");
        let path = self.base_dir.join(&c.path);
        let data_err = |source| ExperimentError::Data {
            dataset: spec.name.clone(),
            stage: "load".into(),
            source,
        };
        let bytes = std::fs::read(&path).map_err(|source| data_err(DataError::Io { path: path.clone(), source }))?;
        let schema = CsvSchema {
            timestamp_column: c.timestamp_column.clone(),
            feature_columns: c.feature_columns.clone(),
            drop_missing: c.drop_missing,
        };
        let series = read_csv(bytes.as_slice(), &schema).map_err(data_err)?;
        Ok((series, serde_json::json!({ "sha256": sha256_hex(&bytes) })))
    }

    /// Runs the pipeline for one dataset, reusing `out_dir/cache` when the
    /// pipeline, dataset spec and input bytes are unchanged.
    pub fn prepare_dataset(&self, name: &str) -> Result<PreparedDataset, ExperimentError> {
        let spec = self.dataset(name)?;
        let (series, fingerprint) = self.load_series(spec)?;
        let pipeline = self.config.pipeline_for(spec);
        let key_src = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "dataset": spec,
            "pipeline": pipeline,
            "input": fingerprint,
        });
        let cache_key = sha256_hex(&serde_json::to_vec(&key_src).expect("key serializes"));
        let cache_path = self
            .out_dir
            .join("cache")
            .join(format!("{}-{}.json", file_safe(name), &cache_key[..16]));
        if let Some(prepared) = std::fs::read(&cache_path)
            .ok()
            .and_then(|b| serde_json::from_slice::<Prepared<f64>>(&b).ok())
        {
            log::debug!("{name}: cache hit {}", cache_path.display());
            return Ok(PreparedDataset {
                name: name.to_string(),
                cache_key,
                prepared,
            });
        }
        let prepared = prepare_staged(&series, &pipeline).map_err(|(stage, source)| ExperimentError::Data {
            dataset: name.to_string(),
            stage: stage.to_string(),
            source,
        })?;
        if let Some(dir) = cache_path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
        }
        let bytes = serde_json::to_vec(&prepared).expect("prepared data serializes");
        std::fs::write(&cache_path, bytes).map_err(|e| ExperimentError::io(&cache_path, e))?;
        Ok(PreparedDataset {
            name: name.to_string(),
            cache_key,
            prepared,
        })
    }

    fn prepare_all(&self) -> Result<Vec<PreparedDataset>, ExperimentError> {
        self.config.datasets.iter().map(|d| self.prepare_dataset(&d.name)).collect()
    }

    /// Prepares every dataset and writes `prepared.json`.
    pub fn cmd_prepare(&self) -> Result<Vec<PrepareSummary>, ExperimentError> {
        let mut manifest = self.manifest();
        let summaries: Vec<PrepareSummary> = self
            .prepare_all()?
            .into_iter()
            .map(|p| PrepareSummary {
                dataset: p.name,
                cache_key: p.cache_key,
                rows: p.prepared.transformed.len(),
                columns: p.prepared.transformed.column_names().to_vec(),
                split: p.prepared.dataset.split(),
            })
            .collect();
        manifest.write(&self.out_dir, "prepared.json", &pretty(&summaries))?;
        self.finish(manifest)?;
        Ok(summaries)
    }

    /// Tunes machines and ensembles on validation data without touching the
    /// test split; writes `tuned.json` and the trial logs.
    pub fn cmd_tune(&self) -> Result<Vec<TunedDataset>, ExperimentError> {
        let prepared = self.prepare_all()?;
        let outputs: Vec<DatasetOutput> = prepared.par_iter().map(|p| self.process(p, false)).collect();
        let mut manifest = self.manifest();
        let mut tuned = Vec::new();
        for out in outputs {
            for (rel, bytes) in &out.artifacts {
                manifest.write(&self.out_dir, rel, bytes)?;
            }
            tuned.push(out.tuned);
        }
        manifest.write(&self.out_dir, "tuned.json", &pretty(&tuned))?;
        self.finish(manifest)?;
        Ok(tuned)
    }

    /// Tunes, fits and forecasts the test split for every machine and
    /// ensemble variant on every dataset, then writes the reports. A failing
    /// cell is recorded and the rest of the run continues.
    pub fn cmd_run(&self) -> Result<RunSummary, ExperimentError> {
        let prepared = self.prepare_all()?;
        let outputs: Vec<DatasetOutput> = prepared.par_iter().map(|p| self.process(p, true)).collect();
        let mut manifest = self.manifest();
        let mut tuned = Vec::new();
        let mut records = Vec::new();
        for out in outputs {
            for (rel, bytes) in &out.artifacts {
                manifest.write(&self.out_dir, rel, bytes)?;
            }
            tuned.push(out.tuned);
            records.extend(out.records);
        }
        let runs = RunsFile {
            config_hash: self.config.hash(),
            metric_space: self.config.evaluation.metric_space,
            reference: self.config.evaluation.reference.clone(),
            datasets: self.config.datasets.iter().map(|d| d.name.clone()).collect(),
            models: Self::model_names(&self.config),
            records,
        };
        manifest.write(&self.out_dir, "runs.json", &pretty(&runs))?;
        manifest.write(&self.out_dir, "tuned.json", &pretty(&tuned))?;
        let (rmse, mape) = write_reports(&self.out_dir, &mut manifest, &runs)?;
        self.finish(manifest)?;
        let summary = RunSummary { runs, tuned, rmse, mape };
        for (d, m) in summary.failures() {
            log::warn!("{d}/{m} failed");
        }
        Ok(summary)
    }

    /// Rebuilds the metric matrices and comparison report from `runs.json`.
    pub fn cmd_report(&self) -> Result<(ComparisonReport, ComparisonReport), ExperimentError> {
        let path = self.out_dir.join("runs.json");
        let bytes = std::fs::read(&path).map_err(|e| ExperimentError::io(&path, e))?;
        let runs: RunsFile = serde_json::from_slice(&bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let mut manifest = self.manifest();
        let reports = write_reports(&self.out_dir, &mut manifest, &runs)?;
        manifest.save(&self.out_dir)?;
        Ok(reports)
    }

    /// Tunes every roster machine that has a search space, fits each machine
    /// alone (so a failure only takes out its own column), then tunes and
    /// fits every ensemble variant over the machines that survived.
    fn process(&self, p: &PreparedDataset, with_test: bool) -> DatasetOutput {
        let name = &p.name;
        let seed = self.dataset_seed(name);
        let dataset = &p.prepared.dataset;
        let tpe = self.config.tuning.tpe;
        let mut artifacts = Vec::new();
        let mut records = Vec::new();
        let mut machines = Vec::new();
        let mut survivors = Vec::new();

        for (m, entry) in self.config.machines.iter().enumerate() {
            let mut spec = entry.spec();
            let label = spec.label().to_string();
            let mut validation_mse = None;
            let mut result: Result<(), String> = Ok(());
            if !entry.space.is_empty() {
                let space = entry.search_space();
                let tuned = guarded(|| {
                    tune_machine(
                        &self.registry,
                        &spec,
                        &space,
                        dataset.train(),
                        dataset.validation(),
                        entry.budget,
                        &tpe,
                        derive_seed(seed, &format!("machine/{label}")),
                    )
                    .map_err(|e| e.to_string())
                });
                match tuned {
                    Ok((s, outcome)) => {
                        validation_mse = Some(outcome.best_value);
                        artifacts.push((format!("trials/{}/{}.csv", file_safe(name), file_safe(&label)), trials_csv(&outcome)));
                        spec = s;
                    }
                    Err(e) => result = Err(format!("tuning failed: {e}")),
                }
            }
            if result.is_ok() {
                let fitted = guarded(|| {
                    let mut machine = self.registry.build(&spec).map_err(|e| e.to_string())?;
                    machine.fit(dataset.train(), machine_seed(seed, m)).map_err(|e| e.to_string())?;
                    if !with_test {
                        return Ok(None);
                    }
                    let test = dataset.test();
                    let mut values = Array2::zeros((test.len(), dataset.n_features()));
                    for (mut row, pair) in values.rows_mut().into_iter().zip(test) {
                        let y = machine.predict(&pair.frame).map_err(|e| e.to_string())?;
                        if y.iter().any(|v| !v.is_finite()) {
                            return Err("non-finite prediction".into());
                        }
                        row.assign(&y);
                    }
                    Ok(Some(values))
                });
                match fitted {
                    Ok(Some(pred)) => match forecast_run(p, &label, pred, 0) {
                        Ok(run) => records.push(ok_record(name, &label, run)),
                        Err(e) => result = Err(e.to_string()),
                    },
                    Ok(None) => {}
                    Err(e) => result = Err(e),
                }
            }
            if let Err(e) = &result {
                log::warn!("{name}: machine {label} failed: {e}");
                if with_test {
                    records.push(failed_record(name, &label, e));
                }
            } else {
                survivors.push(spec.clone());
            }
            machines.push(TunedMachine {
                label,
                spec,
                validation_mse,
                error: result.err(),
            });
        }

        let mut ensembles = Vec::new();
        for &variant in &self.config.ensemble.variants {
            let label = variant.to_string();
            let mut tuned = TunedEnsemble {
                variant,
                config: None,
                validation: None,
                error: None,
            };
            let result = guarded(|| {
                if survivors.is_empty() {
                    return Err("no machine survived fitting".into());
                }
                let base = self.config.ensemble.base(variant);
                let config = if self.config.ensemble.tune {
                    let r = tune_ensemble(&self.registry, &survivors, dataset, &base, &self.config.tuning, seed)
                        .map_err(|e| e.to_string())?;
                    artifacts.push((format!("trials/{}/{}.csv", file_safe(name), label), trials_csv(&r.outcome)));
                    tuned.validation = Some(r.score);
                    r.config
                } else {
                    base
                };
                tuned.config = Some(config);
                if !with_test {
                    return Ok(());
                }
                let ens = Ensemble::fit(&self.registry, &survivors, dataset, config, Phase::Test, seed).map_err(|e| e.to_string())?;
                let test = dataset.test();
                let (values, diags) = ens.predict_many(test.iter().map(|t| &t.frame)).map_err(|e| e.to_string())?;
                let fallbacks = diags.iter().filter(|d| d.fallback).count();
                let run = forecast_run(p, &label, values, fallbacks).map_err(|e| e.to_string())?;
                let stamps = target_labels(p, test);
                let mut csv = Vec::new();
                write_forecasts_csv(&mut csv, p.prepared.transformed.column_names(), &stamps, &run.predicted_raw, &diags)
                    .map_err(|e| e.to_string())?;
                artifacts.push((format!("forecasts/{}/{}.csv", file_safe(name), label), csv));
                records.push(ok_record(name, &label, run));
                Ok(())
            });
            if let Err(e) = result {
                log::warn!("{name}: {label} failed: {e}");
                if with_test {
                    records.push(failed_record(name, &label, &e));
                }
                tuned.error = Some(e);
            }
            ensembles.push(tuned);
        }

        DatasetOutput {
            tuned: TunedDataset {
                dataset: name.clone(),
                machines,
                ensembles,
            },
            records,
            artifacts,
        }
    }

    /// Tuning-method ablation: each of [`ABLATION_VARIANTS`] is tuned,
    /// refitted and scored on the test split of every dataset. Errors are
    /// averaged over datasets and divided by the largest value per metric.
    pub fn cmd_ablate(&self) -> Result<Vec<AblationRow>, ExperimentError> {
        let ab = &self.config.ablation;
        for (method, variant) in ABLATION_VARIANTS {
            let trials = ab.settings(method).trial_count(variant);
            if method == Method::Grid && trials < ab.tpe_budget {
                return Err(ExperimentError::Config(format!(
                    "budget parity: the {variant} grid has {trials} points, fewer than the TPE budget of {}",
                    ab.tpe_budget
                )));
            }
        }
        let prepared = self.prepare_all()?;
        let roster = self.config.roster();
        let space = self.config.evaluation.metric_space;

        let cells: Vec<Vec<(f64, f64)>> = ABLATION_VARIANTS
            .par_iter()
            .map(|&(method, variant)| {
                let label = ablation_label(method, variant);
                prepared
                    .iter()
                    .map(|p| {
                        let seed = self.dataset_seed(&p.name);
                        let dataset = &p.prepared.dataset;
                        let r = tune_ensemble(&self.registry, &roster, dataset, &self.config.ensemble.base(variant), &ab.settings(method), seed)
                            .map_err(|e| runtime(format!("{label} on {}: {e}", p.name)))?;
                        let ens = Ensemble::fit(&self.registry, &roster, dataset, r.config, Phase::Test, seed).map_err(runtime)?;
                        let (values, diags) = ens.predict_many(dataset.test().iter().map(|t| &t.frame)).map_err(runtime)?;
                        let fallbacks = diags.iter().filter(|d| d.fallback).count();
                        let m = forecast_run(p, &label, values, fallbacks)?.metrics(space).map_err(runtime)?;
                        let mape = m
                            .mape
                            .ok_or_else(|| runtime(format!("{label} on {}: MAPE undefined (zero actual)", p.name)))?;
                        Ok((m.rmse, mape))
                    })
                    .collect::<Result<Vec<_>, ExperimentError>>()
            })
            .collect::<Result<_, _>>()?;

        let mean = |v: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
        let averaged: Vec<(f64, f64)> = cells.iter().map(|c| (mean(c, |x| x.0), mean(c, |x| x.1))).collect();
        let max_rmse = averaged.iter().map(|a| a.0).fold(f64::MIN, f64::max);
        let max_mape = averaged.iter().map(|a| a.1).fold(f64::MIN, f64::max);
        let rows: Vec<AblationRow> = ABLATION_VARIANTS
            .iter()
            .zip(&averaged)
            .map(|(&(method, variant), &(rmse, mape))| AblationRow {
                variant: ablation_label(method, variant),
                rmse,
                mape,
                rmse_normalized: rmse / max_rmse,
                mape_normalized: mape / max_mape,
            })
            .collect();

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["variant", "rmse", "mape", "rmse_normalized", "mape_normalized"]).map_err(runtime)?;
        for r in &rows {
            w.write_record([
                r.variant.clone(),
                r.rmse.to_string(),
                r.mape.to_string(),
                r.rmse_normalized.to_string(),
                r.mape_normalized.to_string(),
            ])
            .map_err(runtime)?;
        }
        let bytes = w.into_inner().map_err(runtime)?;
        let mut manifest = self.manifest();
        manifest.write(&self.out_dir, "ablation.csv", &bytes)?;
        self.finish(manifest)?;
        Ok(rows)
    }

    /// Validation-set sensitivity curve over α or ε for every dataset,
    /// other parameters held at the `[ensemble]` values.
    pub fn cmd_sweep(&self, parameter: SweepParameter) -> Result<Vec<(String, Vec<SweepPoint>)>, ExperimentError> {
        let variant = self.config.sweep.variant;
        let base = self.config.ensemble.base(variant);
        let roster = self.config.roster();
        let values = match parameter {
            SweepParameter::Alpha => self.config.sweep.alphas.clone().unwrap_or_else(|| alpha_levels(roster.len())),
            SweepParameter::Epsilon => self.config.sweep.epsilons.clone().unwrap_or_else(|| log_spaced(0.001, 0.01, 10)),
        };
        let tag = match parameter {
            SweepParameter::Alpha => "alpha",
            SweepParameter::Epsilon => "epsilon",
        };
        let mut manifest = self.manifest();
        let mut out = Vec::new();
        for p in self.prepare_all()? {
            let dataset = &p.prepared.dataset;
            let range = training_range(dataset, &base).map_err(runtime)?;
            let bank = MachineBank::fit(&self.registry, &roster, &dataset.pairs()[range], self.dataset_seed(&p.name)).map_err(runtime)?;
            let problem = ValidationProblem::new(&bank, dataset, &base).map_err(runtime)?;
            let points = sweep(&problem, &base, parameter, &values).map_err(runtime)?;
            let mut csv = Vec::new();
            write_sweep_csv(&mut csv, &points).map_err(runtime)?;
            manifest.write(&self.out_dir, &format!("sweep_{tag}/{}.csv", file_safe(&p.name)), &csv)?;
            out.push((p.name, points));
        }
        self.finish(manifest)?;
        Ok(out)
    }

    /// Iterated forecast from the end of the validation split of the
    /// `[dynamic]` dataset, written to `dynamic/<dataset>.csv`.
    pub fn cmd_dynamic(&self, horizon: Option<usize>) -> Result<(Array2<f64>, Vec<StepLog>), ExperimentError> {
        let d = &self.config.dynamic;
        let horizon = horizon.unwrap_or(d.horizon);
        if horizon == 0 {
            return Err(ExperimentError::Config("horizon must be at least 1".into()));
        }
        let name = d.dataset.clone().unwrap_or_else(|| self.config.datasets[0].name.clone());
        let p = self.prepare_dataset(&name)?;
        let seed = self.dataset_seed(&name);
        let roster = self.config.roster();
        let dataset = &p.prepared.dataset;
        let base = self.config.ensemble.base(d.variant);
        let config = if self.config.ensemble.tune {
            tune_ensemble(&self.registry, &roster, dataset, &base, &self.config.tuning, seed)
                .map_err(runtime)?
                .config
        } else {
            base
        };
        let ens = Ensemble::fit(&self.registry, &roster, dataset, config, Phase::Test, seed).map_err(runtime)?;

        let split = dataset.split();
        let window = dataset.window();
        let history_rows = split.n_train + split.n_val + window;
        let transformed = &p.prepared.transformed;
        let initial = transformed.head(history_rows);
        let future = transformed.values().slice(ndarray::s![history_rows.., ..]).to_owned();
        let actuals = (d.rollout == Rollout::Backtest).then(|| future.view());
        let pipeline = self.config.pipeline_for(self.dataset(&name)?);
        let plan = RefitPlan {
            registry: &self.registry,
            roster: &roster,
            val_frac: pipeline.val_frac,
            seed,
        };
        let cfg = DynamicConfig {
            horizon,
            refit_every: d.refit_every,
            rollout: d.rollout,
        };
        let (pred, state) = dynamic_forecast(&initial, &ens, window, &cfg, actuals, Some(&plan)).map_err(runtime)?;
        let mut csv = Vec::new();
        export_dynamic_log(&state.column_names, &state.log, &mut csv).map_err(runtime)?;
        let mut manifest = self.manifest();
        manifest.write(&self.out_dir, &format!("dynamic/{}.csv", file_safe(&name)), &csv)?;
        self.finish(manifest)?;
        Ok((pred, state.log))
    }
}

fn pretty<S: Serialize>(value: &S) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn trials_csv(outcome: &Outcome) -> Vec<u8> {
    let mut buf = Vec::new();
    outcome.memory.write_csv(&mut buf).expect("in-memory write");
    buf
}

fn ok_record(dataset: &str, model: &str, run: ForecastRun) -> RunRecord {
    RunRecord {
        dataset: dataset.to_string(),
        model: model.to_string(),
        error: None,
        run: Some(run),
    }
}

fn failed_record(dataset: &str, model: &str, error: &str) -> RunRecord {
    RunRecord {
        dataset: dataset.to_string(),
        model: model.to_string(),
        error: Some(error.to_string()),
        run: None,
    }
}

/// Series row each pair's target sits on.
fn target_rows(p: &PreparedDataset, pairs: &[FramePair<f64>]) -> Vec<usize> {
    let w = p.prepared.dataset.window();
    pairs.iter().map(|t| t.frame.start_index() + w).collect()
}

fn target_labels(p: &PreparedDataset, pairs: &[FramePair<f64>]) -> Vec<String> {
    let stamps = p.prepared.transformed.timestamps();
    target_rows(p, pairs).into_iter().map(|r| stamps[r].label.clone()).collect()
}

/// Test-split run from scaled predictions; raw values are the predictions
/// mapped back through the training scaler and the transformed series rows.
fn forecast_run(p: &PreparedDataset, model: &str, predicted: Array2<f64>, fallback_count: usize) -> Result<ForecastRun, ExperimentError> {
    let test = p.prepared.dataset.test();
    let n = p.prepared.dataset.n_features();
    let mut actual = Array2::zeros((test.len(), n));
    for (mut row, pair) in actual.rows_mut().into_iter().zip(test) {
        row.assign(&pair.target);
    }
    let predicted_raw = p.prepared.scaler.inverse_scale(predicted.view()).map_err(runtime)?;
    let actual_raw = p
        .prepared
        .transformed
        .values()
        .select(Axis(0), &target_rows(p, test));
    Ok(ForecastRun {
        model: model.to_string(),
        dataset: p.name.clone(),
        predicted,
        actual,
        predicted_raw,
        actual_raw,
        fallback_count,
    })
}

/// Mean absolute percentage error of each step, averaged over dimensions.
fn step_ape(run: &ForecastRun, space: MetricSpace) -> Option<Vec<f64>> {
    let (a, p) = match space {
        MetricSpace::Raw => (&run.actual_raw, &run.predicted_raw),
        MetricSpace::Scaled => (&run.actual, &run.predicted),
    };
    a.rows()
        .into_iter()
        .zip(p.rows())
        .map(|(ar, pr)| {
            let mut s = 0.0;
            for (x, y) in ar.iter().zip(pr.iter()) {
                if *x == 0.0 {
                    return None;
                }
                s += ((x - y) / x).abs();
            }
            Some(100.0 * s / ar.len() as f64)
        })
        .collect()
}

/// Writes `metrics_rmse.csv`, `metrics_mape.csv`, `metrics.json` and
/// `comparison.json` from a runs file.
///
/// With fewer datasets than the signed-rank test needs, p-values are taken
/// over per-step errors pooled across datasets instead.
pub fn write_reports(out_dir: &Path, manifest: &mut Manifest, runs: &RunsFile) -> Result<(ComparisonReport, ComparisonReport), ExperimentError> {
    let space = runs.metric_space;
    let shape = (runs.datasets.len(), runs.models.len());
    let mut rmse = Array2::from_elem(shape, f64::NAN);
    let mut mape = Array2::from_elem(shape, f64::NAN);
    let mut per_cell: Vec<serde_json::Value> = Vec::new();
    for (i, d) in runs.datasets.iter().enumerate() {
        for (j, m) in runs.models.iter().enumerate() {
            let Some(run) = runs.record(d, m).and_then(|r| r.run.as_ref()) else {
                continue;
            };
            let metrics: RunMetrics = run.metrics(space).map_err(runtime)?;
            rmse[[i, j]] = metrics.rmse;
            mape[[i, j]] = metrics.mape.unwrap_or(f64::NAN);
            per_cell.push(serde_json::json!({
                "dataset": d,
                "model": m,
                "metrics": metrics,
                "fallback_count": run.fallback_count,
                "steps": run.actual.nrows(),
            }));
        }
    }

    let pooled = |f: &dyn Fn(&ForecastRun) -> Option<Vec<f64>>| -> Vec<Option<Vec<f64>>> {
        runs.models
            .iter()
            .map(|m| {
                let mut all = Vec::new();
                for d in &runs.datasets {
                    all.extend(f(runs.record(d, m)?.run.as_ref()?)?);
                }
                Some(all)
            })
            .collect()
    };
    let build = |name: &str, matrix: &Array2<f64>, steps: Vec<Option<Vec<f64>>>| -> Result<ComparisonReport, ExperimentError> {
        let report = ComparisonReport::from_matrix(name, runs.datasets.clone(), runs.models.clone(), matrix, &runs.reference)
            .map_err(runtime)?;
        Ok(if runs.datasets.len() < MIN_PAIRS {
            report.with_paired_samples("steps", &steps)
        } else {
            report
        })
    };
    let rmse_report = build("rmse", &rmse, pooled(&|r| Some(r.squared_errors(space))))?;
    let mape_report = build("mape", &mape, pooled(&|r| step_ape(r, space)))?;

    for (file, report) in [("metrics_rmse.csv", &rmse_report), ("metrics_mape.csv", &mape_report)] {
        let mut buf = Vec::new();
        report.write_matrix_csv(&mut buf).map_err(runtime)?;
        manifest.write(out_dir, file, &buf)?;
    }
    manifest.write(out_dir, "metrics.json", &pretty(&per_cell))?;
    let comparison = serde_json::json!({ "rmse": rmse_report, "mape": mape_report });
    manifest.write(out_dir, "comparison.json", &pretty(&comparison))?;
    Ok((rmse_report, mape_report))
}
