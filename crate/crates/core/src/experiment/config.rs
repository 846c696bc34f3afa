use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::data::synthetic::SyntheticKind;
use crate::data::PipelineConfig;
use crate::dynamic::Rollout;
use crate::ensemble::{EnsembleConfig, Norm, Variant};
use crate::evaluation::MetricSpace;
use crate::hpo::{Domain, EnsembleSpace, GridConfig, SearchSpace, TpeConfig, TuneSettings};
use crate::machines::{MachineSpec, Registry};

/// Schema version this build reads and writes.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub length: usize,
    /// Defaults to the experiment seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSpec {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_columns: Option<Vec<String>>,
    #[serde(default = "yes")]
    pub drop_missing: bool,
}

fn yes() -> bool {
    true
}

/// A named series, either generated or read from CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSpec>,
    /// Replaces the top-level `[pipeline]` for this dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineConfig>,
}

/// A roster machine, optionally with a search space for its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
    /// Parameters tuned on validation MSE before the ensembles are built.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub space: BTreeMap<String, Domain>,
    /// TPE trials for `space`.
    #[serde(default = "machine_budget")]
    pub budget: usize,
}

fn machine_budget() -> usize {
    20
}

impl RosterEntry {
    pub fn spec(&self) -> MachineSpec {
        MachineSpec {
            kind: self.kind.clone(),
            name: self.name.clone(),
            params: self.params.clone(),
        }
    }

    pub fn search_space(&self) -> SearchSpace {
        self.space
            .iter()
            .fold(SearchSpace::new(), |s, (name, d)| s.add(name, d.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub variants: Vec<Variant>,
    pub norm: Norm,
    /// Tune ε, α and n₁/n; otherwise the fixed values below are used.
    pub tune: bool,
    pub epsilon: f64,
    pub alpha: f64,
    pub partition_fraction: f64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            norm: Norm::Euclidean,
            tune: true,
            epsilon: 0.05,
            alpha: 1.0,
            partition_fraction: 0.5,
        }
    }
}

impl EnsembleSection {
    pub fn base(&self, variant: Variant) -> EnsembleConfig {
        EnsembleConfig {
            epsilon: self.epsilon,
            alpha: if variant.tunes_alpha() { self.alpha } else { 1.0 },
            variant,
            partition_fraction: self.partition_fraction,
            norm: self.norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    /// `scaled` reports errors on the [0, 1] scale the models work in;
    /// `raw` maps forecasts back to the (cumsummed) input units first.
    pub metric_space: MetricSpace,
    /// Model the p-values are computed against.
    pub reference: String,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            metric_space: MetricSpace::Raw,
            reference: "DPE".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub variant: Variant,
    /// Defaults to `1/M, …, 1`.
    pub alphas: Option<Vec<f64>>,
    /// Defaults to ten log-spaced values over [0.001, 0.01].
    pub epsilons: Option<Vec<f64>>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            variant: Variant::Dpe,
            alphas: None,
            epsilons: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicSection {
    pub horizon: usize,
    pub refit_every: usize,
    pub rollout: Rollout,
    pub variant: Variant,
    /// Defaults to the first dataset.
    pub dataset: Option<String>,
}

impl Default for DynamicSection {
    fn default() -> Self {
        Self {
            horizon: 10,
            refit_every: 0,
            rollout: Rollout::Predicted,
            variant: Variant::Dpe,
            dataset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub tpe_budget: usize,
    pub tpe: TpeConfig,
    pub grid: GridConfig,
    pub space: EnsembleSpace,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            tpe_budget: 50,
            tpe: TpeConfig::default(),
            grid: GridConfig::default()
                .with_resolution("epsilon", 10)
                .with_resolution("partition_fraction", 5),
            space: EnsembleSpace::default(),
        }
    }
}

impl AblationSection {
    pub fn settings(&self, method: crate::hpo::Method) -> TuneSettings {
        TuneSettings {
            method,
            budget: self.tpe_budget,
            tpe: self.tpe,
            grid: self.grid.clone(),
            space: self.space.clone(),
        }
    }
}

/// Everything an experiment needs; one file, one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub machines: Vec<RosterEntry>,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub tuning: TuneSettings,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub dynamic: DynamicSection,
    #[serde(default)]
    pub ablation: AblationSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self, registry: &Registry<f64>) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.config_version != CONFIG_VERSION {
            return bad(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            ));
        }
        if self.datasets.is_empty() {
            return bad("no datasets".into());
        }
        for (i, d) in self.datasets.iter().enumerate() {
            if d.name.is_empty() || d.name.contains(['/', '\\']) {
                return bad(format!("dataset name `{}` is empty or contains a path separator", d.name));
            }
            if self.datasets[..i].iter().any(|e| e.name == d.name) {
                return bad(format!("duplicate dataset `{}`", d.name));
            }
            if d.synthetic.is_some() == d.csv.is_some() {
                return bad(format!("dataset `{}` needs exactly one of `synthetic` or `csv`", d.name));
            }
        }
        if self.machines.is_empty() {
            return bad("machine roster is empty".into());
        }
        let mut labels = Vec::new();
        for m in &self.machines {
            if !registry.contains(&m.kind) {
                return bad(format!(
                    "unknown machine kind `{}` (known: {})",
                    m.kind,
                    registry.kinds().collect::<Vec<_>>().join(", ")
                ));
            }
            let spec = m.spec();
            let label = spec.label().to_string();
            if labels.contains(&label) || Variant::ALL.iter().any(|v| v.to_string() == label) {
                return bad(format!("machine label `{label}` is duplicated or clashes with a variant name"));
            }
            labels.push(label);
            registry
                .build(&spec)
                .map_err(|e| ExperimentError::Config(format!("machine `{}`: {e}", spec.label())))?;
            m.search_space()
                .validate()
                .map_err(|e| ExperimentError::Config(format!("machine `{}`: {e}", spec.label())))?;
        }
        if self.ensemble.variants.is_empty() {
            return bad("no ensemble variants".into());
        }
        for v in &self.ensemble.variants {
            self.ensemble
                .base(*v)
                .validate()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        for s in [&self.tuning.space, &self.ablation.space] {
            for v in Variant::ALL {
                s.search_space(v)
                    .validate()
                    .map_err(|e| ExperimentError::Config(e.to_string()))?;
            }
        }
        self.tuning
            .tpe
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if self.tuning.budget == 0 || self.ablation.tpe_budget == 0 {
            return bad("tuning budgets must be at least 1".into());
        }
        if self.dynamic.horizon == 0 {
            return bad("dynamic horizon must be at least 1".into());
        }
        if let Some(d) = &self.dynamic.dataset {
            if !self.datasets.iter().any(|s| s.name == *d) {
                return bad(format!("dynamic dataset `{d}` is not declared"));
            }
        }
        Ok(())
    }

    pub fn roster(&self) -> Vec<MachineSpec> {
        self.machines.iter().map(RosterEntry::spec).collect()
    }

    pub fn pipeline_for(&self, dataset: &DatasetSpec) -> PipelineConfig {
        dataset.pipeline.clone().unwrap_or_else(|| self.pipeline.clone())
    }

    /// SHA-256 of the canonical JSON form. Every field that can change an
    /// output is part of the config, so equal hashes mean equal outputs.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }
}
