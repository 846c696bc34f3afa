use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::grid::{grid_search, GridConfig};
use super::space::{ParamValue, Point, SearchSpace};
use super::tpe::{optimize, TpeConfig};
use super::{HpoError, Outcome};
use crate::data::{partition_sizes, FrameDataset, FramePair};
use crate::ensemble::{training_range, EnsembleConfig, EnsembleError, ValidationProblem, ValidationScore, Variant};
use crate::machines::{MachineBank, MachineSpec, Registry};
use crate::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Tpe,
    Grid,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Tpe => "BOA",
            Method::Grid => "Grid",
        })
    }
}

/// Ranges searched for the ensemble parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpace {
    /// Log-uniform bounds for ε.
    pub epsilon: [f64; 2],
    /// Candidate consensus levels.
    pub alphas: Vec<f64>,
    /// Uniform bounds for n₁/n.
    pub partition_fraction: [f64; 2],
}

impl Default for EnsembleSpace {
    fn default() -> Self {
        Self {
            epsilon: [1e-3, 1.0],
            alphas: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            partition_fraction: [0.05, 0.95],
        }
    }
}

impl EnsembleSpace {
    /// Dimensions tuned for `variant`: ε always, α unless COBRA, and the
    /// partition fraction for the partitioned variants.
    pub fn search_space(&self, variant: Variant) -> SearchSpace {
        let mut s = SearchSpace::new().log_uniform("epsilon", self.epsilon[0], self.epsilon[1]);
        if variant.tunes_alpha() {
            s = s.choice("alpha", self.alphas.iter().map(|&a| ParamValue::Num(a)).collect());
        }
        if variant.is_partitioned() {
            s = s.uniform("partition_fraction", self.partition_fraction[0], self.partition_fraction[1]);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneSettings {
    pub method: Method,
    /// Trials for TPE; grids are sized by `grid` instead.
    pub budget: usize,
    pub tpe: TpeConfig,
    pub grid: GridConfig,
    pub space: EnsembleSpace,
}

impl Default for TuneSettings {
    fn default() -> Self {
        Self {
            method: Method::Tpe,
            budget: 60,
            tpe: TpeConfig::default(),
            grid: GridConfig::default(),
            space: EnsembleSpace::default(),
        }
    }
}

impl TuneSettings {
    /// Trials the configured method will run for `variant`.
    pub fn trial_count(&self, variant: Variant) -> usize {
        match self.method {
            Method::Tpe => self.budget,
            Method::Grid => super::grid::grid_size(&self.space.search_space(variant), &self.grid),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TuneResult {
    pub config: EnsembleConfig,
    pub score: ValidationScore,
    pub outcome: Outcome,
}

fn apply_point(base: &EnsembleConfig, p: &Point) -> EnsembleConfig {
    let mut c = *base;
    let num = |k: &str| p.get(k).and_then(ParamValue::as_f64);
    if let Some(e) = num("epsilon") {
        c.epsilon = e;
    }
    c.alpha = if c.variant.tunes_alpha() { num("alpha").unwrap_or(c.alpha) } else { 1.0 };
    if let Some(f) = num("partition_fraction") {
        c.partition_fraction = f;
    }
    c
}

/// Tunes ε, α and n₁/n on validation MSE.
///
/// Machines are fitted once per distinct training region (one for DPE, one
/// per `n₁` otherwise) and their predictions cached, so each trial only
/// recomputes consensus weights.
pub fn tune_ensemble<T: Scalar>(
    registry: &Registry<T>,
    roster: &[MachineSpec],
    dataset: &FrameDataset<T>,
    base: &EnsembleConfig,
    settings: &TuneSettings,
    seed: u64,
) -> Result<TuneResult, HpoError> {
    if dataset.validation().is_empty() {
        return Err(EnsembleError::EmptyRegion("validation").into());
    }
    let space = settings.space.search_space(base.variant);
    let cache: RefCell<HashMap<usize, Result<ValidationProblem<T>, String>>> = RefCell::new(HashMap::new());

    let score = |cfg: &EnsembleConfig| -> Result<ValidationScore, String> {
        cfg.validate().map_err(|e| e.to_string())?;
        let key = if cfg.variant.is_partitioned() {
            partition_sizes(dataset.split().n_train, cfg.partition_fraction)
                .map_err(|e| e.to_string())?
                .0
        } else {
            dataset.split().n_train
        };
        let mut cache = cache.borrow_mut();
        let problem = cache.entry(key).or_insert_with(|| {
            let range = training_range(dataset, cfg).map_err(|e| e.to_string())?;
            let bank = MachineBank::fit(registry, roster, &dataset.pairs()[range], seed).map_err(|e| e.to_string())?;
            ValidationProblem::new(&bank, dataset, cfg).map_err(|e| e.to_string())
        });
        match problem {
            Ok(p) => p.evaluate(cfg).map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        }
    };
    let objective = |p: &Point| score(&apply_point(base, p)).map(|s| s.mse);

    let outcome = match settings.method {
        Method::Tpe => optimize(objective, &space, settings.budget, &settings.tpe, seed)?,
        Method::Grid => grid_search(objective, &space, &settings.grid)?,
    };
    if outcome.memory.trials().iter().all(|t| t.failed) {
        return Err(HpoError::NoValidTrial);
    }
    let config = apply_point(base, &outcome.best);
    let best = score(&config).map_err(HpoError::Objective)?;
    log::info!(
        "{} {}: epsilon={:.4} alpha={} fraction={:.3} val_mse={:.3e}",
        settings.method,
        config.variant,
        config.epsilon,
        config.alpha,
        config.partition_fraction,
        best.mse
    );
    Ok(TuneResult {
        config,
        score: best,
        outcome,
    })
}

/// Tunes one machine's hyperparameters by TPE on validation MSE. Point
/// values override the spec's fixed params.
#[allow(clippy::too_many_arguments)]
pub fn tune_machine<T: Scalar>(
    registry: &Registry<T>,
    spec: &MachineSpec,
    space: &SearchSpace,
    train: &[FramePair<T>],
    validation: &[FramePair<T>],
    budget: usize,
    config: &TpeConfig,
    seed: u64,
) -> Result<(MachineSpec, Outcome), HpoError> {
    if validation.is_empty() {
        return Err(EnsembleError::EmptyRegion("validation").into());
    }
    let with_point = |p: &Point| -> MachineSpec {
        let mut params = match &spec.params {
            Value::Object(m) => m.clone(),
            _ => serde_json::Map::new(),
        };
        if let Value::Object(extra) = space.to_json(p) {
            params.extend(extra);
        }
        MachineSpec {
            params: Value::Object(params),
            ..spec.clone()
        }
    };
    let objective = |p: &Point| -> Result<f64, String> {
        let s = with_point(p);
        let mut m = registry.build(&s).map_err(|e| e.to_string())?;
        m.fit(train, seed).map_err(|e| e.to_string())?;
        let mut sq = 0.0;
        let mut count = 0usize;
        for pair in validation {
            let y = m.predict(&pair.frame).map_err(|e| e.to_string())?;
            for (a, b) in y.iter().zip(pair.target.iter()) {
                sq += (*a - *b).as_f64().powi(2);
                count += 1;
            }
        }
        Ok(sq / count as f64)
    };
    let outcome = optimize(objective, space, budget, config, seed)?;
    if outcome.memory.trials().iter().all(|t| t.failed) {
        return Err(HpoError::NoValidTrial);
    }
    Ok((with_point(&outcome.best), outcome))
}
