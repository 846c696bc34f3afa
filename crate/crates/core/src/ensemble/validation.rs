use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate, build_proximity_set, consensus_weights, EnsembleConfig, EnsembleError, Phase, ProximitySet};
use crate::data::FrameDataset;
use crate::machines::MachineBank;
use crate::Scalar;

/// Validation-set quality of one `(ε, α)` setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub mse: f64,
    pub mean_qualified: f64,
    pub fallback_rate: f64,
}

/// Machine predictions cached once so that many `(ε, α, norm)` settings can
/// be scored against the validation split without touching the machines.
///
/// The bank and partition are fixed; only the consensus parameters of the
/// config passed to [`evaluate`](Self::evaluate) are consulted.
pub struct ValidationProblem<T> {
    proximity: ProximitySet<T>,
    /// V × M × N.
    queries: Array3<T>,
    /// V × N.
    targets: Array2<T>,
}

impl<T: Scalar> ValidationProblem<T> {
    pub fn new(bank: &MachineBank<T>, dataset: &FrameDataset<T>, config: &EnsembleConfig) -> Result<Self, EnsembleError> {
        let val = dataset.validation();
        if val.is_empty() {
            return Err(EnsembleError::EmptyRegion("validation"));
        }
        let proximity = build_proximity_set(bank, dataset, config, Phase::Tune)?;
        let per_query = val
            .par_iter()
            .map(|p| bank.predict_all(&p.frame))
            .collect::<Result<Vec<_>, _>>()?;
        let (m, n) = (proximity.n_machines(), proximity.n_outputs());
        let mut queries = Array3::zeros((val.len(), m, n));
        for (mut dst, src) in queries.outer_iter_mut().zip(&per_query) {
            dst.assign(src);
        }
        let mut targets = Array2::zeros((val.len(), n));
        for (mut row, p) in targets.rows_mut().into_iter().zip(val) {
            row.assign(&p.target);
        }
        Ok(Self {
            proximity,
            queries,
            targets,
        })
    }

    pub fn proximity(&self) -> &ProximitySet<T> {
        &self.proximity
    }

    pub fn len(&self) -> usize {
        self.targets.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Validation predictions (V × N) and per-query diagnostics.
    pub fn predictions(&self, config: &EnsembleConfig) -> Result<(Array2<T>, Vec<super::Diagnostics>), EnsembleError> {
        config.validate()?;
        let mut out = Array2::zeros(self.targets.dim());
        let mut diags = Vec::with_capacity(self.len());
        for (q, mut row) in self.queries.axis_iter(Axis(0)).zip(out.rows_mut()) {
            let w = consensus_weights(&self.proximity, q, config)?;
            let f = aggregate(&self.proximity, &w, q);
            row.assign(&f.value);
            diags.push(f.diagnostics);
        }
        Ok((out, diags))
    }

    pub fn evaluate(&self, config: &EnsembleConfig) -> Result<ValidationScore, EnsembleError> {
        let (pred, diags) = self.predictions(config)?;
        let sq: f64 = (&pred - &self.targets).iter().map(|d| d.as_f64().powi(2)).sum();
        let v = self.len() as f64;
        Ok(ValidationScore {
            mse: sq / pred.len() as f64,
            mean_qualified: diags.iter().map(|d| d.qualified_count as f64).sum::<f64>() / v,
            fallback_rate: diags.iter().filter(|d| d.fallback).count() as f64 / v,
        })
    }
}
