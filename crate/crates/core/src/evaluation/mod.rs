//! Forecast metrics, model comparison and sensitivity sweeps.

mod metrics;
mod wilcoxon;

use std::io::Write;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{mape, rmse, ForecastRun, MetricSpace, RunMetrics};
pub use wilcoxon::{midranks, wilcoxon_signed_rank, WilcoxonResult, EXACT_LIMIT, MIN_PAIRS};

use crate::ensemble::{EnsembleConfig, EnsembleError, ValidationProblem};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {actual} actual values, {predicted} predicted")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("empty input")]
    Empty,
    #[error("actual value at position {0} is zero; MAPE is undefined")]
    ZeroActual(usize),
    #[error("need at least {needed} paired observations, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("all paired differences are zero")]
    AllDifferencesZero,
    #[error("non-finite value")]
    NonFinite,
    #[error("metric matrix has a missing cell at ({row}, {col})")]
    MissingCell { row: usize, col: usize },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

/// Mean per-dataset rank of each model (1 = lowest metric, ties share the
/// midrank). Rows are datasets, columns models; every cell must be finite.
pub fn average_ranks(matrix: &Array2<f64>) -> Result<Vec<f64>, EvalError> {
    let (rows, cols) = matrix.dim();
    if rows == 0 || cols == 0 {
        return Err(EvalError::Empty);
    }
    if let Some(((r, c), _)) = matrix.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(EvalError::MissingCell { row: r, col: c });
    }
    let mut sums = vec![0.0; cols];
    for row in matrix.axis_iter(Axis(0)) {
        for (s, r) in sums.iter_mut().zip(midranks(&row.to_vec())) {
            *s += r;
        }
    }
    Ok(sums.into_iter().map(|s| s / rows as f64).collect())
}

/// Ranks and reference-model p-values over a datasets × models matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub metric: String,
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    /// `None` marks a failed cell.
    pub matrix: Vec<Vec<Option<f64>>>,
    /// `None` for models with a failed cell; ranks are computed among the
    /// remaining models only.
    pub average_ranks: Vec<Option<f64>>,
    pub reference: String,
    /// What the paired samples behind `p_values` are: `datasets` or `steps`.
    pub p_value_basis: String,
    /// Two-sided Wilcoxon p-value of each model against the reference;
    /// `None` for the reference itself and where the test is undefined.
    pub p_values: Vec<Option<f64>>,
}

impl ComparisonReport {
    /// `matrix` uses NaN for failed cells.
    pub fn from_matrix(
        metric: &str,
        datasets: Vec<String>,
        models: Vec<String>,
        matrix: &Array2<f64>,
        reference: &str,
    ) -> Result<Self, EvalError> {
        if matrix.dim() != (datasets.len(), models.len()) {
            return Err(EvalError::LengthMismatch {
                actual: datasets.len() * models.len(),
                predicted: matrix.len(),
            });
        }
        let ref_idx = models
            .iter()
            .position(|m| m == reference)
            .ok_or_else(|| EvalError::UnknownModel(reference.to_string()))?;
        let complete: Vec<usize> = (0..models.len())
            .filter(|&j| matrix.column(j).iter().all(|v| v.is_finite()))
            .collect();
        let mut average = vec![None; models.len()];
        if !complete.is_empty() {
            let ranks = average_ranks(&matrix.select(Axis(1), &complete))?;
            for (&j, r) in complete.iter().zip(ranks) {
                average[j] = Some(r);
            }
        }
        let columns: Vec<Option<Vec<f64>>> = (0..models.len())
            .map(|j| complete.contains(&j).then(|| matrix.column(j).to_vec()))
            .collect();
        let mut report = Self {
            metric: metric.to_string(),
            datasets,
            models,
            matrix: matrix
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v.is_finite().then_some(*v)).collect())
                .collect(),
            average_ranks: average,
            reference: reference.to_string(),
            p_value_basis: String::new(),
            p_values: Vec::new(),
        };
        report.set_paired_samples("datasets", &columns, ref_idx);
        Ok(report)
    }

    /// Replaces the p-values with tests over other paired samples, one per
    /// model (e.g. per-step squared errors when there are few datasets).
    pub fn with_paired_samples(mut self, basis: &str, samples: &[Option<Vec<f64>>]) -> Self {
        if let Some(ref_idx) = self.models.iter().position(|m| *m == self.reference) {
            self.set_paired_samples(basis, samples, ref_idx);
        }
        self
    }

    fn set_paired_samples(&mut self, basis: &str, samples: &[Option<Vec<f64>>], ref_idx: usize) {
        self.p_value_basis = basis.to_string();
        let reference = samples.get(ref_idx).cloned().flatten();
        self.p_values = (0..self.models.len())
            .map(|j| {
                if j == ref_idx {
                    return None;
                }
                let (a, b) = (reference.as_ref()?, samples.get(j)?.as_ref()?);
                wilcoxon_signed_rank(a, b).ok().map(|r| r.p_value)
            })
            .collect();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Rows are datasets, columns models; failed cells read `failed`.
    pub fn write_matrix_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["dataset".to_string()];
        header.extend(self.models.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.datasets.iter().zip(&self.matrix) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.map_or_else(|| "failed".to_string(), |x| x.to_string())));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One point of a sensitivity curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: f64,
    pub mse: f64,
    pub mean_qualified_count: f64,
    pub fallback_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParameter {
    Alpha,
    Epsilon,
}

/// Validation MSE and consensus diagnostics as one parameter varies, the
/// others held at `base`.
pub fn sweep<T: Scalar>(
    problem: &ValidationProblem<T>,
    base: &EnsembleConfig,
    parameter: SweepParameter,
    values: &[f64],
) -> Result<Vec<SweepPoint>, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    values
        .iter()
        .map(|&x| {
            let mut cfg = *base;
            match parameter {
                SweepParameter::Alpha => cfg.alpha = x,
                SweepParameter::Epsilon => cfg.epsilon = x,
            }
            let s = problem.evaluate(&cfg)?;
            Ok(SweepPoint {
                x,
                mse: s.mse,
                mean_qualified_count: s.mean_qualified,
                fallback_rate: s.fallback_rate,
            })
        })
        .collect()
}

pub fn sweep_alpha<T: Scalar>(problem: &ValidationProblem<T>, base: &EnsembleConfig, alphas: &[f64]) -> Result<Vec<SweepPoint>, EvalError> {
    sweep(problem, base, SweepParameter::Alpha, alphas)
}

pub fn sweep_epsilon<T: Scalar>(problem: &ValidationProblem<T>, base: &EnsembleConfig, epsilons: &[f64]) -> Result<Vec<SweepPoint>, EvalError> {
    sweep(problem, base, SweepParameter::Epsilon, epsilons)
}

/// `n` values evenly spaced in log between `lo` and `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i == n - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// The consensus levels `1/M, 2/M, …, 1`.
pub fn alpha_levels(machines: usize) -> Vec<f64> {
    (1..=machines).map(|k| k as f64 / machines as f64).collect()
}

pub fn write_sweep_csv<W: Write>(writer: W, points: &[SweepPoint]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "mse", "mean_qualified_count", "fallback_rate"])?;
    for p in points {
        w.write_record([
            p.x.to_string(),
            p.mse.to_string(),
            p.mean_qualified_count.to_string(),
            p.fallback_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
