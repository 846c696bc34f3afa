use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::EvalError;

fn check_lengths(actual: &[f64], predicted: &[f64]) -> Result<(), EvalError> {
    if actual.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    check_lengths(actual, predicted)?;
    let sq: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok((sq / actual.len() as f64).sqrt())
}

/// Mean absolute percentage error, in percent. Zero actuals are an error
/// rather than being padded.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    check_lengths(actual, predicted)?;
    if let Some(i) = actual.iter().position(|&y| y == 0.0) {
        return Err(EvalError::ZeroActual(i));
    }
    let sum: f64 = actual.iter().zip(predicted).map(|(y, p)| ((y - p) / y).abs()).sum();
    Ok(100.0 * sum / actual.len() as f64)
}

/// Metrics per output dimension plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rmse: f64,
    pub rmse_per_dim: Vec<f64>,
    /// `None` when some actual value is zero.
    pub mape: Option<f64>,
    pub mape_per_dim: Option<Vec<f64>>,
}

impl RunMetrics {
    pub fn compute(actual: ArrayView2<'_, f64>, predicted: ArrayView2<'_, f64>) -> Result<Self, EvalError> {
        if actual.dim() != predicted.dim() {
            return Err(EvalError::LengthMismatch {
                actual: actual.len(),
                predicted: predicted.len(),
            });
        }
        let cols = |a: ArrayView2<'_, f64>| -> Vec<Vec<f64>> { a.axis_iter(Axis(1)).map(|c| c.to_vec()).collect() };
        let (ya, yp) = (cols(actual), cols(predicted));
        let rmse_per_dim = ya
            .iter()
            .zip(&yp)
            .map(|(a, p)| rmse(a, p))
            .collect::<Result<Vec<_>, _>>()?;
        let mape_per_dim = ya
            .iter()
            .zip(&yp)
            .map(|(a, p)| mape(a, p))
            .collect::<Result<Vec<_>, _>>()
            .ok();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(Self {
            rmse: mean(&rmse_per_dim),
            mape: mape_per_dim.as_deref().map(mean),
            rmse_per_dim,
            mape_per_dim,
        })
    }
}

/// Which value space metrics are computed in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricSpace {
    #[default]
    Raw,
    Scaled,
}

/// Test-split forecasts of one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRun {
    pub model: String,
    pub dataset: String,
    pub predicted: Array2<f64>,
    pub actual: Array2<f64>,
    pub predicted_raw: Array2<f64>,
    pub actual_raw: Array2<f64>,
    pub fallback_count: usize,
}

impl ForecastRun {
    pub fn validate(&self) -> Result<(), EvalError> {
        let d = self.actual.dim();
        if d.0 == 0 {
            return Err(EvalError::Empty);
        }
        if self.predicted.dim() != d || self.predicted_raw.dim() != d || self.actual_raw.dim() != d {
            return Err(EvalError::LengthMismatch {
                actual: self.actual.len(),
                predicted: self.predicted.len(),
            });
        }
        Ok(())
    }

    pub fn metrics(&self, space: MetricSpace) -> Result<RunMetrics, EvalError> {
        self.validate()?;
        match space {
            MetricSpace::Raw => RunMetrics::compute(self.actual_raw.view(), self.predicted_raw.view()),
            MetricSpace::Scaled => RunMetrics::compute(self.actual.view(), self.predicted.view()),
        }
    }

    /// Squared errors per step, averaged over dimensions.
    pub fn squared_errors(&self, space: MetricSpace) -> Vec<f64> {
        let (a, p) = match space {
            MetricSpace::Raw => (&self.actual_raw, &self.predicted_raw),
            MetricSpace::Scaled => (&self.actual, &self.predicted),
        };
        (a - p)
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|d| d * d).sum::<f64>() / r.len() as f64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rmse_values() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 3.535533905932738).abs() < 1e-12);
        assert!((rmse(&[2.5], &[2.25]).unwrap() - 0.25).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn mape_values() {
        assert!((mape(&[2.0, 4.0], &[1.0, 5.0]).unwrap() - 37.5).abs() < 1e-12);
        assert_eq!(mape(&[2.0, -4.0], &[2.0, -4.0]).unwrap(), 0.0);
        assert!(matches!(mape(&[1.0, 0.0], &[1.0, 1.0]), Err(EvalError::ZeroActual(1))));
    }

    #[test]
    fn per_dimension_metrics() {
        let a = array![[1.0, 2.0], [3.0, 0.0]];
        let p = array![[1.0, 2.0], [0.0, 0.0]];
        let m = RunMetrics::compute(a.view(), p.view()).unwrap();
        assert_eq!(m.rmse_per_dim.len(), 2);
        assert!((m.rmse_per_dim[0] - (4.5f64).sqrt()).abs() < 1e-12);
        assert_eq!(m.rmse_per_dim[1], 0.0);
        assert!((m.rmse - (4.5f64).sqrt() / 2.0).abs() < 1e-12);
        assert!(m.mape.is_none());
    }
}
