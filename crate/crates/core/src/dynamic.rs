//! Multi-step forecasting by iterated one-step prediction.
//!
//! Each step refits the min-max scaler on the whole history so far (initial
//! rows plus every appended value), scales it, predicts the next row from
//! the last window, maps the forecast back to original units and appends it.
//! Machines keep the weights they learned under the original scaler unless
//! `refit_every` asks for periodic retraining, so forecasts under a moved
//! scaler are an approximation by design.

use std::io::{Read, Write};

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{build_frames, split, DataError, Frame, RawSeries, Scaler};
use crate::ensemble::{Ensemble, EnsembleError, Phase};
use crate::machines::{MachineSpec, Registry};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum DynamicError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("history has {rows} rows, a window of {window} needs at least {needed}")]
    ShortHistory { rows: usize, window: usize, needed: usize },
    #[error("step {step}: {source}")]
    Scaler { step: usize, source: DataError },
    #[error("step {step}: {source}")]
    Ensemble { step: usize, source: EnsembleError },
    #[error("backtest needs {needed} actual rows, got {got}")]
    MissingActuals { needed: usize, got: usize },
    #[error("refit is enabled but no refit plan was given")]
    NoRefitPlan,
    #[error("bad dynamic log: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// What gets appended to the history after each step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rollout {
    /// The forecast itself.
    #[default]
    Predicted,
    /// The realized value, when known.
    Backtest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicConfig {
    pub horizon: usize,
    /// Retrain the machines every this many steps; 0 never retrains.
    pub refit_every: usize,
    pub rollout: Rollout,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            refit_every: 0,
            rollout: Rollout::Predicted,
        }
    }
}

/// How to rebuild the ensemble on the current history when refitting.
pub struct RefitPlan<'a, T> {
    pub registry: &'a Registry<T>,
    pub roster: &'a [MachineSpec],
    /// Validation share of the rebuilt dataset.
    pub val_frac: f64,
    pub seed: u64,
}

/// One row of the dynamic log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// 1-based.
    pub step: usize,
    pub prediction: Vec<f64>,
    pub prediction_scaled: Vec<f64>,
    pub scaler_min: Vec<f64>,
    pub scaler_max: Vec<f64>,
    pub qualified_count: usize,
    pub fallback: bool,
    /// SHA-256 prefix of the history the step saw.
    pub checksum: String,
}

/// Growing history, the scaler of the latest step, and the per-step log.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicState<T> {
    pub column_names: Vec<String>,
    pub history: Array2<T>,
    pub scaler: Option<Scaler<T>>,
    pub step: usize,
    pub log: Vec<StepLog>,
}

impl<T: Scalar> DynamicState<T> {
    pub fn new(initial: &RawSeries<T>) -> Self {
        Self {
            column_names: initial.column_names().to_vec(),
            history: initial.values().to_owned(),
            scaler: None,
            step: 0,
            log: Vec::new(),
        }
    }

    /// Predictions in original units, k × N.
    pub fn predictions(&self) -> Array2<f64> {
        let n = self.column_names.len();
        let flat: Vec<f64> = self.log.iter().flat_map(|s| s.prediction.iter().copied()).collect();
        Array2::from_shape_vec((self.log.len(), n), flat).expect("log rows have N values")
    }
}

fn checksum<T: Scalar>(values: ArrayView2<'_, T>) -> String {
    let mut h = Sha256::new();
    h.update((values.nrows() as u64).to_le_bytes());
    for x in values.iter() {
        h.update(x.bits().to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Last-window frame of the scaled history, and the scaler used.
pub fn latest_frame<T: Scalar>(history: ArrayView2<'_, T>, columns: &[String], window: usize) -> Result<(Frame<T>, Scaler<T>), DataError> {
    let scaler = Scaler::fit_rows(history, columns)?;
    let tail = history.slice(ndarray::s![history.nrows() - window.., ..]);
    let scaled = scaler.scale_values(tail)?;
    Ok((Frame::from_rows(scaled.view(), 0, window), scaler))
}

fn refit<T: Scalar>(
    plan: &RefitPlan<'_, T>,
    history: &Array2<T>,
    columns: &[String],
    window: usize,
    config: crate::ensemble::EnsembleConfig,
) -> Result<Ensemble<T>, EnsembleError> {
    let scaler = Scaler::fit_rows(history.view(), columns)?;
    let series = RawSeries::from_values(scaler.scale_values(history.view())?, columns.to_vec())?;
    let dataset = split(build_frames(&series, window)?, plan.val_frac, 0.0)?.with_partition_fraction(config.partition_fraction);
    Ensemble::fit(plan.registry, plan.roster, &dataset, config, Phase::Test, plan.seed)
}

/// Runs `config.horizon` steps from `initial`.
///
/// `actuals` (horizon × N, original units) is required for
/// [`Rollout::Backtest`] and ignored otherwise; `plan` is required when
/// `refit_every > 0`.
pub fn dynamic_forecast<T: Scalar>(
    initial: &RawSeries<T>,
    ensemble: &Ensemble<T>,
    window: usize,
    config: &DynamicConfig,
    actuals: Option<ArrayView2<'_, T>>,
    plan: Option<&RefitPlan<'_, T>>,
) -> Result<(Array2<T>, DynamicState<T>), DynamicError> {
    if config.horizon == 0 {
        return Err(DynamicError::ZeroHorizon);
    }
    let needed = window.max(2);
    if initial.len() < needed {
        return Err(DynamicError::ShortHistory {
            rows: initial.len(),
            window,
            needed,
        });
    }
    if config.rollout == Rollout::Backtest {
        let got = actuals.map_or(0, |a| a.nrows());
        if got < config.horizon {
            return Err(DynamicError::MissingActuals {
                needed: config.horizon,
                got,
            });
        }
    }
    if config.refit_every > 0 && plan.is_none() {
        return Err(DynamicError::NoRefitPlan);
    }

    let mut state = DynamicState::new(initial);
    let mut refitted: Option<Ensemble<T>> = None;
    let n = initial.n_columns();
    let mut out = Array2::zeros((config.horizon, n));
    for k in 0..config.horizon {
        let step = k + 1;
        if config.refit_every > 0 && k > 0 && k % config.refit_every == 0 {
            let plan = plan.expect("checked above");
            let e = refit(plan, &state.history, &state.column_names, window, ensemble.config)
                .map_err(|source| DynamicError::Ensemble { step, source })?;
            refitted = Some(e);
        }
        let active = refitted.as_ref().unwrap_or(ensemble);

        let sum = checksum(state.history.view());
        let (frame, scaler) = latest_frame(state.history.view(), &state.column_names, window)
            .map_err(|source| DynamicError::Scaler { step, source })?;
        let forecast = active
            .predict(&frame)
            .map_err(|source| DynamicError::Ensemble { step, source })?;
        let raw = scaler
            .inverse_scale_row(forecast.value.view())
            .map_err(|source| DynamicError::Scaler { step, source })?;
        out.row_mut(k).assign(&ndarray::Array1::from(raw.clone()));

        let appended = match (config.rollout, actuals) {
            (Rollout::Backtest, Some(a)) => a.row(k).to_owned(),
            _ => ndarray::Array1::from(raw.clone()),
        };
        state.history = concatenate![Axis(0), state.history, appended.insert_axis(Axis(0))];
        state.log.push(StepLog {
            step,
            prediction: raw.iter().map(|x| x.as_f64()).collect(),
            prediction_scaled: forecast.value.iter().map(|x| x.as_f64()).collect(),
            scaler_min: scaler.min().iter().map(|x| x.as_f64()).collect(),
            scaler_max: scaler.max().iter().map(|x| x.as_f64()).collect(),
            qualified_count: forecast.diagnostics.qualified_count,
            fallback: forecast.diagnostics.fallback,
            checksum: sum,
        });
        state.scaler = Some(scaler);
        state.step = step;
    }
    Ok((out, state))
}

fn header(columns: &[String]) -> Vec<String> {
    let mut h = vec!["step".to_string()];
    for prefix in ["pred", "scaled", "min", "max"] {
        h.extend(columns.iter().map(|c| format!("{prefix}_{c}")));
    }
    h.extend(["qualified_count", "fallback", "checksum"].map(String::from));
    h
}

/// Writes the log as CSV: step, per-dimension forecast (original and
/// scaled units), scaler bounds, consensus diagnostics and checksum.
pub fn export_dynamic_log<W: Write>(columns: &[String], log: &[StepLog], writer: W) -> Result<(), DynamicError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(columns))?;
    for s in log {
        let mut rec = vec![s.step.to_string()];
        for v in [&s.prediction, &s.prediction_scaled, &s.scaler_min, &s.scaler_max] {
            rec.extend(v.iter().map(|x| x.to_string()));
        }
        rec.push(s.qualified_count.to_string());
        rec.push(s.fallback.to_string());
        rec.push(s.checksum.clone());
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a log written by [`export_dynamic_log`], returning the column names.
pub fn read_dynamic_log<R: Read>(reader: R) -> Result<(Vec<String>, Vec<StepLog>), DynamicError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let head = rdr.headers()?.clone();
    let columns: Vec<String> = head
        .iter()
        .filter_map(|h| h.strip_prefix("pred_"))
        .map(String::from)
        .collect();
    if head.iter().collect::<Vec<_>>() != header(&columns) {
        return Err(DynamicError::Format("unexpected header".into()));
    }
    let n = columns.len();
    let mut log = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |what: &str| DynamicError::Format(format!("unparsable {what} in `{}`", rec.iter().collect::<Vec<_>>().join(",")));
        let nums = |from: usize| -> Result<Vec<f64>, DynamicError> {
            (from..from + n)
                .map(|i| rec[i].parse::<f64>().map_err(|_| bad("value")))
                .collect()
        };
        log.push(StepLog {
            step: rec[0].parse().map_err(|_| bad("step"))?,
            prediction: nums(1)?,
            prediction_scaled: nums(1 + n)?,
            scaler_min: nums(1 + 2 * n)?,
            scaler_max: nums(1 + 3 * n)?,
            qualified_count: rec[1 + 4 * n].parse().map_err(|_| bad("qualified_count"))?,
            fallback: rec[2 + 4 * n].parse().map_err(|_| bad("fallback"))?,
            checksum: rec[3 + 4 * n].to_string(),
        });
    }
    Ok((columns, log))
}
