use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{build_proximity_set, training_range, EnsembleConfig, EnsembleError, Phase, ProximitySet};
use crate::data::{Frame, FrameDataset};
use crate::machines::{MachineBank, MachineSpec, Registry};
use crate::Scalar;

/// Uniform weights over the qualified proximity entries.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T> {
    pub weights: Vec<T>,
    pub qualified_count: usize,
    /// Set when no entry qualified; all weights are then zero.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub qualified_count: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast<T> {
    pub value: Array1<T>,
    pub diagnostics: Diagnostics,
}

fn check_query<T: Scalar>(prox: &ProximitySet<T>, query: &ArrayView2<'_, T>) -> Result<(), EnsembleError> {
    if query.dim() != (prox.n_machines(), prox.n_outputs()) {
        return Err(EnsembleError::Shape(format!(
            "query predictions are {:?}, proximity set holds {} machines x {} outputs",
            query.dim(),
            prox.n_machines(),
            prox.n_outputs()
        )));
    }
    if query.iter().any(|x| !x.is_finite()) {
        return Err(EnsembleError::Shape("non-finite query prediction".into()));
    }
    Ok(())
}

/// Per entry, how many machines put it within `ε` of the query.
pub fn qualifying_votes<T: Scalar>(
    prox: &ProximitySet<T>,
    query_preds: ArrayView2<'_, T>,
    config: &EnsembleConfig,
) -> Result<Vec<usize>, EnsembleError> {
    check_query(prox, &query_preds)?;
    let eps = T::of(config.epsilon);
    Ok(prox
        .predictions()
        .outer_iter()
        .map(|entry| {
            entry
                .outer_iter()
                .zip(query_preds.outer_iter())
                .filter(|(p, q)| config.norm.distance(p.iter().copied(), q.iter().copied()) <= eps)
                .count()
        })
        .collect())
}

/// Entry `i` qualifies iff at least `ceil(M·α)` machines agree on it.
pub fn consensus_weights<T: Scalar>(
    prox: &ProximitySet<T>,
    query_preds: ArrayView2<'_, T>,
    config: &EnsembleConfig,
) -> Result<WeightVector<T>, EnsembleError> {
    let need = config.required_votes(prox.n_machines());
    let qualified: Vec<bool> = qualifying_votes(prox, query_preds, config)?
        .into_iter()
        .map(|v| v >= need)
        .collect();
    let count = qualified.iter().filter(|&&q| q).count();
    let w = if count > 0 {
        T::one() / T::of(count as f64)
    } else {
        T::zero()
    };
    Ok(WeightVector {
        weights: qualified.iter().map(|&q| if q { w } else { T::zero() }).collect(),
        qualified_count: count,
        fallback: count == 0,
    })
}

/// Weighted target average, or the mean of machine predictions on fallback.
pub fn aggregate<T: Scalar>(prox: &ProximitySet<T>, weights: &WeightVector<T>, query_preds: ArrayView2<'_, T>) -> Forecast<T> {
    let value = if weights.qualified_count > 0 {
        let mut acc = Array1::zeros(prox.n_outputs());
        for (&w, target) in weights.weights.iter().zip(prox.targets().outer_iter()) {
            if w != T::zero() {
                acc.scaled_add(w, &target);
            }
        }
        acc
    } else {
        query_preds
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(query_preds.ncols()))
    };
    Forecast {
        value,
        diagnostics: Diagnostics {
            qualified_count: weights.qualified_count,
            fallback: weights.fallback,
        },
    }
}

/// Predict the query with every machine, weight, aggregate.
pub fn predict_ensemble<T: Scalar>(
    bank: &MachineBank<T>,
    prox: &ProximitySet<T>,
    query: &Frame<T>,
    config: &EnsembleConfig,
) -> Result<Forecast<T>, EnsembleError> {
    let preds = bank.predict_all(query)?;
    let weights = consensus_weights(prox, preds.view(), config)?;
    Ok(aggregate(prox, &weights, preds.view()))
}

/// A fitted bank, its cached proximity set and the config they were built for.
pub struct Ensemble<T> {
    pub bank: MachineBank<T>,
    pub proximity: ProximitySet<T>,
    pub config: EnsembleConfig,
}

impl<T: Scalar> Ensemble<T> {
    /// Fits the roster on the variant's training region and caches the
    /// proximity set for `phase`.
    pub fn fit(
        registry: &Registry<T>,
        roster: &[MachineSpec],
        dataset: &FrameDataset<T>,
        config: EnsembleConfig,
        phase: Phase,
        seed: u64,
    ) -> Result<Self, EnsembleError> {
        config.validate()?;
        let range = training_range(dataset, &config)?;
        let bank = MachineBank::fit(registry, roster, &dataset.pairs()[range], seed)?;
        let proximity = build_proximity_set(&bank, dataset, &config, phase)?;
        Ok(Self { bank, proximity, config })
    }

    pub fn predict(&self, frame: &Frame<T>) -> Result<Forecast<T>, EnsembleError> {
        predict_ensemble(&self.bank, &self.proximity, frame, &self.config)
    }

    /// Forecasts for many frames, with the matrix of values (rows = frames).
    pub fn predict_many<'a>(&self, frames: impl IntoIterator<Item = &'a Frame<T>>) -> Result<(Array2<T>, Vec<Diagnostics>), EnsembleError> {
        let forecasts = frames
            .into_iter()
            .map(|f| self.predict(f))
            .collect::<Result<Vec<_>, _>>()?;
        let n = self.proximity.n_outputs();
        let mut values = Array2::zeros((forecasts.len(), n));
        for (mut row, f) in values.rows_mut().into_iter().zip(&forecasts) {
            row.assign(&f.value);
        }
        Ok((values, forecasts.into_iter().map(|f| f.diagnostics).collect()))
    }
}

/// CSV with `timestamp`, one `pred_<column>` per output, `qualified_count`, `fallback`.
pub fn write_forecasts_csv<T: Scalar, W: Write>(
    writer: W,
    column_names: &[String],
    timestamps: &[String],
    values: &Array2<T>,
    diagnostics: &[Diagnostics],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(column_names.iter().map(|c| format!("pred_{c}")));
    header.push("qualified_count".into());
    header.push("fallback".into());
    w.write_record(&header)?;
    for ((ts, row), d) in timestamps.iter().zip(values.rows()).zip(diagnostics) {
        let mut rec = vec![ts.clone()];
        rec.extend(row.iter().map(|x| x.to_string()));
        rec.push(d.qualified_count.to_string());
        rec.push(d.fallback.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{Provenance, Variant};
    use ndarray::{array, Array3};

    /// Three proximity entries, two machines, one output.
    fn worked_example() -> (ProximitySet<f64>, Array2<f64>) {
        let r1 = [0.10, 0.50, 0.90];
        let r2 = [0.20, 0.55, 0.80];
        let preds = Array3::from_shape_fn((3, 2, 1), |(i, m, _)| if m == 0 { r1[i] } else { r2[i] });
        let prox = ProximitySet::new(
            preds,
            array![[0.3], [0.6], [0.9]],
            vec![Provenance::Train; 3],
            vec![0, 1, 2],
        )
        .unwrap();
        (prox, array![[0.12], [0.18]])
    }

    fn cfg(eps: f64) -> EnsembleConfig {
        EnsembleConfig::new(Variant::Dpe, eps, 1.0)
    }

    #[test]
    fn tight_threshold_keeps_first_point() {
        let (prox, q) = worked_example();
        let w = consensus_weights(&prox, q.view(), &cfg(0.05)).unwrap();
        assert_eq!(w.weights, vec![1.0, 0.0, 0.0]);
        assert_eq!(w.qualified_count, 1);
        let f = aggregate(&prox, &w, q.view());
        assert_eq!(f.value[0], 0.3);
    }

    #[test]
    fn wider_threshold_admits_second_point() {
        let (prox, q) = worked_example();
        let w = consensus_weights(&prox, q.view(), &cfg(0.4)).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5, 0.0]);
        let f = aggregate(&prox, &w, q.view());
        assert!((f.value[0] - 0.45).abs() < 1e-12);
        assert!(!f.diagnostics.fallback);
    }

    #[test]
    fn no_consensus_falls_back_to_machine_mean() {
        let (prox, q) = worked_example();
        let w = consensus_weights(&prox, q.view(), &cfg(0.001)).unwrap();
        assert_eq!(w.qualified_count, 0);
        assert!(w.fallback);
        assert!(w.weights.iter().all(|&x| x == 0.0));
        let f = aggregate(&prox, &w, q.view());
        assert!((f.value[0] - 0.15).abs() < 1e-15);
        assert!(f.diagnostics.fallback);
    }

    #[test]
    fn partial_consensus() {
        let (prox, q) = worked_example();
        let votes = qualifying_votes(&prox, q.view(), &cfg(0.025)).unwrap();
        assert_eq!(votes, vec![2, 0, 0]);
        // entry 1 sits 0.38 from machine 1's query prediction and 0.37 from machine 2's
        let votes = qualifying_votes(&prox, q.view(), &cfg(0.375)).unwrap();
        assert_eq!(votes, vec![2, 1, 0]);
        let half = EnsembleConfig::new(Variant::Dpe, 0.375, 0.5);
        assert_eq!(consensus_weights(&prox, q.view(), &half).unwrap().qualified_count, 2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (prox, _) = worked_example();
        let bad = array![[0.1, 0.2], [0.3, 0.4]];
        assert!(consensus_weights(&prox, bad.view(), &cfg(0.1)).is_err());
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        write_forecasts_csv(
            &mut buf,
            &["a".into(), "b".into()],
            &["t0".into()],
            &array![[0.5, 0.25]],
            &[Diagnostics { qualified_count: 3, fallback: false }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "timestamp,pred_a,pred_b,qualified_count,fallback\nt0,0.5,0.25,3,false\n"
        );
    }
}
