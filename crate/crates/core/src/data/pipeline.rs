use serde::{Deserialize, Serialize};

use super::{build_frames, cumsum, fit_scaler, split, DataError, FrameDataset, RawSeries, Scaler, Split};
use crate::Scalar;

/// Preprocessing options, in application order: column selection, cumsum,
/// min-max scaling fitted on the training rows, framing, splitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub window: usize,
    pub val_frac: f64,
    pub test_frac: f64,
    /// Columns to cumsum; all feature columns when unset, none when empty.
    pub cumsum_columns: Option<Vec<String>>,
    pub feature_columns: Option<Vec<String>>,
    pub drop_missing: bool,
    pub partition_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: 10,
            val_frac: 0.1,
            test_frac: 0.1,
            cumsum_columns: None,
            feature_columns: None,
            drop_missing: true,
            partition_fraction: 0.5,
        }
    }
}

/// Every intermediate product of [`prepare`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Prepared<T> {
    /// Input after column selection.
    pub raw: RawSeries<T>,
    /// After cumsum, in original units.
    pub transformed: RawSeries<T>,
    pub scaler: Scaler<T>,
    pub scaled: RawSeries<T>,
    pub dataset: FrameDataset<T>,
}

impl<T: Scalar> Prepared<T> {
    /// Number of leading series rows touched by training pairs (windows and targets).
    pub fn train_rows(&self) -> usize {
        self.dataset.split().n_train + self.dataset.window()
    }
}

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Select,
    Cumsum,
    Scale,
    Frame,
    Split,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Select => "select",
            Stage::Cumsum => "cumsum",
            Stage::Scale => "scale",
            Stage::Frame => "frame",
            Stage::Split => "split",
        })
    }
}

pub fn prepare<T: Scalar>(series: &RawSeries<T>, config: &PipelineConfig) -> Result<Prepared<T>, DataError> {
    prepare_staged(series, config).map_err(|(_, e)| e)
}

/// [`prepare`], reporting which stage failed.
pub fn prepare_staged<T: Scalar>(series: &RawSeries<T>, config: &PipelineConfig) -> Result<Prepared<T>, (Stage, DataError)> {
    let at = |stage| move |e| (stage, e);
    let raw = match &config.feature_columns {
        Some(cols) => series.select_columns(cols).map_err(at(Stage::Select))?,
        None => series.clone(),
    };
    let cumsum_cols = config
        .cumsum_columns
        .clone()
        .unwrap_or_else(|| raw.column_names().to_vec());
    let transformed = cumsum(&raw, &cumsum_cols).map_err(at(Stage::Cumsum))?;
    if transformed.len() <= config.window {
        return Err((
            Stage::Frame,
            DataError::InsufficientData {
                rows: transformed.len(),
                window: config.window,
            },
        ));
    }
    let n_pairs = transformed.len() - config.window;
    let counts = Split::from_fractions(n_pairs, config.val_frac, config.test_frac).map_err(at(Stage::Split))?;
    let scaler = fit_scaler(&transformed, counts.n_train + config.window).map_err(at(Stage::Scale))?;
    let scaled = scaler.scale(&transformed).map_err(at(Stage::Scale))?;
    let frames = build_frames(&scaled, config.window).map_err(at(Stage::Frame))?;
    let dataset = split(frames, config.val_frac, config.test_frac)
        .map_err(at(Stage::Split))?
        .with_partition_fraction(config.partition_fraction);
    Ok(Prepared {
        raw,
        transformed,
        scaler,
        scaled,
        dataset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::random_walk;

    #[test]
    fn scaler_sees_only_training_rows() {
        let s: RawSeries<f64> = random_walk(120, 1);
        let cfg = PipelineConfig {
            window: 5,
            cumsum_columns: Some(vec![]),
            ..Default::default()
        };
        let p = prepare(&s, &cfg).unwrap();
        assert_eq!(p.dataset.split(), Split { n_train: 93, n_val: 11, n_test: 11 });
        let train = p.scaled.head(p.train_rows());
        assert!(train.values().iter().all(|&x| (0.0..=1.0).contains(&x)));
        let expected = fit_scaler(&s, 98).unwrap();
        assert_eq!(p.scaler, expected);
    }

    #[test]
    fn cumsum_defaults_to_all_columns() {
        let s: RawSeries<f64> = random_walk(40, 2);
        let p = prepare(&s, &PipelineConfig { window: 3, ..Default::default() }).unwrap();
        assert_eq!(p.transformed.values()[[1, 0]], s.values()[[0, 0]] + s.values()[[1, 0]]);
        assert_eq!(p.transformed.values()[[1, 1]], s.values()[[0, 1]] + s.values()[[1, 1]]);
    }
}
