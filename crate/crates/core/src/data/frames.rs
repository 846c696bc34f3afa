use std::ops::Range;

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{DataError, RawSeries};
use crate::Scalar;

/// An N×w window of consecutive observations, one row per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Frame<T> {
    window: Array2<T>,
    start_index: usize,
}

impl<T: Scalar> Frame<T> {
    pub fn new(window: Array2<T>, start_index: usize) -> Self {
        Self {
            window,
            start_index,
        }
    }

    /// Frame over rows `start..start + width` of a T×N matrix.
    pub fn from_rows(values: ndarray::ArrayView2<'_, T>, start: usize, width: usize) -> Self {
        let window = values
            .slice(s![start..start + width, ..])
            .t()
            .as_standard_layout()
            .into_owned();
        Self::new(window, start)
    }

    pub fn window(&self) -> &Array2<T> {
        &self.window
    }

    pub fn start_index(&self) -> usize {
        self.start_index
    }

    pub fn n_features(&self) -> usize {
        self.window.nrows()
    }

    pub fn width(&self) -> usize {
        self.window.ncols()
    }

    /// Row-major flattening: all time steps of feature 0, then feature 1, ...
    pub fn flatten(&self) -> impl Iterator<Item = T> + '_ {
        self.window.iter().copied()
    }
}

/// A frame and the observation immediately after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct FramePair<T> {
    pub frame: Frame<T>,
    pub target: Array1<T>,
}

/// Chronological partition sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Split {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

impl Split {
    /// Validation and test get `floor(frac * n)` pairs each, train the remainder.
    pub fn from_fractions(n: usize, val_frac: f64, test_frac: f64) -> Result<Self, DataError> {
        if !(0.0..1.0).contains(&val_frac) || !(0.0..1.0).contains(&test_frac) {
            return Err(DataError::InvalidSplit(format!(
                "fractions must lie in [0, 1), got {val_frac} and {test_frac}"
            )));
        }
        if val_frac + test_frac >= 1.0 {
            return Err(DataError::InvalidSplit(format!(
                "val_frac + test_frac = {} leaves no training data",
                val_frac + test_frac
            )));
        }
        let count = |frac: f64| (frac * n as f64 + 1e-9).floor() as usize;
        let (n_val, n_test) = (count(val_frac), count(test_frac));
        if (val_frac > 0.0 && n_val == 0) || (test_frac > 0.0 && n_test == 0) {
            return Err(DataError::InvalidSplit(format!(
                "{n} pairs are too few for fractions {val_frac}/{test_frac}"
            )));
        }
        if n_val + n_test >= n {
            return Err(DataError::InvalidSplit("empty training partition".into()));
        }
        Ok(Self {
            n_train: n - n_val - n_test,
            n_val,
            n_test,
        })
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

/// Training-set partition for the partitioned variants.
///
/// `n1 = floor(fraction * n_train)` clamped to `1..=n_train - 1`, so both
/// parts are always non-empty.
pub fn partition_sizes(n_train: usize, fraction: f64) -> Result<(usize, usize), DataError> {
    if n_train < 2 {
        return Err(DataError::InvalidSplit(format!(
            "partitioning needs at least 2 training pairs, have {n_train}"
        )));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidSplit(format!(
            "partition fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n1 = ((fraction * n_train as f64 + 1e-9).floor() as usize).clamp(1, n_train - 1);
    Ok((n1, n_train - n1))
}

/// Ordered (frame, next observation) pairs with a train/validation/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct FrameDataset<T> {
    pairs: Vec<FramePair<T>>,
    split: Split,
    partition_fraction: f64,
}

impl<T: Scalar> FrameDataset<T> {
    pub fn new(pairs: Vec<FramePair<T>>, split: Split, partition_fraction: f64) -> Result<Self, DataError> {
        if split.total() != pairs.len() {
            return Err(DataError::InvalidSplit(format!(
                "split covers {} pairs, dataset has {}",
                split.total(),
                pairs.len()
            )));
        }
        Ok(Self {
            pairs,
            split,
            partition_fraction,
        })
    }

    pub fn pairs(&self) -> &[FramePair<T>] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn partition_fraction(&self) -> f64 {
        self.partition_fraction
    }

    pub fn with_partition_fraction(mut self, fraction: f64) -> Self {
        self.partition_fraction = fraction;
        self
    }

    pub fn n_features(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.frame.n_features())
    }

    pub fn window(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.frame.width())
    }

    pub fn train_range(&self) -> Range<usize> {
        0..self.split.n_train
    }

    pub fn validation_range(&self) -> Range<usize> {
        let start = self.split.n_train;
        start..start + self.split.n_val
    }

    pub fn test_range(&self) -> Range<usize> {
        let start = self.split.n_train + self.split.n_val;
        start..start + self.split.n_test
    }

    pub fn train(&self) -> &[FramePair<T>] {
        &self.pairs[self.train_range()]
    }

    pub fn validation(&self) -> &[FramePair<T>] {
        &self.pairs[self.validation_range()]
    }

    pub fn test(&self) -> &[FramePair<T>] {
        &self.pairs[self.test_range()]
    }

    /// `(n1, n2)` for this dataset's partition fraction.
    pub fn partition(&self) -> Result<(usize, usize), DataError> {
        partition_sizes(self.split.n_train, self.partition_fraction)
    }
}

/// Slides a width-`window` frame over the series: pair `j` covers rows
/// `j..j + window` and targets row `j + window`.
pub fn build_frames<T: Scalar>(series: &RawSeries<T>, window: usize) -> Result<FrameDataset<T>, DataError> {
    if window == 0 {
        return Err(DataError::InvalidSplit("window must be at least 1".into()));
    }
    if series.len() <= window {
        return Err(DataError::InsufficientData {
            rows: series.len(),
            window,
        });
    }
    let values = series.values();
    if let Some(((row, column), _)) = values.indexed_iter().find(|(_, x)| !x.is_finite()) {
        return Err(DataError::NonFinite { row, column });
    }
    let pairs: Vec<_> = (0..series.len() - window)
        .map(|j| FramePair {
            frame: Frame::from_rows(values, j, window),
            target: values.row(j + window).to_owned(),
        })
        .collect();
    let split = Split {
        n_train: pairs.len(),
        n_val: 0,
        n_test: 0,
    };
    FrameDataset::new(pairs, split, 0.5)
}

/// Chronological train/validation/test split; the test block is the final segment.
pub fn split<T: Scalar>(dataset: FrameDataset<T>, val_frac: f64, test_frac: f64) -> Result<FrameDataset<T>, DataError> {
    let split = Split::from_fractions(dataset.len(), val_frac, test_frac)?;
    FrameDataset::new(dataset.pairs, split, dataset.partition_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn series(values: Array2<f64>) -> RawSeries<f64> {
        let names = (0..values.ncols()).map(|j| format!("c{j}")).collect();
        RawSeries::from_values(values, names).unwrap()
    }

    #[test]
    fn univariate_frames() {
        let s = series(Array2::from_shape_vec((6, 1), vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let ds = build_frames(&s, 3).unwrap();
        assert_eq!(ds.len(), 3);
        let got: Vec<(Vec<f64>, f64)> = ds
            .pairs()
            .iter()
            .map(|p| (p.frame.flatten().collect(), p.target[0]))
            .collect();
        assert_eq!(
            got,
            vec![
                (vec![1., 2., 3.], 4.),
                (vec![2., 3., 4.], 5.),
                (vec![3., 4., 5.], 6.)
            ]
        );
    }

    #[test]
    fn bivariate_frame_shape_and_layout() {
        let s = series(array![[1., 10.], [2., 20.], [3., 30.], [4., 40.], [5., 50.]]);
        let ds = build_frames(&s, 2).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.pairs().iter().all(|p| p.frame.window().dim() == (2, 2)));
        assert_eq!(ds.pairs()[1].frame.window(), &array![[2., 3.], [20., 30.]]);
        assert_eq!(ds.pairs()[1].target, array![4., 40.]);
    }

    #[test]
    fn window_equal_to_length_is_rejected() {
        let s = series(array![[1.], [2.], [3.]]);
        assert!(matches!(
            build_frames(&s, 3),
            Err(DataError::InsufficientData { rows: 3, window: 3 })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let s = series(array![[1.], [f64::NAN], [3.]]);
        assert!(matches!(build_frames(&s, 1), Err(DataError::NonFinite { row: 1, .. })));
    }

    #[test]
    fn split_counts() {
        let s = |n| Split::from_fractions(n, 0.1, 0.1).unwrap();
        assert_eq!(s(100), Split { n_train: 80, n_val: 10, n_test: 10 });
        assert_eq!(s(10), Split { n_train: 8, n_val: 1, n_test: 1 });
        assert!(Split::from_fractions(100, 0.5, 0.5).is_err());
        assert!(Split::from_fractions(5, 0.1, 0.1).is_err());
        assert_eq!(
            Split::from_fractions(7, 0.0, 0.0).unwrap(),
            Split { n_train: 7, n_val: 0, n_test: 0 }
        );
    }

    #[test]
    fn split_ranges_are_chronological() {
        let s = series(Array2::from_shape_fn((25, 1), |(i, _)| i as f64));
        let ds = split(build_frames(&s, 5).unwrap(), 0.1, 0.1).unwrap();
        assert_eq!(ds.split(), Split { n_train: 16, n_val: 2, n_test: 2 });
        assert_eq!(ds.test().last().unwrap().frame.start_index(), 19);
        assert_eq!(ds.validation()[0].frame.start_index(), 16);
    }

    #[test]
    fn partition_clamps() {
        assert_eq!(partition_sizes(80, 0.5).unwrap(), (40, 40));
        assert_eq!(partition_sizes(80, 0.001).unwrap(), (1, 79));
        assert_eq!(partition_sizes(80, 0.999).unwrap(), (79, 1));
        assert!(partition_sizes(1, 0.5).is_err());
        assert!(partition_sizes(10, 1.0).is_err());
    }
}
