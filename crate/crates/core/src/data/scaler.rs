use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{DataError, RawSeries};
use crate::Scalar;

/// Per-column min-max scaler mapping the fitted range onto [0, 1].
///
/// Construction rejects constant columns, so every live scaler is invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Scaler<T> {
    column_names: Vec<String>,
    min: Vec<T>,
    max: Vec<T>,
}

impl<T: Scalar> Scaler<T> {
    pub fn new(column_names: Vec<String>, min: Vec<T>, max: Vec<T>) -> Result<Self, DataError> {
        if min.len() != column_names.len() || max.len() != column_names.len() {
            return Err(DataError::Shape(
                "scaler bounds and column names differ in length".into(),
            ));
        }
        for ((name, lo), hi) in column_names.iter().zip(&min).zip(&max) {
            #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN bounds are degenerate too
            if !(hi > lo) {
                return Err(DataError::DegenerateColumn(name.clone()));
            }
        }
        Ok(Self {
            column_names,
            min,
            max,
        })
    }

    /// Fits on every row of `values`.
    pub fn fit_rows(values: ArrayView2<'_, T>, column_names: &[String]) -> Result<Self, DataError> {
        if values.nrows() < 2 {
            return Err(DataError::TooFewRows {
                needed: 2,
                got: values.nrows(),
            });
        }
        let (min, max) = values
            .axis_iter(Axis(1))
            .map(|col| column_bounds(col))
            .unzip();
        Self::new(column_names.to_vec(), min, max)
    }

    pub fn min(&self) -> &[T] {
        &self.min
    }

    pub fn max(&self) -> &[T] {
        &self.max
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn n_columns(&self) -> usize {
        self.min.len()
    }

    pub fn scale_value(&self, column: usize, x: T) -> T {
        (x - self.min[column]) / (self.max[column] - self.min[column])
    }

    pub fn inverse_value(&self, column: usize, x: T) -> T {
        x * (self.max[column] - self.min[column]) + self.min[column]
    }

    pub fn scale_values(&self, values: ArrayView2<'_, T>) -> Result<Array2<T>, DataError> {
        self.check_width(values.ncols())?;
        let mut out = values.to_owned();
        for ((_, j), x) in out.indexed_iter_mut() {
            *x = self.scale_value(j, *x);
        }
        Ok(out)
    }

    pub fn scale(&self, series: &RawSeries<T>) -> Result<RawSeries<T>, DataError> {
        series.with_values(self.scale_values(series.values())?)
    }

    /// Maps scaled values (rows of N columns) back to the original units.
    pub fn inverse_scale(&self, values: ArrayView2<'_, T>) -> Result<Array2<T>, DataError> {
        self.check_width(values.ncols())?;
        let mut out = values.to_owned();
        for ((_, j), x) in out.indexed_iter_mut() {
            *x = self.inverse_value(j, *x);
        }
        Ok(out)
    }

    pub fn inverse_scale_row(&self, row: ArrayView1<'_, T>) -> Result<Vec<T>, DataError> {
        self.check_width(row.len())?;
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &x)| self.inverse_value(j, x))
            .collect())
    }

    fn check_width(&self, ncols: usize) -> Result<(), DataError> {
        if ncols != self.n_columns() {
            return Err(DataError::Shape(format!(
                "scaler has {} columns, input has {ncols}",
                self.n_columns()
            )));
        }
        Ok(())
    }
}

fn column_bounds<T: Scalar>(col: ArrayView1<'_, T>) -> (T, T) {
    col.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

/// Fits a scaler on the first `train_rows` rows of `series`.
pub fn fit_scaler<T: Scalar>(series: &RawSeries<T>, train_rows: usize) -> Result<Scaler<T>, DataError> {
    if train_rows < 2 {
        return Err(DataError::TooFewRows {
            needed: 2,
            got: train_rows,
        });
    }
    if train_rows > series.len() {
        return Err(DataError::TooFewRows {
            needed: train_rows,
            got: series.len(),
        });
    }
    let head = series.values().slice_move(ndarray::s![..train_rows, ..]);
    Scaler::fit_rows(head, series.column_names())
}
