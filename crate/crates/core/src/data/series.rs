use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::Scalar;

/// Row label plus the integer key used to enforce ordering.
///
/// The key is seconds since the Unix epoch for calendar timestamps, or the
/// raw value for integer timestamps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamp {
    pub label: String,
    pub key: i64,
}

impl Timestamp {
    pub fn new(label: impl Into<String>, key: i64) -> Self {
        Self {
            label: label.into(),
            key,
        }
    }

    /// Integer timestamp whose label is its decimal form.
    pub fn index(key: i64) -> Self {
        Self::new(key.to_string(), key)
    }
}

/// A T×N multivariate series with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct RawSeries<T> {
    values: Array2<T>,
    timestamps: Vec<Timestamp>,
    column_names: Vec<String>,
}

impl<T: Scalar> RawSeries<T> {
    pub fn new(
        values: Array2<T>,
        timestamps: Vec<Timestamp>,
        column_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if values.nrows() != timestamps.len() {
            return Err(DataError::Shape(format!(
                "{} rows but {} timestamps",
                values.nrows(),
                timestamps.len()
            )));
        }
        if values.ncols() != column_names.len() {
            return Err(DataError::Shape(format!(
                "{} columns but {} names",
                values.ncols(),
                column_names.len()
            )));
        }
        for (i, pair) in timestamps.windows(2).enumerate() {
            if pair[1].key <= pair[0].key {
                return Err(DataError::Ordering {
                    line: (i + 2) as u64,
                    label: pair[1].label.clone(),
                });
            }
        }
        Ok(Self {
            values,
            timestamps,
            column_names,
        })
    }

    /// Series indexed 0..T with the given column names.
    pub fn from_values(values: Array2<T>, column_names: Vec<String>) -> Result<Self, DataError> {
        let timestamps = (0..values.nrows() as i64).map(Timestamp::index).collect();
        Self::new(values, timestamps, column_names)
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_columns(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }

    pub fn timestamps(&self) -> &[Timestamp] {
        &self.timestamps
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_index(&self, name: &str) -> Result<usize, DataError> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<ArrayView1<'_, T>, DataError> {
        let j = self.column_index(name)?;
        Ok(self.values.column(j))
    }

    /// Same timestamps and names, new values of identical shape.
    pub fn with_values(&self, values: Array2<T>) -> Result<Self, DataError> {
        if values.dim() != self.values.dim() {
            return Err(DataError::Shape(format!(
                "expected {:?}, got {:?}",
                self.values.dim(),
                values.dim()
            )));
        }
        Ok(Self {
            values,
            timestamps: self.timestamps.clone(),
            column_names: self.column_names.clone(),
        })
    }

    /// Keeps only `names`, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self, DataError> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            values: self.values.select(Axis(1), &idx),
            timestamps: self.timestamps.clone(),
            column_names: names.to_vec(),
        })
    }

    /// First `rows` rows.
    pub fn head(&self, rows: usize) -> Self {
        let rows = rows.min(self.len());
        Self {
            values: self.values.slice(ndarray::s![..rows, ..]).to_owned(),
            timestamps: self.timestamps[..rows].to_vec(),
            column_names: self.column_names.clone(),
        }
    }
}

/// Running prefix sums of `column`.
pub fn prefix_sums<T: Scalar>(column: &[T]) -> Vec<T> {
    column
        .iter()
        .scan(T::zero(), |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Inverse of [`prefix_sums`]: first element kept, then successive differences.
pub fn first_differences<T: Scalar>(column: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(column.len());
    let mut prev = T::zero();
    for &x in column {
        out.push(x - prev);
        prev = x;
    }
    out
}

/// Replaces each named column by its running prefix sums.
pub fn cumsum<T: Scalar>(series: &RawSeries<T>, columns: &[String]) -> Result<RawSeries<T>, DataError> {
    if series.is_empty() {
        return Err(DataError::EmptySeries);
    }
    let mut values = series.values.clone();
    for name in columns {
        let j = series.column_index(name)?;
        let col: Vec<T> = values.column(j).to_vec();
        for (dst, v) in values.column_mut(j).iter_mut().zip(prefix_sums(&col)) {
            *dst = v;
        }
    }
    series.with_values(values)
}
