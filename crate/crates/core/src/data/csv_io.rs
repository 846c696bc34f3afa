use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DataError, RawSeries, Timestamp};
use crate::Scalar;

/// Which CSV columns to read.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    /// Timestamp column; the first column when unset.
    pub timestamp_column: Option<String>,
    /// Numeric columns to keep; every non-timestamp column when unset.
    pub feature_columns: Option<Vec<String>>,
    /// Drop rows with an empty selected cell instead of failing.
    pub drop_missing: bool,
}

const DATETIME_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y/%m/%d %H:%M:%S",
    "%Y/%m/%d %H:%M",
];

/// Parses an epoch integer or an ISO-8601-like date/time into a sort key.
pub fn parse_timestamp(label: &str) -> Option<i64> {
    let label = label.trim();
    if let Ok(k) = label.parse::<i64>() {
        return Some(k);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(label) {
        return Some(dt.timestamp());
    }
    for fmt in DATETIME_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(label, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(label, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || ["na", "n/a", "nan", "null"].contains(&c.to_ascii_lowercase().as_str())
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<RawSeries<T>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<T: Scalar, R: Read>(reader: R, schema: &CsvSchema) -> Result<RawSeries<T>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let csv_err = |e: csv::Error| DataError::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    };
    let ts_idx = match &schema.timestamp_column {
        Some(name) => find(name)?,
        None => 0,
    };
    let features: Vec<usize> = match &schema.feature_columns {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_, _>>()?,
        None => (0..headers.len()).filter(|&j| j != ts_idx).collect(),
    };
    if features.is_empty() {
        return Err(DataError::Shape("no feature columns selected".into()));
    }

    let mut flat = Vec::new();
    let mut timestamps: Vec<Timestamp> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |j: usize| record.get(j).unwrap_or("");

        let mut row = Vec::with_capacity(features.len());
        let mut missing = None;
        for &j in &features {
            let raw = cell(j);
            if is_missing(raw) {
                missing = Some(j);
                break;
            }
            let x: f64 = raw.trim().parse().map_err(|_| DataError::Parse {
                line,
                column: headers[j].clone(),
                value: raw.to_string(),
            })?;
            row.push(T::of(x));
        }
        if let Some(j) = missing {
            if schema.drop_missing {
                log::warn!("line {line}: dropping row with missing `{}`", headers[j]);
                continue;
            }
            return Err(DataError::MissingValue {
                line,
                column: headers[j].clone(),
            });
        }

        let label = cell(ts_idx).trim().to_string();
        let key = parse_timestamp(&label).ok_or_else(|| DataError::Parse {
            line,
            column: headers[ts_idx].clone(),
            value: label.clone(),
        })?;
        if timestamps.last().is_some_and(|prev| key <= prev.key) {
            return Err(DataError::Ordering { line, label });
        }
        timestamps.push(Timestamp::new(label, key));
        flat.extend(row);
    }
    if timestamps.len() < 2 {
        return Err(DataError::TooFewRows {
            needed: 2,
            got: timestamps.len(),
        });
    }
    let values = Array2::from_shape_vec((timestamps.len(), features.len()), flat)
        .map_err(|e| DataError::Shape(e.to_string()))?;
    let names = features.iter().map(|&j| headers[j].clone()).collect();
    RawSeries::new(values, timestamps, names)
}

/// Writes a series as CSV with a leading `timestamp` column.
pub fn write_series_csv<T: Scalar, W: std::io::Write>(series: &RawSeries<T>, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(series.column_names().iter().cloned());
    w.write_record(&header)?;
    for (ts, row) in series.timestamps().iter().zip(series.values().rows()) {
        let mut rec = vec![ts.label.clone()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
