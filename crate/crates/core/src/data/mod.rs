//! Ingestion, preprocessing and sliding-window framing.

mod csv_io;
mod error;
mod frames;
mod pipeline;
mod scaler;
mod series;
pub mod synthetic;

pub use csv_io::{load_csv, parse_timestamp, read_csv, write_series_csv, CsvSchema};
pub use error::DataError;
pub use frames::{build_frames, partition_sizes, split, Frame, FrameDataset, FramePair, Split};
pub use pipeline::{prepare, prepare_staged, PipelineConfig, Prepared, Stage};
pub use scaler::{fit_scaler, Scaler};
pub use series::{cumsum, first_differences, prefix_sums, RawSeries, Timestamp};
