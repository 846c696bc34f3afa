//! Proximity-based ensembles for multivariate time-series forecasting.
//!
//! Base learners ("machines") are trained on sliding-window frames. A query
//! frame's forecast averages the targets of those proximity frames on whose
//! predictions enough machines agree with the query, within a distance
//! threshold. Three aggregation variants are provided: DPE, PaDPE and COBRA.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the experiment runner uses.

pub mod data;
pub mod dynamic;
pub mod ensemble;
pub mod evaluation;
pub mod experiment;
pub mod hpo;
pub mod machines;
mod scalar;

pub use scalar::Scalar;

pub type Series = data::RawSeries<f64>;
pub type Dataset = data::FrameDataset<f64>;
pub type MinMaxScaler = data::Scaler<f64>;
