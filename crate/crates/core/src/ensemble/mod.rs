//! Consensus-weighted proximity aggregation (DPE, PaDPE, COBRA).
//!
//! Every machine in a bank predicts every frame of a *proximity set* once.
//! For a query frame, a proximity entry *qualifies* when at least
//! `ceil(M·α)` machines place their prediction for it within `ε` of their
//! prediction for the query. The forecast is the uniform average of the
//! qualified entries' targets; when nothing qualifies, the mean of the
//! machines' own query predictions is returned and flagged as a fallback.
//!
//! The variants differ only in where machines are trained and which frames
//! make up the proximity set:
//!
//! | variant | machines fitted on | tuning set     | test set             |
//! |---------|--------------------|----------------|----------------------|
//! | DPE     | train              | train          | train ∪ validation   |
//! | PaDPE   | train head (n₁)    | head ∪ tail    | head ∪ tail ∪ val    |
//! | COBRA   | train head (n₁)    | tail           | tail                 |
//!
//! COBRA always demands unanimity (α = 1).

mod proximity;
mod validation;
mod weights;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use proximity::{
    build_proximity_set, proximity_regions, training_range, Phase, Provenance, ProximitySet,
};
pub use validation::{ValidationProblem, ValidationScore};
pub use weights::{
    aggregate, consensus_weights, predict_ensemble, qualifying_votes, write_forecasts_csv,
    Diagnostics, Ensemble, Forecast, WeightVector,
};

use crate::data::DataError;
use crate::machines::MachineError;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error("the {0} region is empty")]
    EmptyRegion(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[serde(alias = "DPE")]
    Dpe,
    #[serde(alias = "PaDPE")]
    Padpe,
    #[serde(alias = "COBRA")]
    Cobra,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dpe, Variant::Padpe, Variant::Cobra];

    /// Whether machines are trained on the head of a partitioned training set.
    pub fn is_partitioned(self) -> bool {
        !matches!(self, Variant::Dpe)
    }

    /// Whether α is a free parameter (COBRA fixes it to 1).
    pub fn tunes_alpha(self) -> bool {
        !matches!(self, Variant::Cobra)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Dpe => "DPE",
            Variant::Padpe => "PaDPE",
            Variant::Cobra => "COBRA",
        })
    }
}

impl FromStr for Variant {
    type Err = EnsembleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dpe" => Ok(Variant::Dpe),
            "padpe" => Ok(Variant::Padpe),
            "cobra" => Ok(Variant::Cobra),
            _ => Err(EnsembleError::InvalidConfig(format!("unknown variant `{s}`"))),
        }
    }
}

/// Distance between two machine outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Euclidean,
    Manhattan,
    Chebyshev,
}

impl Norm {
    pub fn distance<T: crate::Scalar>(self, a: impl IntoIterator<Item = T>, b: impl IntoIterator<Item = T>) -> T {
        let diffs = a.into_iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Norm::Euclidean => diffs.map(|d| d * d).sum::<T>().sqrt(),
            Norm::Manhattan => diffs.sum(),
            Norm::Chebyshev => diffs.fold(T::zero(), T::max),
        }
    }
}

/// Guard against `M·α` landing a hair above an integer.
const VOTE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Distance threshold ε.
    pub epsilon: f64,
    /// Consensus fraction α of machines that must agree.
    pub alpha: f64,
    pub variant: Variant,
    /// n₁/n for the partitioned variants.
    pub partition_fraction: f64,
    pub norm: Norm,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            alpha: 1.0,
            variant: Variant::Dpe,
            partition_fraction: 0.5,
            norm: Norm::Euclidean,
        }
    }
}

impl EnsembleConfig {
    pub fn new(variant: Variant, epsilon: f64, alpha: f64) -> Self {
        Self {
            epsilon,
            alpha,
            variant,
            ..Default::default()
        }
    }

    pub fn with_partition_fraction(mut self, fraction: f64) -> Self {
        self.partition_fraction = fraction;
        self
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(EnsembleError::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(EnsembleError::InvalidConfig(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.variant.is_partitioned() && !(self.partition_fraction > 0.0 && self.partition_fraction < 1.0) {
            return Err(EnsembleError::InvalidConfig(format!(
                "partition fraction must lie in (0, 1), got {}",
                self.partition_fraction
            )));
        }
        Ok(())
    }

    /// Machines that must agree for an entry to qualify: `ceil(M·α)`, at
    /// least one, and all `M` for COBRA.
    pub fn required_votes(&self, machines: usize) -> usize {
        if self.variant == Variant::Cobra {
            return machines;
        }
        let need = (machines as f64 * self.alpha - VOTE_SLACK).ceil();
        (need.max(1.0) as usize).min(machines.max(1))
    }
}
