use std::ops::Range;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EnsembleConfig, EnsembleError, Variant};
use crate::data::FrameDataset;
use crate::machines::MachineBank;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Tune,
    Test,
}

/// Which part of the dataset a proximity entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Train,
    TrainHead,
    TrainTail,
    Validation,
}

/// Pairs the machines of `config.variant` are trained on.
pub fn training_range<T: Scalar>(dataset: &FrameDataset<T>, config: &EnsembleConfig) -> Result<Range<usize>, EnsembleError> {
    if dataset.split().n_train == 0 {
        return Err(EnsembleError::EmptyRegion("training"));
    }
    if config.variant.is_partitioned() {
        let (n1, _) = crate::data::partition_sizes(dataset.split().n_train, config.partition_fraction)?;
        Ok(0..n1)
    } else {
        Ok(dataset.train_range())
    }
}

/// Dataset ranges making up the proximity set, in order.
pub fn proximity_regions<T: Scalar>(
    dataset: &FrameDataset<T>,
    config: &EnsembleConfig,
    phase: Phase,
) -> Result<Vec<(Range<usize>, Provenance)>, EnsembleError> {
    let n = dataset.split().n_train;
    if n == 0 {
        return Err(EnsembleError::EmptyRegion("training"));
    }
    let val = dataset.validation_range();
    if phase == Phase::Test && val.is_empty() && config.variant != Variant::Cobra {
        return Err(EnsembleError::EmptyRegion("validation"));
    }
    let regions = match config.variant {
        Variant::Dpe => {
            let mut r = vec![(0..n, Provenance::Train)];
            if phase == Phase::Test {
                r.push((val, Provenance::Validation));
            }
            r
        }
        Variant::Padpe => {
            let (n1, _) = crate::data::partition_sizes(n, config.partition_fraction)?;
            let mut r = vec![(0..n1, Provenance::TrainHead), (n1..n, Provenance::TrainTail)];
            if phase == Phase::Test {
                r.push((val, Provenance::Validation));
            }
            r
        }
        Variant::Cobra => {
            let (n1, _) = crate::data::partition_sizes(n, config.partition_fraction)?;
            vec![(n1..n, Provenance::TrainTail)]
        }
    };
    Ok(regions)
}

/// Cached machine predictions over a pool of frames, with their targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ProximitySet<T> {
    /// S × M × N.
    predictions: Array3<T>,
    /// S × N.
    targets: Array2<T>,
    provenance: Vec<Provenance>,
    start_indices: Vec<usize>,
}

impl<T: Scalar> ProximitySet<T> {
    pub fn new(
        predictions: Array3<T>,
        targets: Array2<T>,
        provenance: Vec<Provenance>,
        start_indices: Vec<usize>,
    ) -> Result<Self, EnsembleError> {
        let (s, _, n) = predictions.dim();
        if s == 0 {
            return Err(EnsembleError::EmptyRegion("proximity"));
        }
        if targets.dim() != (s, n) || provenance.len() != s || start_indices.len() != s {
            return Err(EnsembleError::Shape(format!(
                "{s} cached entries but targets {:?}, {} provenance tags, {} indices",
                targets.dim(),
                provenance.len(),
                start_indices.len()
            )));
        }
        if predictions.iter().any(|x| !x.is_finite()) {
            return Err(EnsembleError::Shape("non-finite cached prediction".into()));
        }
        Ok(Self {
            predictions,
            targets,
            provenance,
            start_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.predictions.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_machines(&self) -> usize {
        self.predictions.dim().1
    }

    pub fn n_outputs(&self) -> usize {
        self.predictions.dim().2
    }

    pub fn predictions(&self) -> &Array3<T> {
        &self.predictions
    }

    /// M × N predictions for entry `i`.
    pub fn entry(&self, i: usize) -> ArrayView2<'_, T> {
        self.predictions.index_axis(Axis(0), i)
    }

    pub fn targets(&self) -> &Array2<T> {
        &self.targets
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn start_indices(&self) -> &[usize] {
        &self.start_indices
    }

    /// Entries reordered so that new entry `k` is old entry `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            predictions: self.predictions.select(Axis(0), order),
            targets: self.targets.select(Axis(0), order),
            provenance: order.iter().map(|&i| self.provenance[i]).collect(),
            start_indices: order.iter().map(|&i| self.start_indices[i]).collect(),
        }
    }

    /// Same entries with the machine axis reordered.
    pub fn with_machine_order(&self, order: &[usize]) -> Self {
        Self {
            predictions: self.predictions.select(Axis(1), order),
            ..self.clone()
        }
    }
}

/// Predicts every proximity frame with every machine once.
///
/// Frames are predicted in parallel; results are assembled in dataset order
/// so the set is identical to a sequential build.
pub fn build_proximity_set<T: Scalar>(
    bank: &MachineBank<T>,
    dataset: &FrameDataset<T>,
    config: &EnsembleConfig,
    phase: Phase,
) -> Result<ProximitySet<T>, EnsembleError> {
    config.validate()?;
    if bank.is_empty() {
        return Err(EnsembleError::InvalidConfig("machine bank is empty".into()));
    }
    let entries: Vec<(usize, Provenance)> = proximity_regions(dataset, config, phase)?
        .into_iter()
        .flat_map(|(range, tag)| range.map(move |i| (i, tag)))
        .collect();
    if entries.is_empty() {
        return Err(EnsembleError::EmptyRegion("proximity"));
    }
    let pairs = dataset.pairs();
    let n_out = pairs[entries[0].0].target.len();
    let per_entry = entries
        .par_iter()
        .map(|&(i, _)| bank.predict_all(&pairs[i].frame))
        .collect::<Result<Vec<_>, _>>()?;

    let m = bank.len();
    let mut predictions = Array3::zeros((entries.len(), m, n_out));
    for (mut dst, src) in predictions.outer_iter_mut().zip(&per_entry) {
        if src.dim() != (m, n_out) {
            return Err(EnsembleError::Shape(format!(
                "machine outputs are {:?}, targets have width {n_out}",
                src.dim()
            )));
        }
        dst.assign(src);
    }
    let mut targets = Array2::zeros((entries.len(), n_out));
    for (mut row, &(i, _)) in targets.rows_mut().into_iter().zip(&entries) {
        row.assign(&pairs[i].target);
    }
    ProximitySet::new(
        predictions,
        targets,
        entries.iter().map(|&(_, tag)| tag).collect(),
        entries.iter().map(|&(i, _)| pairs[i].frame.start_index()).collect(),
    )
}
