use std::cmp::Ordering;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{design, Machine, MachineError, Shape};
use crate::data::{Frame, FramePair};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct Stored<T> {
    shape: Shape,
    inputs: Array2<T>,
    targets: Array2<T>,
    start_indices: Vec<usize>,
}

/// Uniform average of the targets of the `k` stored frames nearest to the
/// query in Frobenius distance. Equal distances go to the lower start index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct KnnFrameMachine<T> {
    name: String,
    params: KnnParams,
    stored: Option<Stored<T>>,
}

impl<T: Scalar> KnnFrameMachine<T> {
    pub fn new(name: &str, params: KnnParams) -> Result<Self, MachineError> {
        if params.k == 0 {
            return Err(MachineError::InvalidParams("knn needs k >= 1".into()));
        }
        Ok(Self {
            name: name.to_string(),
            params,
            stored: None,
        })
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    /// Indices into the stored pairs of the `k` nearest neighbours, closest first.
    pub fn neighbours(&self, frame: &Frame<T>) -> Result<Vec<usize>, MachineError> {
        let s = self
            .stored
            .as_ref()
            .ok_or_else(|| MachineError::NotFitted(self.name.clone()))?;
        s.shape.check_frame(frame)?;
        let query: Vec<T> = frame.flatten().collect();
        let mut dist: Vec<(T, usize, usize)> = s
            .inputs
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let d2 = row
                    .iter()
                    .zip(&query)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>();
                (d2, s.start_indices[i], i)
            })
            .collect();
        dist.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        Ok(dist.into_iter().take(self.params.k).map(|(_, _, i)| i).collect())
    }
}

impl<T: Scalar> Machine<T> for KnnFrameMachine<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &str {
        "knn"
    }

    fn fit(&mut self, pairs: &[FramePair<T>], _seed: u64) -> Result<(), MachineError> {
        let shape = Shape::of_pairs(pairs)?;
        if self.params.k > pairs.len() {
            return Err(MachineError::InvalidParams(format!(
                "k = {} exceeds the {} training pairs",
                self.params.k,
                pairs.len()
            )));
        }
        let (inputs, targets) = design(pairs, shape);
        self.stored = Some(Stored {
            shape,
            inputs,
            targets,
            start_indices: pairs.iter().map(|p| p.frame.start_index()).collect(),
        });
        Ok(())
    }

    fn predict(&self, frame: &Frame<T>) -> Result<Array1<T>, MachineError> {
        let idx = self.neighbours(frame)?;
        let s = self.stored.as_ref().expect("neighbours checked fit");
        let mut out = Array1::zeros(s.shape.n_outputs);
        for &i in &idx {
            out += &s.targets.row(i);
        }
        Ok(out / T::of(idx.len() as f64))
    }

    fn state(&self) -> Result<Value, MachineError> {
        serde_json::to_value(self).map_err(|e| MachineError::Format(e.to_string()))
    }
}
