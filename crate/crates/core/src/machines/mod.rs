//! Base learners ("machines") and the registry that builds them by name.
//!
//! Every machine maps a frame to an N-vector forecast of the next
//! observation. The ensembles only ever call [`Machine::predict`], so any
//! learner that honours the trait can join a bank.

mod knn;
mod linalg;
mod mlp;
mod ridge;

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use knn::{KnnFrameMachine, KnnParams};
pub use mlp::{MlpMachine, MlpParams};
pub use ridge::{RidgeArMachine, RidgeParams};

use crate::data::{Frame, FramePair};
use crate::Scalar;

/// Version tag written into every serialized machine.
pub const MACHINE_FORMAT_VERSION: u32 = 1;
const MACHINE_FORMAT: &str = "proxens-machine";

#[derive(Debug, Error)]
pub enum MachineError {
    #[error("no training pairs")]
    EmptyTrainingSet,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("normal equations are singular; use a positive ridge penalty")]
    Singular,
    #[error("machine `{0}` has not been fitted")]
    NotFitted(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unknown machine kind `{0}`")]
    UnknownKind(String),
    #[error("bad machine file: {0}")]
    Format(String),
    #[error("machine `{name}` failed: {message}")]
    Failed { name: String, message: String },
}

/// A trainable one-step-ahead forecaster over frames.
pub trait Machine<T: Scalar>: Send + Sync {
    /// Instance name, used as the model label in reports.
    fn name(&self) -> &str;

    /// Registry kind this machine was built from.
    fn kind(&self) -> &str;

    fn fit(&mut self, pairs: &[FramePair<T>], seed: u64) -> Result<(), MachineError>;

    fn predict(&self, frame: &Frame<T>) -> Result<Array1<T>, MachineError>;

    fn predict_batch(&self, frames: &[&Frame<T>]) -> Result<Vec<Array1<T>>, MachineError> {
        frames.iter().map(|f| self.predict(f)).collect()
    }

    /// Fitted state as JSON, loadable through [`Registry::load`].
    fn state(&self) -> Result<Value, MachineError>;
}

/// Frame and target dimensions shared by a set of training pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub n_features: usize,
    pub width: usize,
    pub n_outputs: usize,
}

impl Shape {
    pub fn of_pairs<T: Scalar>(pairs: &[FramePair<T>]) -> Result<Self, MachineError> {
        let first = pairs.first().ok_or(MachineError::EmptyTrainingSet)?;
        let shape = Self {
            n_features: first.frame.n_features(),
            width: first.frame.width(),
            n_outputs: first.target.len(),
        };
        for (i, p) in pairs.iter().enumerate() {
            if p.frame.window().dim() != (shape.n_features, shape.width) || p.target.len() != shape.n_outputs {
                return Err(MachineError::Shape(format!("pair {i} differs from pair 0")));
            }
        }
        Ok(shape)
    }

    pub fn inputs(&self) -> usize {
        self.n_features * self.width
    }

    pub fn check_frame<T: Scalar>(&self, frame: &Frame<T>) -> Result<(), MachineError> {
        if frame.window().dim() != (self.n_features, self.width) {
            return Err(MachineError::Shape(format!(
                "expected a {}x{} frame, got {:?}",
                self.n_features,
                self.width,
                frame.window().dim()
            )));
        }
        Ok(())
    }
}

/// Flattened frames as rows of an n × (N·w) design matrix, plus the n × N targets.
pub(crate) fn design<T: Scalar>(pairs: &[FramePair<T>], shape: Shape) -> (Array2<T>, Array2<T>) {
    let x = Array2::from_shape_fn((pairs.len(), shape.inputs()), |(i, j)| {
        pairs[i].frame.window()[[j / shape.width, j % shape.width]]
    });
    let y = Array2::from_shape_fn((pairs.len(), shape.n_outputs), |(i, j)| pairs[i].target[j]);
    (x, y)
}

pub(crate) fn parse_params<P: serde::de::DeserializeOwned + Default>(params: &Value) -> Result<P, MachineError> {
    if params.is_null() {
        return Ok(P::default());
    }
    serde_json::from_value(params.clone()).map_err(|e| MachineError::InvalidParams(e.to_string()))
}

/// Roster entry: a registry kind, an optional display name and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub params: Value,
}

impl MachineSpec {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            name: None,
            params: Value::Null,
        }
    }

    pub fn with_params(mut self, params: Value) -> Self {
        self.params = params;
        self
    }

    pub fn label(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.kind)
    }
}

type Builder<T> = Arc<dyn Fn(&str, &Value) -> Result<Box<dyn Machine<T>>, MachineError> + Send + Sync>;
type Loader<T> = Arc<dyn Fn(Value) -> Result<Box<dyn Machine<T>>, MachineError> + Send + Sync>;

struct Entry<T> {
    build: Builder<T>,
    load: Loader<T>,
}

impl<T> Clone for Entry<T> {
    fn clone(&self) -> Self {
        Self {
            build: Arc::clone(&self.build),
            load: Arc::clone(&self.load),
        }
    }
}

/// Name → constructor table. [`Registry::default`] knows `ridge`, `knn` and `mlp`.
#[derive(Clone)]
pub struct Registry<T> {
    entries: BTreeMap<String, Entry<T>>,
}

impl<T: Scalar> Default for Registry<T> {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(
            "ridge",
            |name, p| Ok(Box::new(RidgeArMachine::<T>::new(name, parse_params(p)?)?)),
            |state| Ok(Box::new(serde_json::from_value::<RidgeArMachine<T>>(state).map_err(format_err)?)),
        );
        r.register(
            "knn",
            |name, p| Ok(Box::new(KnnFrameMachine::<T>::new(name, parse_params(p)?)?)),
            |state| Ok(Box::new(serde_json::from_value::<KnnFrameMachine<T>>(state).map_err(format_err)?)),
        );
        r.register(
            "mlp",
            |name, p| Ok(Box::new(MlpMachine::<T>::new(name, parse_params(p)?)?)),
            |state| Ok(Box::new(serde_json::from_value::<MlpMachine<T>>(state).map_err(format_err)?)),
        );
        r
    }
}

fn format_err(e: serde_json::Error) -> MachineError {
    MachineError::Format(e.to_string())
}

impl<T: Scalar> Registry<T> {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn register<B, L>(&mut self, kind: &str, build: B, load: L)
    where
        B: Fn(&str, &Value) -> Result<Box<dyn Machine<T>>, MachineError> + Send + Sync + 'static,
        L: Fn(Value) -> Result<Box<dyn Machine<T>>, MachineError> + Send + Sync + 'static,
    {
        self.entries.insert(
            kind.to_string(),
            Entry {
                build: Arc::new(build),
                load: Arc::new(load),
            },
        );
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.entries.contains_key(kind)
    }

    /// Unfitted machine for a roster entry.
    pub fn build(&self, spec: &MachineSpec) -> Result<Box<dyn Machine<T>>, MachineError> {
        let entry = self
            .entries
            .get(&spec.kind)
            .ok_or_else(|| MachineError::UnknownKind(spec.kind.clone()))?;
        (entry.build)(spec.label(), &spec.params)
    }

    /// Restores a machine written by [`save`].
    pub fn load(&self, blob: &Value) -> Result<Box<dyn Machine<T>>, MachineError> {
        if blob.get("format").and_then(Value::as_str) != Some(MACHINE_FORMAT) {
            return Err(MachineError::Format("not a machine file".into()));
        }
        let version = blob.get("version").and_then(Value::as_u64);
        if version != Some(u64::from(MACHINE_FORMAT_VERSION)) {
            return Err(MachineError::Format(format!("unsupported version {version:?}")));
        }
        let kind = blob
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| MachineError::Format("missing kind".into()))?;
        let entry = self
            .entries
            .get(kind)
            .ok_or_else(|| MachineError::UnknownKind(kind.to_string()))?;
        let state = blob.get("state").cloned().unwrap_or(Value::Null);
        (entry.load)(state)
    }
}

/// Versioned JSON envelope around a fitted machine's state.
pub fn save<T: Scalar>(machine: &dyn Machine<T>) -> Result<Value, MachineError> {
    Ok(json!({
        "format": MACHINE_FORMAT,
        "version": MACHINE_FORMAT_VERSION,
        "kind": machine.kind(),
        "state": machine.state()?,
    }))
}

/// Per-machine seed derived from the bank seed and the machine's position.
pub fn machine_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// M fitted machines, in roster order.
pub struct MachineBank<T> {
    machines: Vec<Box<dyn Machine<T>>>,
}

impl<T: Scalar> MachineBank<T> {
    pub fn new(machines: Vec<Box<dyn Machine<T>>>) -> Self {
        Self { machines }
    }

    /// Builds and fits every roster entry on `pairs`, in parallel.
    pub fn fit(registry: &Registry<T>, roster: &[MachineSpec], pairs: &[FramePair<T>], seed: u64) -> Result<Self, MachineError> {
        let machines = roster
            .par_iter()
            .enumerate()
            .map(|(m, spec)| {
                let mut machine = registry.build(spec)?;
                machine.fit(pairs, machine_seed(seed, m))?;
                Ok(machine)
            })
            .collect::<Result<Vec<_>, MachineError>>()?;
        Ok(Self { machines })
    }

    pub fn len(&self) -> usize {
        self.machines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.machines.is_empty()
    }

    pub fn machines(&self) -> &[Box<dyn Machine<T>>] {
        &self.machines
    }

    pub fn names(&self) -> Vec<String> {
        self.machines.iter().map(|m| m.name().to_string()).collect()
    }

    /// M × N matrix of every machine's prediction for `frame`.
    pub fn predict_all(&self, frame: &Frame<T>) -> Result<Array2<T>, MachineError> {
        let rows = self
            .machines
            .iter()
            .map(|m| m.predict(frame))
            .collect::<Result<Vec<_>, _>>()?;
        let n = rows.first().map_or(0, Array1::len);
        let mut out = Array2::zeros((rows.len(), n));
        for (mut dst, row) in out.rows_mut().into_iter().zip(&rows) {
            if row.len() != n {
                return Err(MachineError::Shape("machines disagree on output width".into()));
            }
            dst.assign(row);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_frames, synthetic, RawSeries};

    fn pairs() -> Vec<FramePair<f64>> {
        let s: RawSeries<f64> = synthetic::damped_sinusoid(60, 1);
        build_frames(&s, 4).unwrap().pairs().to_vec()
    }

    #[test]
    fn registry_builds_defaults_and_rejects_unknown() {
        let r = Registry::<f64>::default();
        assert_eq!(r.kinds().collect::<Vec<_>>(), vec!["knn", "mlp", "ridge"]);
        assert!(matches!(r.build(&MachineSpec::new("xgboost")), Err(MachineError::UnknownKind(_))));
        let bad = MachineSpec::new("knn").with_params(json!({"k": 0}));
        assert!(matches!(r.build(&bad), Err(MachineError::InvalidParams(_))));
        let typo = MachineSpec::new("ridge").with_params(json!({"lambda_": 1.0}));
        assert!(r.build(&typo).is_err());
    }

    #[test]
    fn save_and_load_round_trip() {
        let r = Registry::<f64>::default();
        let data = pairs();
        for kind in ["ridge", "knn", "mlp"] {
            let spec = MachineSpec::new(kind).with_params(json!(if kind == "mlp" { json!({"epochs": 3}) } else { Value::Null }));
            let mut m = r.build(&spec).unwrap();
            m.fit(&data, 7).unwrap();
            let blob = save(m.as_ref()).unwrap();
            let text = serde_json::to_string(&blob).unwrap();
            let back = r.load(&serde_json::from_str(&text).unwrap()).unwrap();
            assert_eq!(back.name(), kind);
            for p in &data[..5] {
                assert_eq!(m.predict(&p.frame).unwrap(), back.predict(&p.frame).unwrap());
            }
        }
    }

    #[test]
    fn load_rejects_wrong_version() {
        let r = Registry::<f64>::default();
        let blob = json!({"format": "proxens-machine", "version": 99, "kind": "ridge", "state": {}});
        assert!(matches!(r.load(&blob), Err(MachineError::Format(_))));
    }

    #[test]
    fn bank_predictions_stack_in_roster_order() {
        let r = Registry::<f64>::default();
        let data = pairs();
        let roster = vec![
            MachineSpec::new("ridge"),
            MachineSpec::new("knn").with_params(json!({"k": 1})),
        ];
        let bank = MachineBank::fit(&r, &roster, &data, 3).unwrap();
        let p = bank.predict_all(&data[2].frame).unwrap();
        assert_eq!(p.dim(), (2, 2));
        assert_eq!(p.row(1), data[2].target);
        assert_eq!(bank.names(), vec!["ridge", "knn"]);
    }

    #[test]
    fn inconsistent_shapes() {
        let mut data = pairs();
        data[3].target = Array1::zeros(3);
        assert!(matches!(Shape::of_pairs(&data), Err(MachineError::Shape(_))));
        assert!(matches!(Shape::of_pairs::<f64>(&[]), Err(MachineError::EmptyTrainingSet)));
    }
}
