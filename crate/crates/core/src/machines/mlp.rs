use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{design, Machine, MachineError, Shape};
use crate::data::{Frame, FramePair};
use crate::Scalar;

/// Defaults: batch 32, learning rate 0.001, 80 epochs, 16 hidden units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: 16,
            learning_rate: 0.001,
            epochs: 80,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct Net<T> {
    w1: Array2<T>,
    b1: Array1<T>,
    w2: Array2<T>,
    b2: Array1<T>,
}

impl<T: Scalar> Net<T> {
    fn init(inputs: usize, hidden: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Array2::from_shape_simple_fn((fan_out, fan_in), || T::of(rng.random_range(-limit..limit)))
        };
        Self {
            w1: glorot(inputs, hidden),
            b1: Array1::zeros(hidden),
            w2: glorot(hidden, outputs),
            b2: Array1::zeros(outputs),
        }
    }

    fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn flat(&self) -> Vec<T> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
            .collect()
    }

    fn set_flat(&mut self, flat: &[T]) {
        let targets = self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut());
        for (dst, &src) in targets.zip(flat) {
            *dst = src;
        }
    }

    fn hidden(&self, x: &Array2<T>) -> Array2<T> {
        (x.dot(&self.w1.t()) + &self.b1).mapv(T::tanh)
    }

    fn forward(&self, x: &Array2<T>) -> Array2<T> {
        self.hidden(x).dot(&self.w2.t()) + &self.b2
    }

    /// Loss `Σ‖ŷ − y‖² / (2B)` over the rows of `x` and its gradient, flattened
    /// in the order w1, b1, w2, b2.
    fn loss_and_gradient(&self, x: &Array2<T>, y: &Array2<T>) -> (T, Vec<T>) {
        let b = T::of(x.nrows() as f64);
        let h = self.hidden(x);
        let resid = h.dot(&self.w2.t()) + &self.b2 - y;
        let loss = resid.mapv(|r| r * r).sum() / (b + b);
        let d_out = resid / b;
        let g_w2 = d_out.t().dot(&h);
        let g_b2 = d_out.sum_axis(Axis(0));
        let d_hidden = d_out.dot(&self.w2) * &h.mapv(|v| T::one() - v * v);
        let g_w1 = d_hidden.t().dot(x);
        let g_b1 = d_hidden.sum_axis(Axis(0));
        let grad = g_w1
            .iter()
            .chain(&g_b1)
            .chain(&g_w2)
            .chain(&g_b2)
            .copied()
            .collect();
        (loss, grad)
    }
}

/// Adam state over a flat parameter vector.
struct Adam<T> {
    lr: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, n: usize) -> Self {
        Self {
            lr: T::of(lr),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let (b1, b2) = (T::of(Self::BETA1), T::of(Self::BETA2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + T::of(Self::EPS));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct Trained<T> {
    shape: Shape,
    net: Net<T>,
    loss_history: Vec<T>,
}

/// One tanh hidden layer and a linear output layer, trained with mini-batch
/// Adam on the squared error. Batches are reshuffled every epoch from a
/// seeded generator, so fits are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct MlpMachine<T> {
    name: String,
    params: MlpParams,
    trained: Option<Trained<T>>,
}

impl<T: Scalar> MlpMachine<T> {
    pub fn new(name: &str, params: MlpParams) -> Result<Self, MachineError> {
        if params.hidden == 0 || params.batch_size == 0 {
            return Err(MachineError::InvalidParams("mlp hidden width and batch size must be positive".into()));
        }
        if !(params.learning_rate > 0.0 && params.learning_rate.is_finite()) {
            return Err(MachineError::InvalidParams(format!(
                "learning rate must be positive, got {}",
                params.learning_rate
            )));
        }
        Ok(Self {
            name: name.to_string(),
            params,
            trained: None,
        })
    }

    fn trained(&self) -> Result<&Trained<T>, MachineError> {
        self.trained
            .as_ref()
            .ok_or_else(|| MachineError::NotFitted(self.name.clone()))
    }

    /// Seeded initial weights for `shape`, without training.
    pub fn initialize(&mut self, shape: Shape, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Net::init(shape.inputs(), self.params.hidden, shape.n_outputs, &mut rng);
        self.trained = Some(Trained {
            shape,
            net,
            loss_history: Vec::new(),
        });
    }

    /// Full training-set loss before training and after each epoch.
    pub fn loss_history(&self) -> &[T] {
        self.trained.as_ref().map_or(&[], |t| &t.loss_history)
    }

    pub fn n_parameters(&self) -> usize {
        self.trained.as_ref().map_or(0, |t| t.net.n_params())
    }

    /// Flat parameters in the order w1, b1, w2, b2 (weights row-major).
    pub fn parameters(&self) -> Result<Vec<T>, MachineError> {
        Ok(self.trained()?.net.flat())
    }

    pub fn set_parameters(&mut self, flat: &[T]) -> Result<(), MachineError> {
        let name = self.name.clone();
        let t = self.trained.as_mut().ok_or(MachineError::NotFitted(name))?;
        if flat.len() != t.net.n_params() {
            return Err(MachineError::Shape(format!(
                "expected {} parameters, got {}",
                t.net.n_params(),
                flat.len()
            )));
        }
        t.net.set_flat(flat);
        Ok(())
    }

    /// Mean half squared error over `pairs` and its gradient w.r.t. [`Self::parameters`].
    pub fn loss_and_gradient(&self, pairs: &[FramePair<T>]) -> Result<(T, Vec<T>), MachineError> {
        let t = self.trained()?;
        if Shape::of_pairs(pairs)? != t.shape {
            return Err(MachineError::Shape("pairs do not match the network".into()));
        }
        let (x, y) = design(pairs, t.shape);
        Ok(t.net.loss_and_gradient(&x, &y))
    }
}

impl<T: Scalar> Machine<T> for MlpMachine<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &str {
        "mlp"
    }

    fn fit(&mut self, pairs: &[FramePair<T>], seed: u64) -> Result<(), MachineError> {
        let shape = Shape::of_pairs(pairs)?;
        let (x, y) = design(pairs, shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Net::init(shape.inputs(), self.params.hidden, shape.n_outputs, &mut rng);
        let mut flat = net.flat();
        let mut adam = Adam::new(self.params.learning_rate, flat.len());
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut history = vec![net.loss_and_gradient(&x, &y).0];

        for _ in 0..self.params.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(self.params.batch_size) {
                let xb = x.select(Axis(0), batch);
                let yb = y.select(Axis(0), batch);
                let (_, grad) = net.loss_and_gradient(&xb, &yb);
                adam.step(&mut flat, &grad);
                net.set_flat(&flat);
            }
            history.push(net.loss_and_gradient(&x, &y).0);
        }
        if flat.iter().any(|w| !w.is_finite()) {
            return Err(MachineError::Failed {
                name: self.name.clone(),
                message: "training diverged".into(),
            });
        }
        self.trained = Some(Trained {
            shape,
            net,
            loss_history: history,
        });
        Ok(())
    }

    fn predict(&self, frame: &Frame<T>) -> Result<Array1<T>, MachineError> {
        let t = self.trained()?;
        t.shape.check_frame(frame)?;
        let x = Array2::from_shape_vec((1, t.shape.inputs()), frame.flatten().collect())
            .map_err(|e| MachineError::Shape(e.to_string()))?;
        Ok(t.net.forward(&x).row(0).to_owned())
    }

    fn state(&self) -> Result<Value, MachineError> {
        serde_json::to_value(self).map_err(|e| MachineError::Format(e.to_string()))
    }
}
