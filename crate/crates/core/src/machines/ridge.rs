use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{design, linalg, Machine, MachineError, Shape};
use crate::data::{Frame, FramePair};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeParams {
    pub lambda: f64,
}

impl Default for RidgeParams {
    fn default() -> Self {
        Self { lambda: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct Fitted<T> {
    shape: Shape,
    /// N × (N·w), one row of weights per output.
    weights: Array2<T>,
    bias: Array1<T>,
}

/// Linear autoregression over the flattened window with an unpenalized
/// intercept, solved in closed form:
/// `min ‖y − Xβ − b‖² + λ‖β‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct RidgeArMachine<T> {
    name: String,
    params: RidgeParams,
    fitted: Option<Fitted<T>>,
}

impl<T: Scalar> RidgeArMachine<T> {
    pub fn new(name: &str, params: RidgeParams) -> Result<Self, MachineError> {
        if !(params.lambda >= 0.0 && params.lambda.is_finite()) {
            return Err(MachineError::InvalidParams(format!(
                "ridge lambda must be a finite non-negative number, got {}",
                params.lambda
            )));
        }
        Ok(Self {
            name: name.to_string(),
            params,
            fitted: None,
        })
    }

    /// Machine with fixed coefficients; `weights` is N × (n_features · width).
    pub fn from_parts(name: &str, weights: Array2<T>, bias: Array1<T>, n_features: usize, width: usize) -> Result<Self, MachineError> {
        let shape = Shape {
            n_features,
            width,
            n_outputs: bias.len(),
        };
        if weights.dim() != (shape.n_outputs, shape.inputs()) {
            return Err(MachineError::Shape(format!(
                "weights must be {}x{}",
                shape.n_outputs,
                shape.inputs()
            )));
        }
        Ok(Self {
            name: name.to_string(),
            params: RidgeParams::default(),
            fitted: Some(Fitted { shape, weights, bias }),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.params.lambda
    }

    /// `(weights, bias)` once fitted.
    pub fn coefficients(&self) -> Option<(&Array2<T>, &Array1<T>)> {
        self.fitted.as_ref().map(|f| (&f.weights, &f.bias))
    }
}

impl<T: Scalar> Machine<T> for RidgeArMachine<T> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> &str {
        "ridge"
    }

    fn fit(&mut self, pairs: &[FramePair<T>], _seed: u64) -> Result<(), MachineError> {
        let shape = Shape::of_pairs(pairs)?;
        let (x, y) = design(pairs, shape);
        let n = T::of(pairs.len() as f64);
        let x_mean = x.sum_axis(Axis(0)) / n;
        let y_mean = y.sum_axis(Axis(0)) / n;
        let xc = &x - &x_mean;
        let yc = &y - &y_mean;

        let mut gram = xc.t().dot(&xc);
        let lambda = T::of(self.params.lambda);
        for d in gram.diag_mut() {
            *d += lambda;
        }
        let rhs = xc.t().dot(&yc);
        let beta = linalg::solve(gram, rhs).ok_or(MachineError::Singular)?;
        let weights = beta.t().as_standard_layout().into_owned();
        let bias = &y_mean - &weights.dot(&x_mean);
        if weights.iter().chain(bias.iter()).any(|w| !w.is_finite()) {
            return Err(MachineError::Singular);
        }
        self.fitted = Some(Fitted { shape, weights, bias });
        Ok(())
    }

    fn predict(&self, frame: &Frame<T>) -> Result<Array1<T>, MachineError> {
        let f = self
            .fitted
            .as_ref()
            .ok_or_else(|| MachineError::NotFitted(self.name.clone()))?;
        f.shape.check_frame(frame)?;
        let input: Array1<T> = frame.flatten().collect();
        Ok(f.weights.dot(&input) + &f.bias)
    }

    fn state(&self) -> Result<Value, MachineError> {
        serde_json::to_value(self).map_err(|e| MachineError::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_pairs(n: usize, seed: u64) -> Vec<FramePair<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let target = array![2.0 * w[2]];
                FramePair {
                    frame: Frame::new(Array2::from_shape_vec((1, 3), w).unwrap(), i),
                    target,
                }
            })
            .collect()
    }

    fn loss(x: &Array2<f64>, y: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>, lambda: f64) -> f64 {
        let r = y - &(x.dot(&w.t()) + b);
        r.mapv(|v| v * v).sum() + lambda * w.mapv(|v| v * v).sum()
    }

    #[test]
    fn recovers_exact_linear_map() {
        let data = linear_pairs(40, 1);
        let mut m = RidgeArMachine::new("ridge", RidgeParams { lambda: 0.0 }).unwrap();
        m.fit(&data, 0).unwrap();
        for p in &data {
            assert!((m.predict(&p.frame).unwrap()[0] - p.target[0]).abs() < 1e-6);
        }
        let fresh = Frame::new(array![[0.3, -0.2, 0.45]], 0);
        assert!((m.predict(&fresh).unwrap()[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_weights_return_bias() {
        let m = RidgeArMachine::from_parts("r", Array2::zeros((2, 6)), array![0.25, -1.0], 2, 3).unwrap();
        let out = m.predict(&Frame::new(array![[9.0, 8.0, 7.0], [1.0, 2.0, 3.0]], 0)).unwrap();
        assert_eq!(out, array![0.25, -1.0]);
    }

    #[test]
    fn singular_without_penalty() {
        // constant windows make the centred design matrix zero
        let data: Vec<_> = (0..5)
            .map(|i| FramePair {
                frame: Frame::new(array![[1.0, 1.0]], i),
                target: array![i as f64],
            })
            .collect();
        let mut m = RidgeArMachine::new("r", RidgeParams { lambda: 0.0 }).unwrap();
        assert!(matches!(m.fit(&data, 0), Err(MachineError::Singular)));
        let mut m = RidgeArMachine::new("r", RidgeParams { lambda: 0.5 }).unwrap();
        assert!(m.fit(&data, 0).is_ok());
    }

    #[test]
    fn satisfies_normal_equations() {
        let data = linear_pairs(30, 2);
        let mut noisy = data.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in &mut noisy {
            p.target[0] += rng.random_range(-0.1..0.1);
        }
        let lambda = 0.7;
        let mut m = RidgeArMachine::new("r", RidgeParams { lambda }).unwrap();
        m.fit(&noisy, 0).unwrap();
        let (w, b) = m.coefficients().unwrap();
        let shape = Shape::of_pairs(&noisy).unwrap();
        let (x, y) = design(&noisy, shape);
        let resid = &y - &(x.dot(&w.t()) + b);
        // d/dβ: −Xᵀr + λβ = 0, d/db: −Σr = 0
        let grad_w = -x.t().dot(&resid) + &(w.t().to_owned() * lambda);
        assert!(grad_w.iter().all(|g| g.abs() < 1e-8));
        assert!(resid.sum().abs() < 1e-8);
    }

    #[test]
    fn perturbations_never_lower_the_loss() {
        let data = linear_pairs(25, 3);
        let lambda = 0.3;
        let mut m = RidgeArMachine::new("r", RidgeParams { lambda }).unwrap();
        m.fit(&data, 0).unwrap();
        let (w, b) = m.coefficients().unwrap();
        let (x, y) = design(&data, Shape::of_pairs(&data).unwrap());
        let base = loss(&x, &y, w, b, lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut dir: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|d| *d *= 1e-3 / norm);
            let w2 = w + &Array2::from_shape_vec((1, 3), dir[..3].to_vec()).unwrap();
            let b2 = b + dir[3];
            assert!(loss(&x, &y, &w2, &b2, lambda) >= base);
        }
    }

    #[test]
    fn unfitted_and_wrong_shape() {
        let m = RidgeArMachine::<f64>::new("r", RidgeParams::default()).unwrap();
        assert!(matches!(m.predict(&Frame::new(array![[1.0]], 0)), Err(MachineError::NotFitted(_))));
        let m = RidgeArMachine::from_parts("r", Array2::zeros((1, 2)), array![0.0], 1, 2).unwrap();
        assert!(matches!(m.predict(&Frame::new(array![[1.0]], 0)), Err(MachineError::Shape(_))));
        assert!(RidgeArMachine::<f64>::new("r", RidgeParams { lambda: -1.0 }).is_err());
    }
}
