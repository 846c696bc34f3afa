//! Seeded synthetic series used by tests and the example configurations.

use std::f64::consts::TAU;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RawSeries;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Sinusoid,
    RandomWalk,
}

impl SyntheticKind {
    pub fn generate<T: Scalar>(self, len: usize, seed: u64) -> RawSeries<T> {
        match self {
            SyntheticKind::Sinusoid => damped_sinusoid(len, seed),
            SyntheticKind::RandomWalk => random_walk(len, seed),
        }
    }
}

fn build<T: Scalar>(len: usize, rows: impl Fn(usize) -> [f64; 2]) -> RawSeries<T> {
    let values = Array2::from_shape_fn((len, 2), |(t, j)| T::of(rows(t)[j]));
    RawSeries::from_values(values, vec!["s1".into(), "s2".into()]).expect("two named columns")
}

/// Two coupled sinusoids with slow exponential damping and Gaussian noise (sd 0.05).
pub fn damped_sinusoid<T: Scalar>(len: usize, seed: u64) -> RawSeries<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).expect("valid sd");
    let eps: Vec<[f64; 2]> = (0..len)
        .map(|_| [noise.sample(&mut rng), noise.sample(&mut rng)])
        .collect();
    let decay = 4.0 * len.max(1) as f64;
    build(len, |t| {
        let t_f = t as f64;
        let amp = (-t_f / decay).exp();
        let s1 = amp * (TAU * t_f / 40.0).sin() + eps[t][0];
        let s2 = 0.6 * amp * (TAU * t_f / 25.0).cos() + 0.3 * amp * (TAU * t_f / 40.0).sin() + eps[t][1];
        [s1, s2]
    })
}

/// Two correlated Gaussian random walks starting at 10.
pub fn random_walk<T: Scalar>(len: usize, seed: u64) -> RawSeries<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = Normal::new(0.0, 0.1).expect("valid sd");
    let mut level = [10.0, 10.0];
    let rows: Vec<[f64; 2]> = (0..len)
        .map(|_| {
            let a: f64 = step.sample(&mut rng);
            let b: f64 = step.sample(&mut rng);
            let row = level;
            level[0] += a;
            level[1] += 0.5 * a + b;
            row
        })
        .collect();
    build(len, |t| rows[t])
}
