#![allow(dead_code)]

use ndarray::{Array2, Array3};
use proxens::ensemble::{Provenance, ProximitySet};
use rand::Rng;

/// Random proximity set (S × M × N) and query (M × N). Values sit on a
/// coarse grid so exact distance ties come up regularly.
pub fn instance<R: Rng>(rng: &mut R, s: usize, m: usize, n: usize) -> (ProximitySet<f64>, Array2<f64>) {
    let mut v = || (rng.random_range(0..=20) as f64) / 20.0;
    let preds = Array3::from_shape_simple_fn((s, m, n), &mut v);
    let targets = Array2::from_shape_simple_fn((s, n), &mut v);
    let query = Array2::from_shape_simple_fn((m, n), &mut v);
    let prox = ProximitySet::new(preds, targets, vec![Provenance::Train; s], (0..s).collect()).unwrap();
    (prox, query)
}

pub fn random_dims<R: Rng>(rng: &mut R) -> (usize, usize, usize) {
    (rng.random_range(1..=20), rng.random_range(1..=4), rng.random_range(1..=3))
}

pub fn qualified_set(weights: &[f64]) -> Vec<usize> {
    weights.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, _)| i).collect()
}

/// Two-sided signed-rank p-value by enumerating all 2ⁿ sign patterns.
pub fn wilcoxon_enumerated(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    // Doubled midranks keep tied ranks integral.
    let ranks: Vec<u64> = abs
        .iter()
        .map(|x| {
            let below = abs.iter().filter(|y| *y < x).count() as u64;
            let equal = abs.iter().filter(|y| *y == x).count() as u64;
            2 * below + equal + 1
        })
        .collect();
    let total: u64 = ranks.iter().sum();
    let plus: u64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let observed = plus.min(total - plus);
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let w: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= observed {
            hits += 1;
        }
    }
    (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)
}
