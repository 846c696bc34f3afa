use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

/// Largest number of nonzero differences handled by the exact null distribution.
pub const EXACT_LIMIT: usize = 25;
/// Fewest paired observations accepted.
pub const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W−)`.
    pub statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    /// Nonzero differences that entered the test.
    pub n: usize,
    pub exact: bool,
}

/// Midranks of `values` (1-based; ties share the mean of their positions).
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank test on paired samples, zero differences dropped.
///
/// Up to [`EXACT_LIMIT`] nonzero differences the null distribution of `W+` is
/// built exactly (ties included, by counting over doubled midranks); above
/// that a tie-corrected normal approximation is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            actual: a.len(),
            predicted: b.len(),
        });
    }
    if a.len() < MIN_PAIRS {
        return Err(EvalError::TooFewPairs { needed: MIN_PAIRS, got: a.len() });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(EvalError::AllDifferencesZero);
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let n = diffs.len();
    let total = (n * (n + 1)) as f64 / 2.0;
    let statistic = w_plus.min(total - w_plus);

    if n <= EXACT_LIMIT {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let cdf = exact_lower_tail(&doubled, (2.0 * statistic).round() as usize);
        Ok(WilcoxonResult {
            statistic,
            p_value: (2.0 * cdf).min(1.0),
            n,
            exact: true,
        })
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = tie_sizes(&abs).iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
        let z = (statistic - mean) / var.sqrt();
        let p = 2.0 * Normal::standard().cdf(z);
        Ok(WilcoxonResult {
            statistic,
            p_value: p.min(1.0),
            n,
            exact: false,
        })
    }
}

/// `P(W+ ≤ threshold)` under the null, with `W+` and `threshold` in doubled
/// rank units so tied midranks stay integral.
fn exact_lower_tail(doubled_ranks: &[usize], threshold: usize) -> f64 {
    let max: usize = doubled_ranks.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled_ranks {
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let hits: f64 = counts[..=threshold.min(max)].iter().sum();
    hits / 2f64.powi(doubled_ranks.len() as i32)
}

fn tie_sizes(sorted_or_not: &[f64]) -> Vec<usize> {
    let mut v = sorted_or_not.to_vec();
    v.sort_by(f64::total_cmp);
    v.chunk_by(|a, b| a == b).map(<[f64]>::len).filter(|&t| t > 1).collect()
}
