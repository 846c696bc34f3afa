use std::f64::consts::PI;
use std::fmt::Display;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use super::memory::{Trial, TrialMemory};
use super::space::{Domain, ParamValue, Point, SearchSpace};
use super::{HpoError, Outcome};

/// Kernel bandwidth rule for continuous dimensions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// `max(range / |set|, 1e-3)`.
    #[default]
    RangeOverCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TpeConfig {
    /// Fraction of trials treated as good.
    pub gamma: f64,
    pub n_candidates: usize,
    /// Prior samples drawn before the density model takes over.
    pub n_startup: usize,
    pub bandwidth: Bandwidth,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            n_candidates: 24,
            n_startup: 10,
            bandwidth: Bandwidth::RangeOverCount,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<(), HpoError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(HpoError::InvalidConfig(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.n_candidates == 0 || self.n_startup == 0 {
            return Err(HpoError::InvalidConfig("n_candidates and n_startup must be at least 1".into()));
        }
        Ok(())
    }
}

const MIN_BANDWIDTH: f64 = 1e-3;
const MAX_REJECTIONS: usize = 100;

/// Truncated Gaussian mixture over `[lo, hi]`, optionally mixed with the
/// uniform prior.
struct Parzen {
    lo: f64,
    hi: f64,
    centers: Vec<f64>,
    /// Per-center truncation mass, so each kernel integrates to one.
    masses: Vec<f64>,
    bandwidth: f64,
    prior_weight: f64,
}

impl Parzen {
    fn fit(lo: f64, hi: f64, centers: Vec<f64>) -> Self {
        let range = hi - lo;
        let bandwidth = (range / centers.len().max(1) as f64).max(MIN_BANDWIDTH);
        let prior_weight = match centers.len() {
            0 => 1.0,
            1 => 0.5,
            _ => 0.0,
        };
        let n = StdNormal::standard();
        let masses = centers
            .iter()
            .map(|&c| (n.cdf((hi - c) / bandwidth) - n.cdf((lo - c) / bandwidth)).max(1e-300))
            .collect();
        Self {
            lo,
            hi,
            centers,
            masses,
            bandwidth,
            prior_weight,
        }
    }

    fn density(&self, z: f64) -> f64 {
        let mut d = self.prior_weight / (self.hi - self.lo);
        if !self.centers.is_empty() {
            let norm = (1.0 - self.prior_weight) / self.centers.len() as f64;
            let k: f64 = self
                .centers
                .iter()
                .zip(&self.masses)
                .map(|(&c, &m)| {
                    let u = (z - c) / self.bandwidth;
                    (-0.5 * u * u).exp() / ((2.0 * PI).sqrt() * self.bandwidth * m)
                })
                .sum();
            d += norm * k;
        }
        d
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.centers.is_empty() || rng.random::<f64>() < self.prior_weight {
            return rng.random_range(self.lo..=self.hi);
        }
        let c = self.centers[rng.random_range(0..self.centers.len())];
        let kernel = Normal::new(c, self.bandwidth).expect("positive bandwidth");
        for _ in 0..MAX_REJECTIONS {
            let z = kernel.sample(rng);
            if (self.lo..=self.hi).contains(&z) {
                return z;
            }
        }
        c.clamp(self.lo, self.hi)
    }
}

/// Add-one smoothed frequencies over a choice list.
struct Categorical {
    weights: Vec<f64>,
}

impl Categorical {
    fn fit(options: &[ParamValue], observed: &[&ParamValue]) -> Self {
        let total = (observed.len() + options.len()) as f64;
        let weights = options
            .iter()
            .map(|o| (observed.iter().filter(|v| **v == o).count() + 1) as f64 / total)
            .collect();
        Self { weights }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut u = rng.random::<f64>();
        for (i, w) in self.weights.iter().enumerate() {
            if u < *w {
                return i;
            }
            u -= w;
        }
        self.weights.len() - 1
    }
}

enum Estimator {
    Continuous(Parzen),
    Categorical(Categorical),
}

impl Estimator {
    fn fit(domain: &Domain, observed: &[&ParamValue]) -> Self {
        match domain {
            Domain::Choice { options } => Estimator::Categorical(Categorical::fit(options, observed)),
            _ => {
                let (lo, hi) = domain.internal_bounds().expect("continuous");
                let centers = observed.iter().filter_map(|v| domain.to_internal(v)).collect();
                Estimator::Continuous(Parzen::fit(lo, hi, centers))
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, domain: &Domain, rng: &mut R) -> ParamValue {
        match (self, domain) {
            (Estimator::Categorical(c), Domain::Choice { options }) => options[c.sample(rng)].clone(),
            (Estimator::Continuous(p), _) => domain.decode(p.sample(rng)),
            _ => unreachable!("estimator built for another domain"),
        }
    }

    fn log_density(&self, domain: &Domain, v: &ParamValue) -> f64 {
        match (self, domain) {
            (Estimator::Categorical(c), Domain::Choice { options }) => options
                .iter()
                .position(|o| o == v)
                .map_or(f64::NEG_INFINITY, |i| c.weights[i].ln()),
            (Estimator::Continuous(p), _) => domain
                .to_internal(v)
                .map_or(f64::NEG_INFINITY, |z| p.density(z).max(1e-300).ln()),
            _ => unreachable!("estimator built for another domain"),
        }
    }
}

/// Splits trials into the best `ceil(γ·n)` (at least one) and the rest.
fn split_trials(trials: &[Trial], gamma: f64) -> (Vec<&Trial>, Vec<&Trial>) {
    let mut sorted: Vec<&Trial> = trials.iter().collect();
    sorted.sort_by(|a, b| a.objective.total_cmp(&b.objective).then(a.index.cmp(&b.index)));
    let n_good = ((gamma * trials.len() as f64).ceil() as usize).clamp(1, trials.len());
    let bad = sorted.split_off(n_good);
    (sorted, bad)
}

/// Next point to evaluate.
///
/// Below `n_startup` trials this is a prior draw. Afterwards each dimension
/// gets a Parzen density `l` from the good trials and `g` from the rest;
/// `n_candidates` points are drawn from `l` and the one maximizing
/// `Σ log l − log g` wins. Under the TPE factorization this ratio orders
/// candidates the same way as expected improvement over the γ-quantile.
pub fn suggest<R: Rng + ?Sized>(memory: &TrialMemory, space: &SearchSpace, config: &TpeConfig, rng: &mut R) -> Point {
    if memory.len() < config.n_startup {
        return space.sample_prior(rng);
    }
    let (good, bad) = split_trials(memory.trials(), config.gamma);
    let observed = |set: &[&Trial], name: &str, domain: &Domain| -> Vec<ParamValue> {
        set.iter()
            .filter_map(|t| t.params.get(name))
            .filter(|v| domain.contains(v))
            .cloned()
            .collect()
    };
    let models: Vec<(Estimator, Estimator)> = space
        .dims()
        .iter()
        .map(|d| {
            let g_obs = observed(&good, &d.name, &d.domain);
            let b_obs = observed(&bad, &d.name, &d.domain);
            (
                Estimator::fit(&d.domain, &g_obs.iter().collect::<Vec<_>>()),
                Estimator::fit(&d.domain, &b_obs.iter().collect::<Vec<_>>()),
            )
        })
        .collect();

    let mut best: Option<(f64, Point)> = None;
    for _ in 0..config.n_candidates {
        let mut point = Point::new();
        let mut score = 0.0;
        for (d, (l, g)) in space.dims().iter().zip(&models) {
            if !d.is_active(&point) {
                continue;
            }
            let v = l.sample(&d.domain, rng);
            score += l.log_density(&d.domain, &v) - g.log_density(&d.domain, &v);
            point.insert(d.name.clone(), v);
        }
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, point));
        }
    }
    best.expect("at least one candidate").1
}

fn record<F, E>(memory: &mut TrialMemory, point: Point, objective: &mut F) -> Result<(), HpoError>
where
    F: FnMut(&Point) -> Result<f64, E>,
    E: Display,
{
    match objective(&point) {
        Ok(v) if v.is_finite() => {
            memory.push(point, v, false)?;
        }
        outcome => {
            let why = match outcome {
                Ok(v) => format!("non-finite objective {v}"),
                Err(e) => e.to_string(),
            };
            let fail = memory.failure_value();
            log::warn!("trial {} failed ({why}); recording {fail}", memory.len());
            memory.push(point, fail, true)?;
        }
    }
    Ok(())
}

fn check_budget(budget: usize, space: &SearchSpace) -> Result<(), HpoError> {
    if budget == 0 {
        return Err(HpoError::InvalidConfig("budget must be at least 1".into()));
    }
    space.validate()
}

/// Sequential TPE minimization. Failed or non-finite evaluations are
/// recorded with [`TrialMemory::failure_value`] and the loop continues.
pub fn optimize<F, E>(mut objective: F, space: &SearchSpace, budget: usize, config: &TpeConfig, seed: u64) -> Result<Outcome, HpoError>
where
    F: FnMut(&Point) -> Result<f64, E>,
    E: Display,
{
    check_budget(budget, space)?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut memory = TrialMemory::new(seed);
    for _ in 0..budget {
        let point = suggest(&memory, space, config, &mut rng);
        record(&mut memory, point, &mut objective)?;
    }
    Outcome::from_memory(memory)
}

/// Prior sampling only; the baseline TPE is measured against.
pub fn random_search<F, E>(mut objective: F, space: &SearchSpace, budget: usize, seed: u64) -> Result<Outcome, HpoError>
where
    F: FnMut(&Point) -> Result<f64, E>,
    E: Display,
{
    check_budget(budget, space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut memory = TrialMemory::new(seed);
    for _ in 0..budget {
        let point = space.sample_prior(&mut rng);
        record(&mut memory, point, &mut objective)?;
    }
    Outcome::from_memory(memory)
}
