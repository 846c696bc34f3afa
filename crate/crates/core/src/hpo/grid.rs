use std::collections::BTreeMap;
use std::fmt::Display;

use serde::{Deserialize, Serialize};

use super::memory::TrialMemory;
use super::space::{Domain, ParamValue, Point, SearchSpace};
use super::{HpoError, Outcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Points per continuous dimension, by name.
    pub resolution: BTreeMap<String, usize>,
    /// Used for continuous dimensions missing from `resolution`.
    pub default_resolution: usize,
    /// Largest grid that will be evaluated.
    pub cap: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: BTreeMap::new(),
            default_resolution: 10,
            cap: 100_000,
        }
    }
}

impl GridConfig {
    pub fn with_resolution(mut self, name: &str, points: usize) -> Self {
        self.resolution.insert(name.to_string(), points);
        self
    }

    fn points_for(&self, name: &str) -> usize {
        self.resolution.get(name).copied().unwrap_or(self.default_resolution)
    }
}

/// Exact number of grid points, accounting for conditional dimensions.
pub fn grid_size(space: &SearchSpace, config: &GridConfig) -> usize {
    let len = |name: &str, d: &Domain| d.grid_len(config.points_for(name));
    let mut total: usize = 1;
    for d in space.dims().iter().filter(|d| d.condition.is_none()) {
        let factor = match &d.domain {
            Domain::Choice { options } => options
                .iter()
                .map(|o| {
                    space
                        .dims()
                        .iter()
                        .filter(|c| c.condition.as_ref().is_some_and(|c| c.parent == d.name && c.value == *o))
                        .fold(1usize, |acc, c| acc.saturating_mul(len(&c.name, &c.domain)))
                })
                .fold(0usize, usize::saturating_add),
            domain => len(&d.name, domain),
        };
        total = total.saturating_mul(factor);
    }
    total
}

/// All grid points in lexicographic order: the first dimension varies
/// slowest, values along each dimension ascend in declaration order.
pub fn grid_points(space: &SearchSpace, config: &GridConfig) -> Result<Vec<Point>, HpoError> {
    space.validate()?;
    let size = grid_size(space, config);
    if size > config.cap {
        return Err(HpoError::GridTooLarge { size, cap: config.cap });
    }
    let axes: Vec<Vec<ParamValue>> = space
        .dims()
        .iter()
        .map(|d| d.domain.grid(config.points_for(&d.name)))
        .collect();
    let mut out = Vec::with_capacity(size);
    let mut partial = Point::new();
    expand(space, &axes, 0, &mut partial, &mut out);
    Ok(out)
}

fn expand(space: &SearchSpace, axes: &[Vec<ParamValue>], i: usize, partial: &mut Point, out: &mut Vec<Point>) {
    let Some(dim) = space.dims().get(i) else {
        out.push(partial.clone());
        return;
    };
    if !dim.is_active(partial) {
        expand(space, axes, i + 1, partial, out);
        return;
    }
    for v in &axes[i] {
        partial.insert(dim.name.clone(), v.clone());
        expand(space, axes, i + 1, partial, out);
    }
    partial.remove(&dim.name);
}

/// Exhaustive search; the first-visited point wins ties.
pub fn grid_search<F, E>(mut objective: F, space: &SearchSpace, config: &GridConfig) -> Result<Outcome, HpoError>
where
    F: FnMut(&Point) -> Result<f64, E>,
    E: Display,
{
    let mut memory = TrialMemory::new(0);
    for point in grid_points(space, config)? {
        match objective(&point) {
            Ok(v) if v.is_finite() => memory.push(point, v, false)?,
            outcome => {
                let fail = memory.failure_value();
                if let Err(e) = outcome {
                    log::warn!("grid point {} failed ({e}); recording {fail}", memory.len());
                }
                memory.push(point, fail, true)?
            }
        };
    }
    Outcome::from_memory(memory)
}
