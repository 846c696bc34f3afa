use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::space::{format_point, parse_point, Point};
use super::HpoError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: Point,
    pub objective: f64,
    /// The objective errored and `objective` holds the failure value.
    pub failed: bool,
}

/// Append-only record of evaluated trials.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialMemory {
    seed: u64,
    trials: Vec<Trial>,
}

impl TrialMemory {
    pub fn new(seed: u64) -> Self {
        Self { seed, trials: Vec::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn push(&mut self, params: Point, objective: f64, failed: bool) -> Result<&Trial, HpoError> {
        if !objective.is_finite() {
            return Err(HpoError::NonFiniteObjective(objective));
        }
        self.trials.push(Trial {
            index: self.trials.len(),
            params,
            objective,
            failed,
        });
        Ok(self.trials.last().expect("just pushed"))
    }

    /// Lowest objective; the earliest trial wins ties.
    pub fn best(&self) -> Option<&Trial> {
        self.trials
            .iter()
            .reduce(|best, t| if t.objective < best.objective { t } else { best })
    }

    /// Value recorded for a crashed trial: worst so far plus a tenth of the
    /// observed range, or 1 with no history.
    pub fn failure_value(&self) -> f64 {
        let (lo, hi) = self
            .trials
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t.objective), hi.max(t.objective)));
        if self.trials.is_empty() {
            1.0
        } else {
            hi + 0.1 * (hi - lo)
        }
    }

    /// CSV columns `index,params,objective`; params as `k=v;k=v`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), HpoError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["index", "params", "objective"])?;
        for t in &self.trials {
            w.write_record([t.index.to_string(), format_point(&t.params), t.objective.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv). Failure flags are not
    /// stored, so every imported trial counts as a regular observation.
    pub fn read_csv<R: Read>(reader: R, seed: u64) -> Result<Self, HpoError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut mem = Self::new(seed);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(HpoError::Format(format!("row {}: expected 3 fields", i + 1)));
            }
            let index: usize = rec[0]
                .parse()
                .map_err(|_| HpoError::Format(format!("row {}: bad index `{}`", i + 1, &rec[0])))?;
            if index != i {
                return Err(HpoError::Format(format!("row {}: trial index {index} out of order", i + 1)));
            }
            let objective: f64 = rec[2]
                .parse()
                .map_err(|_| HpoError::Format(format!("row {}: bad objective `{}`", i + 1, &rec[2])))?;
            mem.push(parse_point(&rec[1])?, objective, false)?;
        }
        Ok(mem)
    }
}
