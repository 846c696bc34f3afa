use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::HpoError;

/// A single hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Num(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Num(x) => Some(*x),
            ParamValue::Text(_) => None,
        }
    }

    /// Parses a number when possible, otherwise keeps the text.
    pub fn parse(s: &str) -> Self {
        s.parse::<f64>().map_or_else(|_| ParamValue::Text(s.to_string()), ParamValue::Num)
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Num(x) => write!(f, "{x}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for ParamValue {
    fn from(x: f64) -> Self {
        ParamValue::Num(x)
    }
}

impl From<&str> for ParamValue {
    fn from(s: &str) -> Self {
        ParamValue::Text(s.to_string())
    }
}

/// An assignment of values to the active dimensions of a space.
pub type Point = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    Choice { options: Vec<ParamValue> },
    /// `lo, lo + step, …` up to `hi`.
    Quantized { lo: f64, hi: f64, step: f64 },
}

impl Domain {
    pub fn validate(&self, name: &str) -> Result<(), HpoError> {
        let bad = |why: &str| Err(HpoError::InvalidSpace(format!("dimension `{name}`: {why}")));
        match self {
            Domain::Uniform { lo, hi } | Domain::LogUniform { lo, hi } | Domain::Quantized { lo, hi, .. } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad("bounds must be finite with lo < hi");
                }
                if matches!(self, Domain::LogUniform { .. }) && *lo <= 0.0 {
                    return bad("log-uniform bounds must be positive");
                }
                if let Domain::Quantized { step, .. } = self {
                    if !(step.is_finite() && *step > 0.0) {
                        return bad("step must be positive");
                    }
                }
            }
            Domain::Choice { options } => {
                if options.is_empty() {
                    return bad("choice list is empty");
                }
                for o in options {
                    match o {
                        ParamValue::Text(s) if s.contains([';', '=']) || s.is_empty() => {
                            return bad("choice labels must be non-empty and free of `;` and `=`")
                        }
                        ParamValue::Num(x) if !x.is_finite() => return bad("choice values must be finite"),
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    /// Bounds of the continuous coordinate the Parzen estimator works in
    /// (the log for log-uniform dimensions).
    pub(crate) fn internal_bounds(&self) -> Option<(f64, f64)> {
        match self {
            Domain::Uniform { lo, hi } => Some((*lo, *hi)),
            Domain::Quantized { lo, .. } => Some((*lo, self.quantized_max())),
            Domain::LogUniform { lo, hi } => Some((lo.ln(), hi.ln())),
            Domain::Choice { .. } => None,
        }
    }

    pub(crate) fn to_internal(&self, v: &ParamValue) -> Option<f64> {
        let x = v.as_f64()?;
        match self {
            Domain::LogUniform { .. } => Some(x.ln()),
            Domain::Choice { .. } => None,
            _ => Some(x),
        }
    }

    /// Maps an internal coordinate back to a value, snapping quantized dims.
    pub(crate) fn decode(&self, z: f64) -> ParamValue {
        match self {
            Domain::LogUniform { lo, hi } => ParamValue::Num(z.exp().clamp(*lo, *hi)),
            Domain::Quantized { lo, step, .. } => {
                let k = ((z - lo) / step).round().max(0.0);
                ParamValue::Num((lo + k * step).min(self.quantized_max()))
            }
            Domain::Uniform { lo, hi } => ParamValue::Num(z.clamp(*lo, *hi)),
            Domain::Choice { .. } => unreachable!("choice dimensions have no internal coordinate"),
        }
    }

    fn quantized_max(&self) -> f64 {
        match self {
            Domain::Quantized { lo, hi, step } => lo + ((hi - lo) / step + 1e-9).floor() * step,
            _ => f64::NAN,
        }
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamValue {
        match self {
            Domain::Choice { options } => options[rng.random_range(0..options.len())].clone(),
            _ => {
                let (a, b) = self.internal_bounds().expect("continuous");
                self.decode(rng.random_range(a..=b))
            }
        }
    }

    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (Domain::Choice { options }, v) => options.contains(v),
            (Domain::Uniform { lo, hi } | Domain::LogUniform { lo, hi }, ParamValue::Num(x)) => lo <= x && x <= hi,
            (Domain::Quantized { lo, step, .. }, ParamValue::Num(x)) => {
                let k = (x - lo) / step;
                *x >= *lo && *x <= self.quantized_max() + 1e-9 * step && (k - k.round()).abs() < 1e-6
            }
            _ => false,
        }
    }

    /// Grid values along this dimension at the given resolution.
    pub fn grid(&self, resolution: usize) -> Vec<ParamValue> {
        let r = resolution.max(1);
        let spaced = |a: f64, b: f64| -> Vec<f64> {
            if r == 1 {
                return vec![(a + b) / 2.0];
            }
            (0..r)
                .map(|i| match i {
                    0 => a,
                    i if i == r - 1 => b,
                    i => a + (b - a) * i as f64 / (r - 1) as f64,
                })
                .collect()
        };
        match self {
            Domain::Choice { options } => options.clone(),
            Domain::Uniform { lo, hi } => spaced(*lo, *hi).into_iter().map(ParamValue::Num).collect(),
            Domain::LogUniform { lo, hi } => {
                let v = spaced(lo.ln(), hi.ln());
                let n = v.len();
                v.into_iter()
                    .enumerate()
                    .map(|(i, z)| {
                        ParamValue::Num(match i {
                            _ if n == 1 => z.exp(),
                            0 => *lo,
                            i if i == n - 1 => *hi,
                            _ => z.exp(),
                        })
                    })
                    .collect()
            }
            Domain::Quantized { lo, step, .. } => {
                let n = ((self.quantized_max() - lo) / step).round() as usize + 1;
                (0..n).map(|k| ParamValue::Num(lo + k as f64 * step)).collect()
            }
        }
    }

    /// Number of grid values at `resolution` without building them.
    pub fn grid_len(&self, resolution: usize) -> usize {
        match self {
            Domain::Choice { options } => options.len(),
            Domain::Quantized { lo, step, .. } => ((self.quantized_max() - lo) / step).round() as usize + 1,
            _ => resolution.max(1),
        }
    }
}

/// Activates a dimension only when a choice dimension takes a given value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub parent: String,
    pub value: ParamValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
}

impl Dimension {
    pub fn is_active(&self, partial: &Point) -> bool {
        match &self.condition {
            None => true,
            Some(c) => partial.get(&c.parent) == Some(&c.value),
        }
    }
}

/// Ordered named dimensions. Conditional dimensions must follow their parent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_dimensions(dims: Vec<Dimension>) -> Result<Self, HpoError> {
        let space = Self { dims };
        space.validate()?;
        Ok(space)
    }

    pub fn add(mut self, name: &str, domain: Domain) -> Self {
        self.dims.push(Dimension {
            name: name.to_string(),
            domain,
            condition: None,
        });
        self
    }

    pub fn uniform(self, name: &str, lo: f64, hi: f64) -> Self {
        self.add(name, Domain::Uniform { lo, hi })
    }

    pub fn log_uniform(self, name: &str, lo: f64, hi: f64) -> Self {
        self.add(name, Domain::LogUniform { lo, hi })
    }

    pub fn choice(self, name: &str, options: Vec<ParamValue>) -> Self {
        self.add(name, Domain::Choice { options })
    }

    pub fn quantized(self, name: &str, lo: f64, hi: f64, step: f64) -> Self {
        self.add(name, Domain::Quantized { lo, hi, step })
    }

    /// Makes the most recently added dimension conditional.
    pub fn when(mut self, parent: &str, value: impl Into<ParamValue>) -> Self {
        if let Some(d) = self.dims.last_mut() {
            d.condition = Some(Condition {
                parent: parent.to_string(),
                value: value.into(),
            });
        }
        self
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn validate(&self) -> Result<(), HpoError> {
        for (i, d) in self.dims.iter().enumerate() {
            if d.name.is_empty() || d.name.contains([';', '=']) {
                return Err(HpoError::InvalidSpace(format!("bad dimension name `{}`", d.name)));
            }
            if self.dims[..i].iter().any(|e| e.name == d.name) {
                return Err(HpoError::InvalidSpace(format!("duplicate dimension `{}`", d.name)));
            }
            d.domain.validate(&d.name)?;
            if let Some(c) = &d.condition {
                let parent = self.dims[..i].iter().find(|e| e.name == c.parent);
                match parent {
                    Some(Dimension {
                        domain: Domain::Choice { options },
                        condition: None,
                        ..
                    }) if options.contains(&c.value) => {}
                    _ => {
                        return Err(HpoError::InvalidSpace(format!(
                            "`{}` must be conditioned on an earlier unconditional choice containing `{}`",
                            d.name, c.value
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let mut p = Point::new();
        for d in &self.dims {
            if d.is_active(&p) {
                let v = d.domain.sample_prior(rng);
                p.insert(d.name.clone(), v);
            }
        }
        p
    }

    /// Whether `point` assigns exactly the active dimensions, each in bounds.
    pub fn contains(&self, point: &Point) -> bool {
        let mut seen = 0;
        for d in &self.dims {
            let active = d.is_active(point);
            match point.get(&d.name) {
                Some(v) if active => {
                    if !d.domain.contains(v) {
                        return false;
                    }
                    seen += 1;
                }
                Some(_) => return false,
                None if active => return false,
                None => {}
            }
        }
        seen == point.len()
    }

    /// JSON object of the point, with whole numbers on quantized dimensions
    /// written as integers so they deserialize into integer parameters.
    pub fn to_json(&self, point: &Point) -> Value {
        let mut map = serde_json::Map::new();
        for (k, v) in point {
            let quantized = self
                .dims
                .iter()
                .any(|d| d.name == *k && matches!(d.domain, Domain::Quantized { .. }));
            let j = match v {
                ParamValue::Num(x) if quantized && x.fract() == 0.0 && x.abs() < 9.0e15 => Value::from(*x as i64),
                ParamValue::Num(x) => Value::from(*x),
                ParamValue::Text(s) => Value::from(s.clone()),
            };
            map.insert(k.clone(), j);
        }
        Value::Object(map)
    }
}

/// `k=v;k=v` in key order.
pub fn format_point(point: &Point) -> String {
    point.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

pub fn parse_point(s: &str) -> Result<Point, HpoError> {
    let mut p = Point::new();
    for part in s.split(';').filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| HpoError::Format(format!("expected key=value, got `{part}`")))?;
        p.insert(k.to_string(), ParamValue::parse(v));
    }
    Ok(p)
}
