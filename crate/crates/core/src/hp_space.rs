//! Hyperparameter search spaces, sampling, and Δ-ball neighbourhoods.
//!
//! Continuous hyperparameters are stored in *sampling scale*: the natural-log of the
//! value when `log_scale` is set, the raw value otherwise. Discrete hyperparameters are
//! stored as an index into their ordered value list. All perturbation and distance
//! arithmetic happens in sampling scale.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("hyperparameter `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("duplicate hyperparameter name `{0}`")]
    DuplicateName(String),
    #[error("vector does not conform to its spec list: {0}")]
    Mismatch(String),
}

fn default_delta_fraction() -> f64 {
    0.1
}

/// One entry of a discrete value list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiscreteValue {
    Number(f64),
    Label(String),
}

impl fmt::Display for DiscreteValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscreteValue::Number(x) => write!(f, "{x}"),
            DiscreteValue::Label(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SpecKind {
    Continuous {
        low: f64,
        high: f64,
        #[serde(default)]
        log_scale: bool,
    },
    Discrete { values: Vec<DiscreteValue> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparamSpec {
    pub name: String,
    pub kind: SpecKind,
    /// Δ-ball radius as a fraction of the range (sampling scale).
    #[serde(default = "default_delta_fraction")]
    pub delta_fraction: f64,
}

/// A single stored coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HpValue {
    Index(usize),
    Real(f64),
}

impl HyperparamSpec {
    pub fn uniform(name: &str, low: f64, high: f64) -> Self {
        HyperparamSpec {
            name: name.to_string(),
            kind: SpecKind::Continuous {
                low,
                high,
                log_scale: false,
            },
            delta_fraction: default_delta_fraction(),
        }
    }

    pub fn log_uniform(name: &str, low: f64, high: f64) -> Self {
        HyperparamSpec {
            name: name.to_string(),
            kind: SpecKind::Continuous {
                low,
                high,
                log_scale: true,
            },
            delta_fraction: default_delta_fraction(),
        }
    }

    pub fn numbers(name: &str, values: &[f64]) -> Self {
        HyperparamSpec {
            name: name.to_string(),
            kind: SpecKind::Discrete {
                values: values.iter().copied().map(DiscreteValue::Number).collect(),
            },
            delta_fraction: default_delta_fraction(),
        }
    }

    pub fn labels(name: &str, values: &[&str]) -> Self {
        HyperparamSpec {
            name: name.to_string(),
            kind: SpecKind::Discrete {
                values: values
                    .iter()
                    .map(|s| DiscreteValue::Label(s.to_string()))
                    .collect(),
            },
            delta_fraction: default_delta_fraction(),
        }
    }

    pub fn with_delta_fraction(mut self, delta_fraction: f64) -> Self {
        self.delta_fraction = delta_fraction;
        self
    }

    pub fn validate(&self) -> Result<(), SpaceError> {
        let invalid = |reason: &str| {
            Err(SpaceError::InvalidSpec {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if !(self.delta_fraction > 0.0 && self.delta_fraction <= 1.0) {
            return invalid("delta_fraction must lie in (0, 1]");
        }
        match &self.kind {
            SpecKind::Continuous {
                low,
                high,
                log_scale,
            } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return invalid("continuous bounds require finite low < high");
                }
                if *log_scale && *low <= 0.0 {
                    return invalid("log-scale bounds must be positive");
                }
            }
            SpecKind::Discrete { values } => {
                if values.len() < 2 {
                    return invalid("discrete spec needs at least two values");
                }
                if values
                    .iter()
                    .any(|v| matches!(v, DiscreteValue::Number(x) if !x.is_finite()))
                {
                    return invalid("discrete values must be finite");
                }
            }
        }
        Ok(())
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, SpecKind::Continuous { .. })
    }

    /// Bounds in sampling scale. For discrete specs this is `(0, n)` over indices.
    pub fn bounds(&self) -> (f64, f64) {
        match &self.kind {
            SpecKind::Continuous {
                low,
                high,
                log_scale: true,
            } => (low.ln(), high.ln()),
            SpecKind::Continuous { low, high, .. } => (*low, *high),
            SpecKind::Discrete { values } => (0.0, (values.len() - 1) as f64),
        }
    }

    /// Largest index for discrete specs (`n` in a list of `n + 1` values).
    pub fn max_index(&self) -> usize {
        match &self.kind {
            SpecKind::Discrete { values } => values.len() - 1,
            SpecKind::Continuous { .. } => 0,
        }
    }

    /// Maps a unit draw `u ∈ [0, 1)` onto the spec's distribution.
    pub fn from_unit(&self, u: f64) -> HpValue {
        match &self.kind {
            SpecKind::Continuous { .. } => {
                let (lo, hi) = self.bounds();
                HpValue::Real((lo + u * (hi - lo)).clamp(lo, hi))
            }
            SpecKind::Discrete { values } => {
                let n = values.len();
                HpValue::Index(((u * n as f64) as usize).min(n - 1))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> HpValue {
        self.from_unit(rng.random::<f64>())
    }

    pub fn conforms(&self, value: &HpValue) -> bool {
        match (&self.kind, value) {
            (SpecKind::Continuous { .. }, HpValue::Real(x)) => {
                let (lo, hi) = self.bounds();
                x.is_finite() && *x >= lo && *x <= hi
            }
            (SpecKind::Discrete { values }, HpValue::Index(i)) => *i < values.len(),
            _ => false,
        }
    }

    /// Converts a stored entry to its natural value. Labels map to their index.
    pub fn natural(&self, value: &HpValue) -> f64 {
        match (&self.kind, value) {
            (SpecKind::Continuous { log_scale, .. }, HpValue::Real(x)) => {
                if *log_scale {
                    x.exp()
                } else {
                    *x
                }
            }
            (SpecKind::Discrete { values }, HpValue::Index(i)) => match &values[*i] {
                DiscreteValue::Number(x) => *x,
                DiscreteValue::Label(_) => *i as f64,
            },
            (_, HpValue::Real(x)) => *x,
            (_, HpValue::Index(i)) => *i as f64,
        }
    }

    /// Human-readable natural value, used for reports.
    pub fn display(&self, value: &HpValue) -> String {
        match (&self.kind, value) {
            (SpecKind::Discrete { values }, HpValue::Index(i)) if *i < values.len() => {
                values[*i].to_string()
            }
            _ => format!("{}", self.natural(value)),
        }
    }

    /// Per-coordinate difference normalised into `[0, 1]`.
    pub fn normalized_gap(&self, a: &HpValue, b: &HpValue) -> f64 {
        match (a, b) {
            (HpValue::Real(x), HpValue::Real(y)) => {
                let (lo, hi) = self.bounds();
                (x - y).abs() / (hi - lo)
            }
            (HpValue::Index(i), HpValue::Index(j)) => {
                i.abs_diff(*j) as f64 / self.max_index() as f64
            }
            _ => f64::NAN,
        }
    }

    /// Δ-ball radius in sampling scale (continuous specs).
    pub fn ball_radius(&self) -> f64 {
        let (lo, hi) = self.bounds();
        self.delta_fraction * (hi - lo)
    }

    /// Δ-ball radius in index steps (discrete specs): `⌊delta_fraction · n⌉`.
    pub fn ball_steps(&self) -> usize {
        (self.delta_fraction * self.max_index() as f64).round() as usize
    }

    /// Draws a value uniformly from the Δ-ball neighbourhood of `center`.
    pub fn sample_near<R: Rng + ?Sized>(&self, center: &HpValue, rng: &mut R) -> HpValue {
        match center {
            HpValue::Real(c) => {
                let (lo, hi) = self.bounds();
                let r = self.ball_radius();
                HpValue::Real(uniform_in(rng, (c - r).max(lo), (c + r).min(hi)))
            }
            HpValue::Index(c) => {
                let steps = self.ball_steps();
                let first = c.saturating_sub(steps);
                let last = (c + steps).min(self.max_index());
                HpValue::Index(rng.random_range(first..=last))
            }
        }
    }

    /// Projects `value` onto the Δ-ball of `center` (coordinate clip).
    pub fn clip_to_ball(&self, center: &HpValue, value: &HpValue) -> HpValue {
        match (center, value) {
            (HpValue::Real(c), HpValue::Real(v)) => {
                let (lo, hi) = self.bounds();
                let r = self.ball_radius();
                HpValue::Real(v.clamp((c - r).max(lo), (c + r).min(hi)))
            }
            (HpValue::Index(c), HpValue::Index(v)) => {
                let steps = self.ball_steps();
                let first = c.saturating_sub(steps);
                let last = (c + steps).min(self.max_index());
                HpValue::Index((*v).clamp(first, last))
            }
            _ => *value,
        }
    }

    pub fn in_ball(&self, center: &HpValue, value: &HpValue) -> bool {
        match (center, value) {
            (HpValue::Real(c), HpValue::Real(v)) => {
                (v - c).abs() <= self.ball_radius() * (1.0 + 1e-12) + 1e-15
            }
            (HpValue::Index(c), HpValue::Index(v)) => c.abs_diff(*v) <= self.ball_steps(),
            _ => false,
        }
    }
}

/// Uniform draw from `[lo, hi]`; returns `lo` for a degenerate interval.
pub(crate) fn uniform_in<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    (lo + rng.random::<f64>() * (hi - lo)).clamp(lo, hi)
}

/// Which spec list a vector conforms to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceRole {
    Server,
    Client,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HPVector {
    pub role: SpaceRole,
    pub values: Vec<HpValue>,
}

impl HPVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self, specs: &[HyperparamSpec]) -> Result<(), SpaceError> {
        if self.values.len() != specs.len() {
            return Err(SpaceError::Mismatch(format!(
                "expected {} entries, found {}",
                specs.len(),
                self.values.len()
            )));
        }
        for (spec, v) in specs.iter().zip(&self.values) {
            if !spec.conforms(v) {
                return Err(SpaceError::Mismatch(format!(
                    "entry {v:?} out of range for `{}`",
                    spec.name
                )));
            }
        }
        Ok(())
    }

    /// Natural value of the named coordinate.
    pub fn get(&self, specs: &[HyperparamSpec], name: &str) -> Option<f64> {
        let idx = specs.iter().position(|s| s.name == name)?;
        Some(specs[idx].natural(&self.values[idx]))
    }
}

/// The server (α) and client (β) spec lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub server: Vec<HyperparamSpec>,
    pub client: Vec<HyperparamSpec>,
}

impl Default for SearchSpace {
    /// Desk-scale defaults: α ∈ R³ (server lr, scheduler, momentum), β ∈ R⁷
    /// (client lr, scheduler, momentum, weight decay, epochs, batch size, dropout).
    fn default() -> Self {
        let schedulers = ["constant", "step", "cosine"];
        SearchSpace {
            server: vec![
                HyperparamSpec::log_uniform("learning_rate", 0.1, 2.0),
                HyperparamSpec::labels("scheduler", &schedulers),
                HyperparamSpec::uniform("momentum", 0.0, 0.9),
            ],
            client: vec![
                HyperparamSpec::log_uniform("learning_rate", 1e-3, 1.0),
                HyperparamSpec::labels("scheduler", &schedulers),
                HyperparamSpec::uniform("momentum", 0.0, 0.9),
                HyperparamSpec::log_uniform("weight_decay", 1e-5, 1e-2),
                HyperparamSpec::numbers("local_epochs", &[1.0, 2.0, 3.0, 4.0, 5.0]),
                HyperparamSpec::numbers("batch_size", &[8.0, 16.0, 32.0, 64.0]),
                HyperparamSpec::uniform("dropout", 0.0, 0.5),
            ],
        }
    }
}

impl SearchSpace {
    pub fn new(
        server: Vec<HyperparamSpec>,
        client: Vec<HyperparamSpec>,
    ) -> Result<Self, SpaceError> {
        let space = SearchSpace { server, client };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<(), SpaceError> {
        for list in [&self.server, &self.client] {
            let mut seen = HashSet::new();
            for spec in list.iter() {
                spec.validate()?;
                if !seen.insert(spec.name.as_str()) {
                    return Err(SpaceError::DuplicateName(spec.name.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn specs(&self, role: SpaceRole) -> &[HyperparamSpec] {
        match role {
            SpaceRole::Server => &self.server,
            SpaceRole::Client => &self.client,
        }
    }
}

/// Draws every coordinate independently from its spec's distribution.
pub fn sample<R: Rng + ?Sized>(specs: &[HyperparamSpec], role: SpaceRole, rng: &mut R) -> HPVector {
    HPVector {
        role,
        values: specs.iter().map(|s| s.sample(rng)).collect(),
    }
}

/// Euclidean norm of per-coordinate normalised differences.
pub fn distance(specs: &[HyperparamSpec], a: &HPVector, b: &HPVector) -> Result<f64, SpaceError> {
    if a.role != b.role {
        return Err(SpaceError::Mismatch("vectors have different roles".into()));
    }
    a.validate(specs)?;
    b.validate(specs)?;
    let sq: f64 = specs
        .iter()
        .zip(a.values.iter().zip(&b.values))
        .map(|(s, (x, y))| s.normalized_gap(x, y).powi(2))
        .sum();
    Ok(sq.sqrt())
}

/// Samples a vector coordinate-wise inside the Δ-ball of `center`.
pub fn sample_in_ball<R: Rng + ?Sized>(
    specs: &[HyperparamSpec],
    center: &HPVector,
    rng: &mut R,
) -> HPVector {
    HPVector {
        role: center.role,
        values: specs
            .iter()
            .zip(&center.values)
            .map(|(s, c)| s.sample_near(c, rng))
            .collect(),
    }
}

/// Clips every coordinate of `v` into the Δ-ball of `center`.
pub fn clip_to_ball(specs: &[HyperparamSpec], center: &HPVector, v: &HPVector) -> HPVector {
    HPVector {
        role: v.role,
        values: specs
            .iter()
            .zip(center.values.iter().zip(&v.values))
            .map(|(s, (c, x))| s.clip_to_ball(c, x))
            .collect(),
    }
}

pub fn in_ball(specs: &[HyperparamSpec], center: &HPVector, v: &HPVector) -> bool {
    specs
        .iter()
        .zip(center.values.iter().zip(&v.values))
        .all(|(s, (c, x))| s.in_ball(c, x))
}
