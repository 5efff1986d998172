//! Hyperparameter domains, grid construction and enumeration.
//!
//! A [`SearchSpace`] is an ordered list of named parameters, each with a
//! finite grid. Configurations are points of the cartesian product,
//! identified by their lexicographic index (last-declared parameter varies
//! fastest), so trial indices are stable across runs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("geometric grid requires lo > 0, got {0}")]
    NonPositiveLo(f64),
    #[error("geometric grid requires hi > lo, got lo={lo}, hi={hi}")]
    BadEndpoints { lo: f64, hi: f64 },
    #[error("grid requires at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("parameter `{0}` has an empty grid")]
    EmptyGrid(String),
    #[error("grid for `{name}` must be strictly increasing")]
    NotIncreasing { name: String },
    #[error("nominal grid for `{name}` has duplicate values")]
    DuplicateValues { name: String },
    #[error("integer grid for `{name}` contains a non-integer value")]
    NonInteger { name: String },
    #[error("real grid for `{name}` contains a non-finite value")]
    NonFinite { name: String },
    #[error("requested {n} samples from a space of size {size}")]
    SampleTooLarge { n: u64, size: u64 },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

/// One admissible value of a hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Nominal(String),
}

impl ParamValue {
    /// Numeric view; nominal values have none.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Real(v) => Some(*v),
            ParamValue::Nominal(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            ParamValue::Real(v) if v.fract() == 0.0 => Some(*v as i64),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Nominal(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Integer,
    Real,
    Nominal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperParam {
    pub name: String,
    pub kind: ParamKind,
    pub grid: Vec<ParamValue>,
}

impl HyperParam {
    pub fn new(
        name: impl Into<String>,
        kind: ParamKind,
        grid: Vec<ParamValue>,
    ) -> Result<Self, SpaceError> {
        let name = name.into();
        if grid.is_empty() {
            return Err(SpaceError::EmptyGrid(name));
        }
        match kind {
            ParamKind::Integer => {
                let mut prev: Option<i64> = None;
                for v in &grid {
                    let v = match v {
                        ParamValue::Int(v) => *v,
                        _ => return Err(SpaceError::NonInteger { name }),
                    };
                    if let Some(p) = prev {
                        if v <= p {
                            return Err(SpaceError::NotIncreasing { name });
                        }
                    }
                    prev = Some(v);
                }
            }
            ParamKind::Real => {
                let mut prev: Option<f64> = None;
                for v in &grid {
                    let v = v.as_f64().ok_or_else(|| SpaceError::NonFinite {
                        name: name.clone(),
                    })?;
                    if !v.is_finite() {
                        return Err(SpaceError::NonFinite { name });
                    }
                    if let Some(p) = prev {
                        if v <= p {
                            return Err(SpaceError::NotIncreasing { name });
                        }
                    }
                    prev = Some(v);
                }
            }
            ParamKind::Nominal => {
                let mut seen = HashSet::new();
                for v in &grid {
                    if !seen.insert(format!("{v}")) {
                        return Err(SpaceError::DuplicateValues { name });
                    }
                }
            }
        }
        Ok(Self { name, kind, grid })
    }

    /// Convenience constructor for integer grids.
    pub fn integer(name: impl Into<String>, grid: &[i64]) -> Result<Self, SpaceError> {
        Self::new(
            name,
            ParamKind::Integer,
            grid.iter().map(|&v| ParamValue::Int(v)).collect(),
        )
    }

    /// Convenience constructor for real grids.
    pub fn real(name: impl Into<String>, grid: &[f64]) -> Result<Self, SpaceError> {
        Self::new(
            name,
            ParamKind::Real,
            grid.iter().map(|&v| ParamValue::Real(v)).collect(),
        )
    }
}

/// m geometrically spaced values from `lo` to `hi`.
///
/// The ratio is computed from the exact (un-floored) endpoints; with
/// `integerize` each emitted value is floored and consecutive duplicates are
/// collapsed, so the result may be shorter than `m`.
pub fn geometric_grid(
    lo: f64,
    hi: f64,
    m: usize,
    integerize: bool,
) -> Result<Vec<ParamValue>, SpaceError> {
    if lo <= 0.0 {
        return Err(SpaceError::NonPositiveLo(lo));
    }
    if hi <= lo {
        return Err(SpaceError::BadEndpoints { lo, hi });
    }
    if m < 2 {
        return Err(SpaceError::TooFewPoints(m));
    }
    let log_ratio = (hi / lo).ln() / (m - 1) as f64;
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let v = lo * (k as f64 * log_ratio).exp();
        if integerize {
            let v = v.floor() as i64;
            if out.last() != Some(&ParamValue::Int(v)) {
                out.push(ParamValue::Int(v));
            }
        } else {
            out.push(ParamValue::Real(v));
        }
    }
    Ok(out)
}

/// m evenly spaced values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, m: usize) -> Result<Vec<ParamValue>, SpaceError> {
    if hi <= lo {
        return Err(SpaceError::BadEndpoints { lo, hi });
    }
    if m < 2 {
        return Err(SpaceError::TooFewPoints(m));
    }
    let step = (hi - lo) / (m - 1) as f64;
    Ok((0..m)
        .map(|k| ParamValue::Real(lo + k as f64 * step))
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpace {
    params: Vec<HyperParam>,
}

impl SearchSpace {
    pub fn new(params: Vec<HyperParam>) -> Result<Self, SpaceError> {
        let mut seen = HashSet::new();
        for p in &params {
            if p.grid.is_empty() {
                return Err(SpaceError::EmptyGrid(p.name.clone()));
            }
            if !seen.insert(p.name.clone()) {
                return Err(SpaceError::DuplicateName(p.name.clone()));
            }
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[HyperParam] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&HyperParam> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Product of grid cardinalities.
    pub fn size(&self) -> u64 {
        self.params.iter().map(|p| p.grid.len() as u64).product()
    }

    /// Decode a lexicographic index into a configuration.
    /// The last-declared parameter varies fastest.
    pub fn config_at(&self, index: u64) -> Configuration {
        let mut rem = index;
        let mut digits = vec![0usize; self.params.len()];
        for (i, p) in self.params.iter().enumerate().rev() {
            let len = p.grid.len() as u64;
            digits[i] = (rem % len) as usize;
            rem /= len;
        }
        let assignment = self
            .params
            .iter()
            .zip(&digits)
            .map(|(p, &d)| (p.name.clone(), p.grid[d].clone()))
            .collect();
        Configuration { index, assignment }
    }

    /// Lexicographic index of a full assignment, if every value is on-grid.
    pub fn index_of(&self, assignment: &BTreeMap<String, ParamValue>) -> Option<u64> {
        let mut index = 0u64;
        for p in &self.params {
            let v = assignment.get(&p.name)?;
            let d = p.grid.iter().position(|g| values_eq(g, v))?;
            index = index * p.grid.len() as u64 + d as u64;
        }
        Some(index)
    }

    /// All configurations in lexicographic index order.
    pub fn enumerate(&self) -> impl Iterator<Item = Configuration> + '_ {
        (0..self.size()).map(|i| self.config_at(i))
    }

    /// n distinct configurations, uniform without replacement.
    pub fn sample(&self, n: u64, seed: u64) -> Result<Vec<Configuration>, SpaceError> {
        let size = self.size();
        if n > size {
            return Err(SpaceError::SampleTooLarge { n, size });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<u64> = (0..size).collect();
        indices.shuffle(&mut rng);
        indices.truncate(n as usize);
        Ok(indices.into_iter().map(|i| self.config_at(i)).collect())
    }
}

/// Grid-value equality tolerant of the Int/Real representation split.
pub fn values_eq(a: &ParamValue, b: &ParamValue) -> bool {
    match (a, b) {
        (ParamValue::Nominal(x), ParamValue::Nominal(y)) => x == y,
        (ParamValue::Nominal(_), _) | (_, ParamValue::Nominal(_)) => false,
        _ => a.as_f64() == b.as_f64(),
    }
}

/// One point of the cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub index: u64,
    /// (name, value) pairs in the owning space's declared order.
    pub assignment: Vec<(String, ParamValue)>,
}

impl Configuration {
    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.assignment
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
    }

    pub fn get_f64(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(ParamValue::as_f64)
    }

    pub fn to_map(&self) -> BTreeMap<String, ParamValue> {
        self.assignment.iter().cloned().collect()
    }
}
