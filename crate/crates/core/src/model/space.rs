use serde::{Deserialize, Serialize};

use super::transform::Transform;
use crate::error::{Error, Result};

/// Support of a single coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    Unbounded,
    Interval { lower: f64, upper: f64 },
}

impl Bound {
    /// Open-interval membership; the endpoints are excluded.
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Bound::Unbounded => x.is_finite(),
            Bound::Interval { lower, upper } => x > lower && x < upper,
        }
    }

    /// Transform mapping this support onto the real line.
    pub fn transform(&self) -> Transform {
        match *self {
            Bound::Unbounded => Transform::Identity,
            Bound::Interval { lower, upper } => Transform::LogitAffine { lower, upper },
        }
    }

    fn limits(&self) -> (f64, f64) {
        match *self {
            Bound::Unbounded => (f64::NEG_INFINITY, f64::INFINITY),
            Bound::Interval { lower, upper } => (lower, upper),
        }
    }
}

/// Which level of the hierarchy a coordinate belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Local,
    Hyper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub bound: Bound,
    pub block: Block,
}

/// Ordered, named parameter space. Order is part of the contract: chain
/// files, flows and constraint maps all index coordinates positionally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParamEntry>", into = "Vec<ParamEntry>")]
pub struct ParameterSpace {
    entries: Vec<ParamEntry>,
}

impl ParameterSpace {
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::InvalidSpace(format!("duplicate name `{}`", e.name)));
            }
            if let Bound::Interval { lower, upper } = e.bound {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    return Err(Error::InvalidSpace(format!(
                        "`{}` has invalid bounds ({lower}, {upper})",
                        e.name
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn builder() -> SpaceBuilder {
        SpaceBuilder::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn block_indices(&self, block: Block) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.block == block)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_unbounded(&self) -> bool {
        self.entries.iter().all(|e| e.bound == Bound::Unbounded)
    }

    /// Subspace made of the given coordinates, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.entries[i].clone()).collect())
    }

    /// Fails with `BoundViolation` on the first coordinate outside its support.
    pub fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: theta.len(),
            });
        }
        for (e, &x) in self.entries.iter().zip(theta) {
            if !e.bound.contains(x) {
                let (lower, upper) = e.bound.limits();
                return Err(Error::BoundViolation {
                    name: e.name.clone(),
                    value: x,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.check(theta).is_ok()
    }

    pub fn transforms(&self) -> Vec<Transform> {
        self.entries.iter().map(|e| e.bound.transform()).collect()
    }
}

impl TryFrom<Vec<ParamEntry>> for ParameterSpace {
    type Error = Error;
    fn try_from(entries: Vec<ParamEntry>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<ParameterSpace> for Vec<ParamEntry> {
    fn from(s: ParameterSpace) -> Self {
        s.entries
    }
}

#[derive(Debug, Default)]
pub struct SpaceBuilder {
    entries: Vec<ParamEntry>,
}

impl SpaceBuilder {
    pub fn unbounded(mut self, name: impl Into<String>, block: Block) -> Self {
        self.entries.push(ParamEntry {
            name: name.into(),
            bound: Bound::Unbounded,
            block,
        });
        self
    }

    pub fn interval(mut self, name: impl Into<String>, lower: f64, upper: f64, block: Block) -> Self {
        self.entries.push(ParamEntry {
            name: name.into(),
            bound: Bound::Interval { lower, upper },
            block,
        });
        self
    }

    pub fn build(self) -> Result<ParameterSpace> {
        ParameterSpace::new(self.entries)
    }
}
