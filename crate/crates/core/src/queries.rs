//! Bounded datasets, replace-one adjacency and the supported query statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QueryError {
    #[error("invalid bounds: lower {lower}, upper {upper}")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("record {index} = {value} lies outside the declared bounds")]
    RecordOutOfBounds { index: usize, value: f64 },
    #[error("line {line}: cannot parse {text:?} as a decimal value")]
    Parse { line: usize, text: String },
    #[error("undefined query: {0}")]
    Undefined(&'static str),
    #[error("dataset size must be >= 1")]
    EmptyDomain,
    #[error("count {count} is below the declared floor {floor}")]
    BelowFloor { count: u64, floor: u64 },
}

/// Record bounds `[lower, upper]`, or `(lower, upper]` when `lower_open`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
    pub lower_open: bool,
}

impl Bounds {
    pub fn closed(lower: f64, upper: f64) -> Result<Self, QueryError> {
        Self::new(lower, upper, false)
    }

    pub fn lower_open(lower: f64, upper: f64) -> Result<Self, QueryError> {
        Self::new(lower, upper, true)
    }

    pub fn new(lower: f64, upper: f64, lower_open: bool) -> Result<Self, QueryError> {
        let ordered = if lower_open { lower < upper } else { lower <= upper };
        if !(lower.is_finite() && upper.is_finite() && ordered) {
            return Err(QueryError::InvalidBounds { lower, upper });
        }
        Ok(Self {
            lower,
            upper,
            lower_open,
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lower_open {
            x > self.lower
        } else {
            x >= self.lower
        };
        above && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Infimum of the record values. Not attained when the bound is open.
    fn floor(&self) -> f64 {
        self.lower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<f64>,
    bounds: Bounds,
}

impl Dataset {
    pub fn new(records: Vec<f64>, bounds: Bounds) -> Result<Self, QueryError> {
        if let Some((index, &value)) = records
            .iter()
            .enumerate()
            .find(|(_, &x)| !bounds.contains(x))
        {
            return Err(QueryError::RecordOutOfBounds { index, value });
        }
        Ok(Self { records, bounds })
    }

    /// Parse newline-delimited decimals. Blank lines and lines starting with
    /// `#` are skipped.
    pub fn parse(text: &str, bounds: Bounds) -> Result<Self, QueryError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let value: f64 = t.parse().map_err(|_| QueryError::Parse {
                line: i + 1,
                text: t.to_string(),
            })?;
            if !value.is_finite() {
                return Err(QueryError::Parse {
                    line: i + 1,
                    text: t.to_string(),
                });
            }
            records.push(value);
        }
        Self::new(records, bounds)
    }

    pub fn records(&self) -> &[f64] {
        &self.records
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QueryDescriptor {
    /// Number of records `>= threshold`. A declared `floor` promises the count
    /// never drops below it, which is what makes a relative bound finite.
    CountAbove { threshold: f64, floor: Option<u64> },
    BoundedSum,
    BoundedMean,
}

impl QueryDescriptor {
    pub fn count_above(threshold: f64) -> Self {
        QueryDescriptor::CountAbove {
            threshold,
            floor: None,
        }
    }

    pub fn evaluate(&self, d: &Dataset) -> Result<f64, QueryError> {
        match *self {
            QueryDescriptor::CountAbove { threshold, floor } => {
                let count = d.records.iter().filter(|&&x| x >= threshold).count() as u64;
                if let Some(floor) = floor {
                    if count < floor {
                        return Err(QueryError::BelowFloor { count, floor });
                    }
                }
                Ok(count as f64)
            }
            QueryDescriptor::BoundedSum => Ok(d.records.iter().sum()),
            QueryDescriptor::BoundedMean => {
                if d.is_empty() {
                    return Err(QueryError::Undefined("mean of an empty dataset"));
                }
                Ok(d.records.iter().sum::<f64>() / d.len() as f64)
            }
        }
    }

    /// Global sensitivity under replace-one adjacency on datasets of size `n`.
    pub fn sensitivity(&self, bounds: Bounds, n: usize) -> Result<f64, QueryError> {
        if n == 0 {
            return Err(QueryError::EmptyDomain);
        }
        Ok(match self {
            QueryDescriptor::CountAbove { .. } => 1.0,
            QueryDescriptor::BoundedSum => bounds.width(),
            QueryDescriptor::BoundedMean => bounds.width() / n as f64,
        })
    }

    /// Tight bound `K` on `|Q(d) - Q(d')| / min(Q(d), Q(d'))` over adjacent
    /// pairs, or `+inf` when the query can get arbitrarily close to zero.
    ///
    /// For sum and mean the worst pair is all records at the lower bound
    /// against the same dataset with one record moved to the upper bound.
    pub fn relative_bound(&self, bounds: Bounds, n: usize) -> Result<f64, QueryError> {
        if n == 0 {
            return Err(QueryError::EmptyDomain);
        }
        Ok(match *self {
            QueryDescriptor::CountAbove { floor, .. } => match floor {
                Some(f) if f > 0 => 1.0 / f as f64,
                _ => f64::INFINITY,
            },
            QueryDescriptor::BoundedSum | QueryDescriptor::BoundedMean => {
                let l = bounds.floor();
                if l <= 0.0 {
                    f64::INFINITY
                } else {
                    (bounds.upper - l) / (n as f64 * l)
                }
            }
        })
    }
}

/// Neighbouring relation on datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AdjacencyRelation {
    /// Same size, at most one coordinate differs.
    #[default]
    ReplaceOne,
}

impl AdjacencyRelation {
    pub fn is_adjacent(&self, a: &Dataset, b: &Dataset) -> bool {
        match self {
            AdjacencyRelation::ReplaceOne => {
                a.len() == b.len()
                    && a
                        .records
                        .iter()
                        .zip(&b.records)
                        .filter(|(x, y)| x != y)
                        .count()
                        <= 1
            }
        }
    }

    /// Random neighbour of `d`: one uniformly chosen record replaced by a
    /// uniform value inside the bounds.
    pub fn random_neighbor(&self, d: &Dataset, rng: &mut RngState) -> Dataset {
        let mut records = d.records.clone();
        if !records.is_empty() {
            let i = (rng.next_u64() % records.len() as u64) as usize;
            let b = d.bounds;
            // next_open01 is never 0, so the open lower end is respected
            records[i] = b.lower + rng.next_open01() * b.width();
        }
        Dataset {
            records,
            bounds: d.bounds,
        }
    }
}
