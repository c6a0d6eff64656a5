use std::collections::HashSet;

use crate::error::{Error, Result};

/// Tolerance on `|sum(weights) - 1|` accepted at construction.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// A weighted point cloud in embedding space.
///
/// Points are stored row-major as `f32`; weights are `f64` and sum to one.
/// Values are immutable once built, so a distribution can be shared freely
/// between concurrent solves.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    points: Vec<f32>,
    dim: usize,
    weights: Vec<f64>,
    ids: Vec<String>,
}

impl DiscreteDistribution {
    /// Validates and builds a distribution. With `weights == None` every point
    /// receives mass `1/n`.
    pub fn new(
        points: Vec<f32>,
        dim: usize,
        weights: Option<Vec<f64>>,
        ids: Vec<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if points.is_empty() {
            return Err(Error::invalid("distribution needs at least one point"));
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} coordinates do not form rows of dimension {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        if ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: ids.len(),
            });
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite coordinate in row {}",
                pos / dim
            )));
        }
        let weights = match weights {
            None => vec![1.0 / n as f64; n],
            Some(w) => {
                if w.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: w.len(),
                    });
                }
                if let Some(i) = w.iter().position(|&x| x < 0.0 || !x.is_finite()) {
                    return Err(Error::invalid(format!("weight {i} is negative or non-finite")));
                }
                let total: f64 = w.iter().sum();
                if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                    return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
                }
                w
            }
        };
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            points,
            dim,
            weights,
            ids,
        })
    }

    /// Uniform distribution with ids `"0".."n-1"`. Handy for synthetic data.
    pub fn uniform_indexed(points: Vec<f32>, dim: usize) -> Result<Self> {
        let n = points.len().checked_div(dim).unwrap_or(0);
        Self::new(points, dim, None, (0..n).map(|i| i.to_string()).collect())
    }

    /// Same support and ids, different weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.points.clone(), self.dim, Some(weights), self.ids.clone())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[f32] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f32] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|&w| (w - u).abs() <= WEIGHT_SUM_TOLERANCE)
    }

    /// Rows `indices` as a new uniform distribution.
    pub fn subset_uniform(&self, indices: &[usize]) -> Result<Self> {
        let mut points = Vec::with_capacity(indices.len() * self.dim);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            points.extend_from_slice(self.point(i));
            ids.push(self.ids[i].clone());
        }
        Self::new(points, self.dim, None, ids)
    }
}

/// Convenience wrapper matching the operation name used across the crate.
pub fn build_distribution(
    points: Vec<f32>,
    dim: usize,
    weights: Option<Vec<f64>>,
    ids: Vec<String>,
) -> Result<DiscreteDistribution> {
    DiscreteDistribution::new(points, dim, weights, ids)
}
