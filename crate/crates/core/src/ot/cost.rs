use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L1,
    L2,
    SquaredL2,
    /// `1 - cos(a, b)`; zero vectors are at distance 1 from everything but themselves.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    /// Divide the whole cost matrix by its (unweighted) mean entry.
    MeanScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CostSpec {
    pub metric: Metric,
    pub normalization: Normalization,
}

impl CostSpec {
    pub const fn new(metric: Metric) -> Self {
        Self {
            metric,
            normalization: Normalization::None,
        }
    }

    /// Reference configuration for Lipschitz-bound checks: plain L1.
    pub const fn l1() -> Self {
        Self::new(Metric::L1)
    }
}

impl Default for CostSpec {
    fn default() -> Self {
        Self::new(Metric::SquaredL2)
    }
}

/// Ground cost between two points. Normalization is a matrix-level property
/// and is not applied here.
pub fn cost(a: &[f32], b: &[f32], spec: CostSpec) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(raw_cost(a, b, spec.metric))
}

#[inline]
pub(crate) fn raw_cost(a: &[f32], b: &[f32], metric: Metric) -> f64 {
    match metric {
        Metric::L1 => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum(),
        Metric::SquaredL2 => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                let t = x as f64 - y as f64;
                t * t
            })
            .sum(),
        Metric::L2 => raw_cost(a, b, Metric::SquaredL2).sqrt(),
        Metric::Cosine => {
            if a == b {
                return 0.0;
            }
            let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
            for (&x, &y) in a.iter().zip(b) {
                let (x, y) = (x as f64, y as f64);
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            if na == 0.0 || nb == 0.0 {
                return 1.0;
            }
            (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0)
        }
    }
}

/// Unweighted mean of the cost matrix between row sets `x` (n x dim) and
/// `y` (m x dim). Exact below `max_pairs` entries, otherwise estimated on an
/// evenly strided grid of rows and columns (deterministic).
pub(crate) fn mean_cost(x: &[f32], y: &[f32], dim: usize, metric: Metric, max_pairs: usize) -> f64 {
    let n = x.len() / dim;
    let m = y.len() / dim;
    if metric == Metric::SquaredL2 {
        return mean_sq_l2(x, y, dim);
    }
    let (rows, cols) = if n.saturating_mul(m) <= max_pairs {
        (n, m)
    } else {
        let side = (max_pairs as f64).sqrt() as usize;
        (n.min(side.max(1)), m.min(side.max(1)))
    };
    let mut total = 0.0;
    for ri in 0..rows {
        let i = ri * n / rows;
        let xi = &x[i * dim..(i + 1) * dim];
        let mut row = 0.0;
        for ci in 0..cols {
            let j = ci * m / cols;
            row += raw_cost(xi, &y[j * dim..(j + 1) * dim], metric);
        }
        total += row;
    }
    total / (rows * cols) as f64
}

/// mean ||x_i - y_j||^2 = mean ||x||^2 + mean ||y||^2 - 2 <mean x, mean y>
fn mean_sq_l2(x: &[f32], y: &[f32], dim: usize) -> f64 {
    let stats = |rows: &[f32]| {
        let n = rows.len() / dim;
        let mut mean = vec![0.0f64; dim];
        let mut sq = 0.0f64;
        for r in rows.chunks_exact(dim) {
            for (acc, &v) in mean.iter_mut().zip(r) {
                *acc += v as f64;
                sq += v as f64 * v as f64;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        (mean, sq / n as f64)
    };
    let (mx, sx) = stats(x);
    let (my, sy) = stats(y);
    let cross: f64 = mx.iter().zip(&my).map(|(a, b)| a * b).sum();
    (sx + sy - 2.0 * cross).max(0.0)
}
