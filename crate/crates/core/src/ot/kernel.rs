//! Tiled log-domain Sinkhorn sweep.
//!
//! One call to [`CostSource::sweep`] performs a full Gauss-Seidel iteration:
//! the row potential is recomputed from the current column potential, and the
//! column log-sum-exp is accumulated against the *new* row potential in the
//! same pass, so every cost entry is produced once per iteration. The cost
//! matrix is either held in memory or recomputed row-tile by row-tile.
//!
//! Row tiles are fixed by `tile_rows` and reduced in index order, so results
//! do not depend on the number of rayon workers.

use rayon::prelude::*;

use super::cost::{raw_cost, Metric};
use super::fastexp::Real;

/// Rows per inner block; sized so one block of costs stays cache resident.
const BLOCK_ROWS: usize = 64;

pub(crate) trait Gemm: Real {
    /// `c[rows x cols] = alpha * a[rows x k] * b[cols x k]^T` (all row-major).
    fn gemm_abt(rows: usize, k: usize, cols: usize, alpha: Self, a: &[Self], b: &[Self], c: &mut [Self]);
}

impl Gemm for f64 {
    fn gemm_abt(rows: usize, k: usize, cols: usize, alpha: f64, a: &[f64], b: &[f64], c: &mut [f64]) {
        debug_assert!(a.len() >= rows * k && b.len() >= cols * k && c.len() >= rows * cols);
        // SAFETY: slice lengths checked above; strides describe row-major layouts.
        unsafe {
            matrixmultiply::dgemm(
                rows, k, cols, alpha,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), 1, k as isize,
                0.0,
                c.as_mut_ptr(), cols as isize, 1,
            );
        }
    }
}

impl Gemm for f32 {
    fn gemm_abt(rows: usize, k: usize, cols: usize, alpha: f32, a: &[f32], b: &[f32], c: &mut [f32]) {
        debug_assert!(a.len() >= rows * k && b.len() >= cols * k && c.len() >= rows * cols);
        // SAFETY: as above.
        unsafe {
            matrixmultiply::sgemm(
                rows, k, cols, alpha,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), 1, k as isize,
                0.0,
                c.as_mut_ptr(), cols as isize, 1,
            );
        }
    }
}

/// Where cost entries come from.
pub(crate) enum CostSource<T> {
    Dense {
        cost: Vec<T>,
        cols: usize,
    },
    Streaming(StreamingCost<T>),
}

pub(crate) struct StreamingCost<T> {
    metric: Metric,
    dim: usize,
    scale: T,
    x: Vec<T>,
    y: Vec<T>,
    /// Squared norms for L2-type metrics; unused for L1.
    x_sq: Vec<T>,
    y_sq: Vec<T>,
    cols: usize,
}

impl<T: Gemm> CostSource<T> {
    /// Materializes the full matrix, computed in f64 and rounded to `T`.
    pub(crate) fn dense(x: &[f32], y: &[f32], dim: usize, metric: Metric, scale: f64) -> Self {
        let cols = y.len() / dim;
        let mut cost = vec![T::ZERO; x.len() / dim * cols];
        cost.par_chunks_mut(cols.max(1))
            .zip(x.par_chunks(dim))
            .for_each(|(row, xi)| {
                for (c, yj) in row.iter_mut().zip(y.chunks_exact(dim)) {
                    *c = T::from_f64(raw_cost(xi, yj, metric) * scale);
                }
            });
        CostSource::Dense { cost, cols }
    }

    pub(crate) fn streaming(x: &[f32], y: &[f32], dim: usize, metric: Metric, scale: f64) -> Self {
        let prep = |rows: &[f32]| -> (Vec<T>, Vec<T>) {
            let mut out = Vec::with_capacity(rows.len());
            let mut sq = Vec::with_capacity(rows.len() / dim);
            for r in rows.chunks_exact(dim) {
                let norm2: f64 = r.iter().map(|&v| v as f64 * v as f64).sum();
                if metric == Metric::Cosine {
                    let inv = if norm2 > 0.0 { 1.0 / norm2.sqrt() } else { 0.0 };
                    out.extend(r.iter().map(|&v| T::from_f64(v as f64 * inv)));
                    sq.push(T::from_f64(if norm2 > 0.0 { 1.0 } else { 0.0 }));
                } else {
                    out.extend(r.iter().map(|&v| T::from_f64(v as f64)));
                    sq.push(T::from_f64(norm2));
                }
            }
            (out, sq)
        };
        let (xs, x_sq) = prep(x);
        let (ys, y_sq) = prep(y);
        CostSource::Streaming(StreamingCost {
            metric,
            dim,
            scale: T::from_f64(scale),
            cols: y.len() / dim,
            x: xs,
            y: ys,
            x_sq,
            y_sq,
        })
    }

    pub(crate) fn cols(&self) -> usize {
        match self {
            CostSource::Dense { cols, .. } => *cols,
            CostSource::Streaming(s) => s.cols,
        }
    }

    /// Runs `f` on the cost rows `r0..r1`, computing them into `buf` if needed.
    fn with_rows<R>(&self, r0: usize, r1: usize, buf: &mut Vec<T>, f: impl FnOnce(&[T]) -> R) -> R {
        match self {
            CostSource::Dense { cost, cols } => f(&cost[r0 * cols..r1 * cols]),
            CostSource::Streaming(s) => {
                buf.resize((r1 - r0) * s.cols, T::ZERO);
                s.fill(r0, r1, buf);
                f(buf)
            }
        }
    }
}

impl<T: Gemm> StreamingCost<T> {
    fn fill(&self, r0: usize, r1: usize, out: &mut [T]) {
        let (d, m) = (self.dim, self.cols);
        let rows = r1 - r0;
        let xb = &self.x[r0 * d..r1 * d];
        match self.metric {
            Metric::L1 => {
                for (row, xi) in out.chunks_exact_mut(m).zip(xb.chunks_exact(d)) {
                    for (c, yj) in row.iter_mut().zip(self.y.chunks_exact(d)) {
                        let mut acc = T::ZERO;
                        for (&a, &b) in xi.iter().zip(yj) {
                            let t = a - b;
                            acc = acc + if t > T::ZERO { t } else { T::ZERO - t };
                        }
                        *c = acc * self.scale;
                    }
                }
            }
            Metric::SquaredL2 | Metric::L2 => {
                T::gemm_abt(rows, d, m, T::from_f64(-2.0), xb, &self.y, out);
                let sqrt = self.metric == Metric::L2;
                for (row, &xs) in out.chunks_exact_mut(m).zip(&self.x_sq[r0..r1]) {
                    for (c, &ys) in row.iter_mut().zip(&self.y_sq) {
                        let v = (*c + xs + ys).max(T::ZERO);
                        *c = if sqrt { T::from_f64(v.to_f64().sqrt()) } else { v } * self.scale;
                    }
                }
            }
            Metric::Cosine => {
                T::gemm_abt(rows, d, m, T::from_f64(-1.0), xb, &self.y, out);
                for c in out.iter_mut() {
                    let v = (*c + T::from_f64(1.0)).max(T::ZERO);
                    *c = v * self.scale;
                }
            }
        }
    }
}

/// Potentials and log-weights for one sweep at a fixed epsilon.
pub(crate) struct SweepInput<'a> {
    pub log_a: &'a [f64],
    pub log_b: &'a [f64],
    pub f: &'a [f64],
    pub g: &'a [f64],
    pub eps: f64,
    pub tile_rows: usize,
}

pub(crate) struct SweepOutput {
    /// Row potential recomputed from the input column potential.
    pub f: Vec<f64>,
    /// Column potential recomputed from the new row potential.
    pub g: Vec<f64>,
    /// L1 row-marginal error of the plan implied by the *input* potentials.
    pub row_error: f64,
    /// `<C, P>` for the plan implied by the input potentials.
    pub transport_cost: f64,
}

struct TileResult {
    f: Vec<f64>,
    col_max: Vec<f64>,
    col_sum: Vec<f64>,
    row_error: f64,
    transport_cost: f64,
}

impl<T: Gemm> CostSource<T> {
    pub(crate) fn sweep(&self, input: &SweepInput<'_>) -> SweepOutput {
        let n = input.log_a.len();
        let m = self.cols();
        let eps = input.eps;
        let tile = input.tile_rows.max(1);
        let col_shift: Vec<T> = input
            .log_b
            .iter()
            .zip(input.g)
            .map(|(&lb, &g)| T::from_f64(lb + g / eps))
            .collect();
        let inv_eps = T::from_f64(1.0 / eps);

        let tiles: Vec<TileResult> = (0..n.div_ceil(tile))
            .into_par_iter()
            .map(|t| {
                let r0 = t * tile;
                let r1 = (r0 + tile).min(n);
                let mut res = TileResult {
                    f: Vec::with_capacity(r1 - r0),
                    col_max: vec![f64::NEG_INFINITY; m],
                    col_sum: vec![0.0; m],
                    row_error: 0.0,
                    transport_cost: 0.0,
                };
                let mut buf = Vec::new();
                let mut scratch = BlockScratch::new(m);
                let mut b0 = r0;
                while b0 < r1 {
                    let b1 = (b0 + BLOCK_ROWS).min(r1);
                    self.with_rows(b0, b1, &mut buf, |cost| {
                        process_block(cost, m, b0, input, &col_shift, inv_eps, &mut scratch, &mut res)
                    });
                    b0 = b1;
                }
                res
            })
            .collect();

        let mut f = Vec::with_capacity(n);
        let mut col_max = vec![f64::NEG_INFINITY; m];
        let mut col_sum = vec![0.0f64; m];
        let mut row_error = 0.0;
        let mut transport_cost = 0.0;
        for t in tiles {
            f.extend_from_slice(&t.f);
            row_error += t.row_error;
            transport_cost += t.transport_cost;
            merge_lse(&mut col_max, &mut col_sum, &t.col_max, &t.col_sum);
        }
        let g = col_max
            .iter()
            .zip(&col_sum)
            .map(|(&mx, &s)| -eps * (mx + s.ln()))
            .collect();
        SweepOutput {
            f,
            g,
            row_error,
            transport_cost,
        }
    }
}

struct BlockScratch<T> {
    col_max: Vec<T>,
    col_sum: Vec<T>,
    row_shift: Vec<T>,
}

impl<T: Real> BlockScratch<T> {
    fn new(m: usize) -> Self {
        Self {
            col_max: vec![T::NEG_INFINITY; m],
            col_sum: vec![T::ZERO; m],
            row_shift: Vec::with_capacity(BLOCK_ROWS),
        }
    }
}

fn merge_lse(acc_max: &mut [f64], acc_sum: &mut [f64], max: &[f64], sum: &[f64]) {
    for j in 0..acc_max.len() {
        let (m1, m2) = (acc_max[j], max[j]);
        if m2 == f64::NEG_INFINITY {
            continue;
        }
        if m1 == f64::NEG_INFINITY {
            acc_max[j] = m2;
            acc_sum[j] = sum[j];
        } else if m2 > m1 {
            acc_sum[j] = acc_sum[j] * (m1 - m2).exp() + sum[j];
            acc_max[j] = m2;
        } else {
            acc_sum[j] += sum[j] * (m2 - m1).exp();
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn process_block<T: Real>(
    cost: &[T],
    m: usize,
    first_row: usize,
    input: &SweepInput<'_>,
    col_shift: &[T],
    inv_eps: T,
    scratch: &mut BlockScratch<T>,
    res: &mut TileResult,
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: feature presence checked at runtime.
            return unsafe {
                process_block_avx512(cost, m, first_row, input, col_shift, inv_eps, scratch, res)
            };
        }
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: feature presence checked at runtime.
            return unsafe {
                process_block_avx2(cost, m, first_row, input, col_shift, inv_eps, scratch, res)
            };
        }
    }
    process_block_generic(cost, m, first_row, input, col_shift, inv_eps, scratch, res)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512dq,avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn process_block_avx512<T: Real>(
    cost: &[T],
    m: usize,
    first_row: usize,
    input: &SweepInput<'_>,
    col_shift: &[T],
    inv_eps: T,
    scratch: &mut BlockScratch<T>,
    res: &mut TileResult,
) {
    process_block_generic(cost, m, first_row, input, col_shift, inv_eps, scratch, res)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn process_block_avx2<T: Real>(
    cost: &[T],
    m: usize,
    first_row: usize,
    input: &SweepInput<'_>,
    col_shift: &[T],
    inv_eps: T,
    scratch: &mut BlockScratch<T>,
    res: &mut TileResult,
) {
    process_block_generic(cost, m, first_row, input, col_shift, inv_eps, scratch, res)
}

/// Independent accumulators per lane so the reductions vectorize without
/// reassociation; the final fold order is fixed.
const LANES: usize = 16;

/// Returns `(max_j w_j, sum_j exp(w_j - max), sum_j exp(w_j - max) * c_j)` for
/// `w_j = shift_j - c_j * inv_eps`.
#[inline(always)]
fn row_lse_terms<T: Real>(row: &[T], shift: &[T], inv_eps: T) -> (f64, f64, f64) {
    let neg = T::ZERO - inv_eps;
    let chunks = row.len() / LANES * LANES;
    let mut mxs = [T::NEG_INFINITY; LANES];
    for (cs, ss) in row[..chunks].chunks_exact(LANES).zip(shift[..chunks].chunks_exact(LANES)) {
        for k in 0..LANES {
            mxs[k] = mxs[k].max(cs[k].mul_add(neg, ss[k]));
        }
    }
    let mut mx = mxs.iter().fold(T::NEG_INFINITY, |a, &b| a.max(b));
    for (&c, &s) in row[chunks..].iter().zip(&shift[chunks..]) {
        mx = mx.max(c.mul_add(neg, s));
    }
    let mut sums = [T::ZERO; LANES];
    let mut wsums = [T::ZERO; LANES];
    for (cs, ss) in row[..chunks].chunks_exact(LANES).zip(shift[..chunks].chunks_exact(LANES)) {
        for k in 0..LANES {
            let e = (cs[k].mul_add(neg, ss[k]) - mx).fast_exp();
            sums[k] = sums[k] + e;
            wsums[k] = e.mul_add(cs[k], wsums[k]);
        }
    }
    let mut sum = 0.0f64;
    let mut weighted = 0.0f64;
    for k in 0..LANES {
        sum += sums[k].to_f64();
        weighted += wsums[k].to_f64();
    }
    for (&c, &s) in row[chunks..].iter().zip(&shift[chunks..]) {
        let e = (c.mul_add(neg, s) - mx).fast_exp();
        sum += e.to_f64();
        weighted += (e * c).to_f64();
    }
    (mx.to_f64(), sum, weighted)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn process_block_generic<T: Real>(
    cost: &[T],
    m: usize,
    first_row: usize,
    input: &SweepInput<'_>,
    col_shift: &[T],
    inv_eps: T,
    scratch: &mut BlockScratch<T>,
    res: &mut TileResult,
) {
    let eps = input.eps;
    let rows = cost.len() / m;
    scratch.row_shift.clear();

    // Row update: f_i = -eps * LSE_j(log b_j + (g_j - C_ij) / eps).
    for (r, row) in cost.chunks_exact(m).enumerate() {
        let i = first_row + r;
        let (mx, sum, weighted) = row_lse_terms(row, col_shift, inv_eps);
        let lse = mx + sum.ln();
        let f_new = -eps * lse;
        let la = input.log_a[i];
        if la > f64::NEG_INFINITY {
            // Row mass of the plan built from (f_old, g), divided by a_i.
            let ratio = (input.f[i] / eps + lse).exp();
            res.row_error += la.exp() * (ratio - 1.0).abs();
            res.transport_cost += la.exp() * ratio * weighted / sum;
        }
        res.f.push(f_new);
        scratch.row_shift.push(T::from_f64(la + f_new / eps));
    }

    // Column partial LSE over this block: log a_i + (f_i - C_ij) / eps.
    let neg = T::ZERO - inv_eps;
    let cmax = &mut scratch.col_max;
    let csum = &mut scratch.col_sum;
    cmax.iter_mut().for_each(|v| *v = T::NEG_INFINITY);
    csum.iter_mut().for_each(|v| *v = T::ZERO);
    for (row, &rs) in cost.chunks_exact(m).zip(&scratch.row_shift) {
        for (mx, &c) in cmax.iter_mut().zip(row) {
            *mx = mx.max(c.mul_add(neg, rs));
        }
    }
    for (row, &rs) in cost.chunks_exact(m).zip(&scratch.row_shift) {
        if rs.to_f64() == f64::NEG_INFINITY {
            continue;
        }
        for ((s, &mx), &c) in csum.iter_mut().zip(cmax.iter()).zip(row) {
            *s = *s + (c.mul_add(neg, rs) - mx).fast_exp();
        }
    }
    debug_assert_eq!(rows, scratch.row_shift.len());
    for j in 0..m {
        let bm = cmax[j].to_f64();
        if bm == f64::NEG_INFINITY {
            continue;
        }
        let bs = csum[j].to_f64();
        let (am, as_) = (res.col_max[j], res.col_sum[j]);
        if am == f64::NEG_INFINITY {
            res.col_max[j] = bm;
            res.col_sum[j] = bs;
        } else if bm > am {
            res.col_sum[j] = as_ * super::fastexp::exp_f64(am - bm) + bs;
            res.col_max[j] = bm;
        } else {
            res.col_sum[j] = as_ + bs * super::fastexp::exp_f64(bm - am);
        }
    }
}
