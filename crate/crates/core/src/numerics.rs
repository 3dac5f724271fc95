//! Dense kernels, operation counters and the seeded generator shared by the
//! rest of the crate.
//!
//! Every product accumulates over columns in increasing index order so results
//! are bit-reproducible across runs and thread counts.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self · v` without bounds checks beyond slicing; caller guarantees shapes.
    #[inline]
    pub(crate) fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            *o = acc;
        }
    }

    /// `out += selfᵀ · v`, accumulating in increasing row order.
    #[inline]
    pub(crate) fn mul_transpose_acc(&self, v: &[f64], out: &mut [f64]) {
        for (r, &vr) in v.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vr;
            }
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Deterministic tally for one gradient call.
///
/// `mac_count` counts the multiply-accumulates spent on gradient propagation;
/// the forward pass is tallied separately in `forward_mac_count` since it is
/// identical for all engines. `peak_floats` is the high-water mark of floats
/// held as gradient state (Jacobian buffers, backpropagated vectors).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub mac_count: u64,
    pub forward_mac_count: u64,
    pub peak_floats: u64,
    live_floats: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add_macs(&mut self, n: usize) {
        self.mac_count += n as u64;
    }

    #[inline]
    pub fn add_forward_macs(&mut self, n: usize) {
        self.forward_mac_count += n as u64;
    }

    #[inline]
    pub fn alloc(&mut self, floats: usize) {
        self.live_floats += floats as u64;
        self.peak_floats = self.peak_floats.max(self.live_floats);
    }

    #[inline]
    pub fn release(&mut self, floats: usize) {
        self.live_floats = self.live_floats.saturating_sub(floats as u64);
    }

    pub fn live_floats(&self) -> u64 {
        self.live_floats
    }
}

/// Matrix-vector product; adds `rows·cols` to the counter.
pub fn matvec(m: &Matrix, v: &[f64], counter: &mut OpCounter) -> Result<Vec<f64>> {
    if m.cols != v.len() {
        return Err(Error::Dimension(format!(
            "matvec: {}x{} matrix with vector of length {}",
            m.rows,
            m.cols,
            v.len()
        )));
    }
    let mut out = vec![0.0; m.rows];
    m.mul_vec_into(v, &mut out);
    counter.add_macs(m.rows * m.cols);
    Ok(out)
}

/// Elementwise product `d ⊙ v`, i.e. a diagonal matrix applied to a vector.
pub fn diag_scale(d: &[f64], v: &[f64], counter: &mut OpCounter) -> Result<Vec<f64>> {
    if d.len() != v.len() {
        return Err(Error::Dimension(format!(
            "diag_scale: lengths {} and {}",
            d.len(),
            v.len()
        )));
    }
    counter.add_macs(d.len());
    Ok(d.iter().zip(v).map(|(a, b)| a * b).collect())
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Error-free transformation: `a + b = s + e` exactly.
#[inline]
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Seeded generator. ChaCha8 is counter-based, so a seed fixes the stream on
/// every platform.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child generator, e.g. one per grid cell or per seed case.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.inner.random())
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// `n` i.i.d. draws from U[lo, hi).
pub fn rand_uniform(rng: &mut Rng, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "rand_uniform needs lo < hi, got [{lo}, {hi})"
        )));
    }
    Ok((0..n)
        .map(|_| {
            // lo + (hi-lo)·u can round up to hi for u just below one
            let x = rng.uniform(lo, hi);
            if x < hi {
                x
            } else {
                lo
            }
        })
        .collect())
}

/// Least-squares solution of `x · β ≈ y` by Householder QR.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    /// Columns left out because they were numerically dependent on earlier
    /// ones; their coefficient is zero.
    pub dropped: Vec<usize>,
}

/// Householder QR without pivoting. A column whose remaining norm falls below
/// `1e-10` of its original norm is dropped (coefficient zero) instead of
/// producing a singular triangular factor.
pub fn least_squares(x: &Matrix, y: &[f64]) -> Result<LeastSquares> {
    let (n, k) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "least_squares: {n} rows but {} targets",
            y.len()
        )));
    }
    // column-major working copy
    let mut a: Vec<Vec<f64>> = (0..k)
        .map(|c| (0..n).map(|r| x[(r, c)]).collect())
        .collect();
    let mut rhs = y.to_vec();
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    let mut dropped = Vec::new();
    // reflectors applied so far: (pivot row, vector v, beta)
    let mut reflectors: Vec<(usize, Vec<f64>, f64)> = Vec::new();

    for c in 0..k {
        let orig_norm = a[c].iter().map(|v| v * v).sum::<f64>().sqrt();
        for (row, v, beta) in &reflectors {
            apply_reflector(&mut a[c], *row, v, *beta);
        }
        let row = kept.len();
        if row >= n {
            dropped.push(c);
            continue;
        }
        let tail_norm = a[c][row..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if orig_norm == 0.0 || tail_norm <= 1e-10 * orig_norm {
            dropped.push(c);
            continue;
        }
        let alpha = if a[c][row] > 0.0 {
            -tail_norm
        } else {
            tail_norm
        };
        let mut v: Vec<f64> = a[c][row..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        let beta = if vnorm2 == 0.0 { 0.0 } else { 2.0 / vnorm2 };
        apply_reflector(&mut a[c], row, &v, beta);
        apply_reflector(&mut rhs, row, &v, beta);
        reflectors.push((row, v, beta));
        kept.push(c);
    }

    // back substitution on the kept columns
    let r = kept.len();
    let mut beta = vec![0.0; r];
    for i in (0..r).rev() {
        let mut acc = rhs[i];
        for j in i + 1..r {
            acc -= a[kept[j]][i] * beta[j];
        }
        beta[i] = acc / a[kept[i]][i];
    }
    let mut coefficients = vec![0.0; k];
    for (i, &c) in kept.iter().enumerate() {
        coefficients[c] = beta[i];
    }
    if !all_finite(&coefficients) {
        return Err(Error::NonFinite {
            step: 0,
            what: "least-squares coefficient",
        });
    }
    Ok(LeastSquares {
        coefficients,
        dropped,
    })
}

fn apply_reflector(col: &mut [f64], row: usize, v: &[f64], beta: f64) {
    let tail = &mut col[row..];
    let dot: f64 = tail.iter().zip(v).map(|(a, b)| a * b).sum();
    let s = beta * dot;
    for (t, vi) in tail.iter_mut().zip(v) {
        *t -= s * vi;
    }
}
