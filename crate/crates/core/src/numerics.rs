//! Dense vector/matrix kernels and numerically stable scalar functions.
//!
//! Vectors are plain slices; [`Matrix`] is a row-major dense matrix used for
//! layer weights.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    values: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![F::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<F>) -> Result<Self> {
        contract!(rows > 0 && cols > 0, "matrix dimensions must be positive, got {rows}x{cols}");
        contract!(
            values.len() == rows * cols,
            "matrix {rows}x{cols} needs {} values, got {}",
            rows * cols,
            values.len()
        );
        Ok(Self { rows, cols, values })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[F] {
        &self.values
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.values
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[F]) -> Vec<F> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ · y`.
    pub fn matvec_t(&self, y: &[F]) -> Vec<F> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![F::zero(); self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == F::zero() {
                continue;
            }
            axpy(yr, self.row(r), &mut out);
        }
        out
    }

    /// `self += a · bᵀ`.
    pub fn add_outer(&mut self, a: &[F], b: &[F]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            if ar == F::zero() {
                continue;
            }
            let row = &mut self.values[r * self.cols..(r + 1) * self.cols];
            axpy(ar, b, row);
        }
    }
}

impl<F> std::ops::Index<(usize, usize)> for Matrix<F> {
    type Output = F;
    fn index(&self, (r, c): (usize, usize)) -> &F {
        &self.values[r * self.cols + c]
    }
}

impl<F> std::ops::IndexMut<(usize, usize)> for Matrix<F> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut F {
        &mut self.values[r * self.cols + c]
    }
}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    // Four independent partial sums let the loop vectorize.
    let mut acc = [F::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: F = ca.remainder().iter().zip(cb.remainder()).fold(F::zero(), |t, (&x, &y)| t + x * y);
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

#[inline]
pub fn norm<F: Scalar>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// `y += alpha · x`.
#[inline]
pub fn axpy<F: Scalar>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_similarity<F: Scalar>(a: &[F], b: &[F]) -> Result<F> {
    contract!(a.len() == b.len(), "length mismatch: {} vs {}", a.len(), b.len());
    contract!(!a.is_empty(), "cosine similarity of empty vectors");
    let (na, nb) = (norm(a), norm(b));
    if na == F::zero() || nb == F::zero() {
        return Err(Error::Domain("cosine similarity with a zero-norm vector".into()));
    }
    Ok(clamp_unit(dot(a, b) / (na * nb)))
}

#[inline]
pub(crate) fn clamp_unit<F: Scalar>(x: F) -> F {
    x.max(-F::one()).min(F::one())
}

/// `log Σ exp(xᵢ)` with max-shift.
pub fn log_sum_exp<F: Scalar>(xs: &[F]) -> Result<F> {
    contract!(!xs.is_empty(), "log_sum_exp of an empty vector");
    let m = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if m.is_infinite() {
        return Ok(m);
    }
    let s: F = xs.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

pub fn l2_normalize<F: Scalar>(v: &[F]) -> Result<Vec<F>> {
    let n = norm(v);
    if !(n > F::zero()) || !n.is_finite() {
        return Err(Error::Domain(format!("cannot normalize vector with norm {n}")));
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

pub fn softmax<F: Scalar>(logits: &[F]) -> Result<Vec<F>> {
    contract!(!logits.is_empty(), "softmax of an empty vector");
    let m = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = logits.iter().map(|&x| (x - m).exp()).collect();
    let s: F = out.iter().copied().sum();
    for v in &mut out {
        *v /= s;
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax: maps `dL/dp` to `dL/dlogits`.
pub fn softmax_vjp<F: Scalar>(p: &[F], d_p: &[F]) -> Vec<F> {
    let inner = dot(p, d_p);
    p.iter().zip(d_p).map(|(&pi, &gi)| pi * (gi - inner)).collect()
}

/// Backpropagates `d_unit` (gradient w.r.t. `v / ‖v‖`) to a gradient w.r.t. `v`.
pub fn normalize_vjp<F: Scalar>(unit: &[F], v_norm: F, d_unit: &[F]) -> Vec<F> {
    let proj = dot(unit, d_unit);
    unit.iter().zip(d_unit).map(|(&u, &g)| (g - u * proj) / v_norm).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: Scalar>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
