//! Symmetric banded matrices, Gram assembly, and banded Cholesky solves.
//!
//! Every posterior computation goes through the factored form of
//! B'B + Omega^{-1}; the inverse is never materialized.

use crate::basis::{self, KnotVector};
use crate::error::{Error, Result};

/// Symmetric matrix with entries zero whenever |i - j| > bandwidth.
///
/// Only the diagonal and the `bandwidth` superdiagonals are stored, packed
/// row-major: `data[i * (w + 1) + d]` is entry (i, i + d).
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSymMatrix {
    dim: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandedSymMatrix {
    pub fn zeros(dim: usize, bandwidth: usize) -> Self {
        assert!(dim > 0, "matrix dimension must be positive");
        let bandwidth = bandwidth.min(dim - 1);
        BandedSymMatrix {
            dim,
            bandwidth,
            data: vec![0.0; dim * (bandwidth + 1)],
        }
    }

    /// Diagonal matrix c * I.
    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut m = Self::zeros(dim, 0);
        for i in 0..dim {
            m.data[i] = c;
        }
        m
    }

    /// Diagonal matrix from the given entries.
    pub fn diagonal(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len(), 0);
        m.data.copy_from_slice(entries);
        m
    }

    /// Fills the stored band from a callback over (row, col), col >= row.
    pub fn from_fn(dim: usize, bandwidth: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim, bandwidth);
        for i in 0..dim {
            for j in i..(i + m.bandwidth + 1).min(dim) {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        if hi - lo > self.bandwidth {
            0.0
        } else {
            self.data[lo * (self.bandwidth + 1) + (hi - lo)]
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(hi - lo <= self.bandwidth);
        self.data[lo * (self.bandwidth + 1) + (hi - lo)] = v;
    }

    fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(hi - lo <= self.bandwidth);
        self.data[lo * (self.bandwidth + 1) + (hi - lo)] += v;
    }

    /// Entrywise sum; the result bandwidth is the max of the inputs'.
    pub fn add_banded(&self, other: &BandedSymMatrix) -> Result<BandedSymMatrix> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        let w = self.bandwidth.max(other.bandwidth);
        let mut out = BandedSymMatrix::zeros(self.dim, w);
        for i in 0..self.dim {
            for j in i..(i + w + 1).min(self.dim) {
                out.set(i, j, self.get(i, j) + other.get(i, j));
            }
        }
        Ok(out)
    }

    /// Adds c to every diagonal entry.
    pub fn add_scaled_identity(&self, c: f64) -> BandedSymMatrix {
        let mut out = self.clone();
        for i in 0..out.dim {
            out.data[i * (out.bandwidth + 1)] += c;
        }
        out
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let w = self.bandwidth;
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let mut acc = self.data[i * (w + 1)] * x[i];
            for d in 1..=w.min(self.dim - 1 - i) {
                acc += self.data[i * (w + 1) + d] * x[i + d];
            }
            for d in 1..=w.min(i) {
                acc += self.data[(i - d) * (w + 1) + d] * x[i - d];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

/// Gram matrix B'B of basis evaluations at the design points.
///
/// For order-q B-splines on [0, 1] the nonzero band is |u - v| <= q - 1.
pub fn gram(kv: &KnotVector, xs: &[f64]) -> Result<BandedSymMatrix> {
    if xs.is_empty() {
        return Err(Error::EmptyDesign);
    }
    let q = kv.order();
    let mut g = BandedSymMatrix::zeros(kv.dim(), q - 1);
    for &x in xs {
        let b = basis::eval(kv, x)?;
        for (a, &va) in b.values.iter().enumerate() {
            if va == 0.0 {
                continue;
            }
            for (c, &vc) in b.values.iter().enumerate().skip(a) {
                g.add_at(b.offset + a, b.offset + c, va * vc);
            }
        }
    }
    Ok(g)
}

/// B'y for a response vector y aligned with the design points.
pub fn gram_rhs(kv: &KnotVector, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::EmptyDesign);
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let mut z = vec![0.0; kv.dim()];
    for (&x, &y) in xs.iter().zip(ys) {
        let b = basis::eval(kv, x)?;
        for (a, &va) in b.values.iter().enumerate() {
            z[b.offset + a] += va * y;
        }
    }
    Ok(z)
}

/// Lower banded Cholesky factor L with L L' = A.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    dim: usize,
    bandwidth: usize,
    /// `lower[i * (w + 1) + d]` is L(i, i - d).
    lower: Vec<f64>,
}

/// Factors a symmetric positive definite banded matrix in O(J w^2).
pub fn cholesky(m: &BandedSymMatrix) -> Result<BandedCholesky> {
    let n = m.dim();
    let w = m.bandwidth();
    let stride = w + 1;
    let mut l = vec![0.0; n * stride];
    for i in 0..n {
        for j in i.saturating_sub(w)..=i {
            let mut acc = m.get(i, j);
            let kmin = i.saturating_sub(w).max(j.saturating_sub(w));
            for k in kmin..j {
                acc -= l[i * stride + (i - k)] * l[j * stride + (j - k)];
            }
            if i == j {
                if acc <= 0.0 || !acc.is_finite() {
                    return Err(Error::NotPositiveDefinite {
                        index: i,
                        pivot: acc,
                    });
                }
                l[i * stride] = acc.sqrt();
            } else {
                l[i * stride + (i - j)] = acc / l[j * stride];
            }
        }
    }
    Ok(BandedCholesky {
        dim: n,
        bandwidth: w,
        lower: l,
    })
}

impl BandedCholesky {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves (L L') x = rhs by forward then backward substitution.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: rhs.len(),
            });
        }
        let mut x = rhs.to_vec();
        self.forward_sub(&mut x);
        self.backward_sub(&mut x);
        Ok(x)
    }

    /// L y = rhs, in place.
    fn forward_sub(&self, x: &mut [f64]) {
        let w = self.bandwidth;
        let stride = w + 1;
        for i in 0..self.dim {
            let mut acc = x[i];
            for d in 1..=w.min(i) {
                acc -= self.lower[i * stride + d] * x[i - d];
            }
            x[i] = acc / self.lower[i * stride];
        }
    }

    /// L' y = rhs, in place.
    fn backward_sub(&self, x: &mut [f64]) {
        let w = self.bandwidth;
        let stride = w + 1;
        for i in (0..self.dim).rev() {
            let mut acc = x[i];
            for d in 1..=w.min(self.dim - 1 - i) {
                acc -= self.lower[(i + d) * stride + d] * x[i + d];
            }
            x[i] = acc / self.lower[i * stride];
        }
    }

    /// v' (L L')^{-1} v via one forward substitution: ||L^{-1} v||^2.
    pub fn quad_form(&self, v: &[f64]) -> Result<f64> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut x = v.to_vec();
        self.forward_sub(&mut x);
        Ok(x.iter().map(|t| t * t).sum())
    }

    /// Sparse variant of [`Self::quad_form`] for a basis slice: only the
    /// nonzero window of v is materialized into the forward substitution.
    pub fn quad_form_basis(&self, bv: &crate::basis::BasisVector) -> Result<f64> {
        if bv.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: bv.dim,
            });
        }
        let w = self.bandwidth;
        let stride = w + 1;
        // L^{-1} v is zero before bv.offset; run the substitution from there.
        let mut acc_sq = 0.0;
        let mut tail = vec![0.0; self.dim - bv.offset];
        for i in bv.offset..self.dim {
            let k = i - bv.offset;
            let mut acc = if k < bv.values.len() { bv.values[k] } else { 0.0 };
            for d in 1..=w.min(k) {
                acc -= self.lower[i * stride + d] * tail[k - d];
            }
            let y = acc / self.lower[i * stride];
            tail[k] = y;
            acc_sq += y * y;
        }
        Ok(acc_sq)
    }

    /// x with L' x = z; used to draw from N(0, (L L')^{-1}).
    pub fn solve_transposed_lower(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: z.len(),
            });
        }
        let mut x = z.to_vec();
        self.backward_sub(&mut x);
        Ok(x)
    }
}
