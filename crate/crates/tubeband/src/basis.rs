//! B-spline basis construction, evaluation, and differentiation on [0, 1].
//!
//! Uses the clamped convention: boundary knots repeated `q` times at 0 and 1,
//! so a basis with `N` interior knots has dimension `J = N + q`.

use crate::error::{Error, Result};

/// Knot placement scheme for [`make_knots`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnotScheme {
    /// Interior knots at k/(N+1), k = 1..N.
    Uniform,
}

/// Extended B-spline knot sequence of order `q` on [0, 1].
///
/// The stored sequence has length `J + q` with the boundary knots repeated
/// `q` times; `knots[j]` is t_{j+1} in 1-based spline notation.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    order: usize,
    knots: Vec<f64>,
}

/// Nonzero slice of the basis (or basis-derivative) vector at a point.
///
/// At any x at most `q` consecutive entries of the length-`J` vector are
/// nonzero; `values[k]` is entry `offset + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisVector {
    pub dim: usize,
    pub offset: usize,
    pub values: Vec<f64>,
}

impl BasisVector {
    /// Dense copy, mostly for tests and oracles.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        out[self.offset..self.offset + self.values.len()].copy_from_slice(&self.values);
        out
    }

    /// Dot product with a dense coefficient vector of length `dim`.
    pub fn dot(&self, coeffs: &[f64]) -> f64 {
        debug_assert_eq!(coeffs.len(), self.dim);
        self.values
            .iter()
            .zip(&coeffs[self.offset..])
            .map(|(v, c)| v * c)
            .sum()
    }
}

/// The J x (J-1) matrix mapping order-(q-1) basis values to the derivative
/// of the order-q basis. Column k carries -s_k at row k and +s_k at row k+1.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeMatrix {
    pub rows: usize,
    /// s_k = (q-1) / (t_{k+q} - t_{k+1}) in 1-based knot indexing.
    pub column_scales: Vec<f64>,
}

impl DerivativeMatrix {
    pub fn cols(&self) -> usize {
        self.rows - 1
    }

    pub fn entry(&self, i: usize, k: usize) -> f64 {
        if i == k {
            -self.column_scales[k]
        } else if i == k + 1 {
            self.column_scales[k]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| (0..self.cols()).map(|k| self.entry(i, k)).collect())
            .collect()
    }

    /// W * v for a dense v of length J-1.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols());
        let mut out = vec![0.0; self.rows];
        for (k, &s) in self.column_scales.iter().enumerate() {
            out[k] -= s * v[k];
            out[k + 1] += s * v[k];
        }
        out
    }
}

/// Builds a clamped uniform knot vector with basis dimension `n_basis`.
pub fn make_knots(n_basis: usize, q: usize, scheme: KnotScheme) -> Result<KnotVector> {
    if q < 1 {
        return Err(Error::UnsupportedOrder(q));
    }
    if n_basis < q {
        return Err(Error::InvalidDimension { j: n_basis, q });
    }
    let n_interior = n_basis - q;
    let mut knots = Vec::with_capacity(n_basis + q);
    knots.extend(std::iter::repeat(0.0).take(q));
    match scheme {
        KnotScheme::Uniform => {
            for k in 1..=n_interior {
                knots.push(k as f64 / (n_interior + 1) as f64);
            }
        }
    }
    knots.extend(std::iter::repeat(1.0).take(q));
    Ok(KnotVector { order: q, knots })
}

impl KnotVector {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Basis dimension J = N + q.
    pub fn dim(&self) -> usize {
        self.knots.len() - self.order
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.order..self.knots.len() - self.order]
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Breakpoints 0 = t_0 < ... < t_{N+1} = 1 delimiting the knot intervals.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.interior_knots().len() + 2);
        out.push(0.0);
        out.extend_from_slice(self.interior_knots());
        out.push(1.0);
        out
    }

    /// Basis of order q-1 on the same interior knots.
    fn lower_order(&self) -> KnotVector {
        debug_assert!(self.order >= 2);
        KnotVector {
            order: self.order - 1,
            knots: self.knots[1..self.knots.len() - 1].to_vec(),
        }
    }

    /// Index mu into `knots` with knots[mu] <= x < knots[mu+1] and the
    /// interval nondegenerate. x = 1 maps to the last interval (left limit).
    fn find_interval(&self, x: f64) -> usize {
        let q = self.order;
        let last = self.knots.len() - q - 1; // index of the last knot < 1 side
        if x >= 1.0 {
            return last;
        }
        // interior knots are sorted; binary search over knots[q-1..=last]
        let mut lo = q - 1;
        let mut hi = last;
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }
}

/// Evaluates the B-spline basis at x by the Cox-de Boor recursion.
///
/// Returns the `q` (at most) nonzero values; they are in [0, 1] and sum to 1.
pub fn eval(kv: &KnotVector, x: f64) -> Result<BasisVector> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::DomainError(x));
    }
    let q = kv.order;
    let t = &kv.knots;
    let mu = kv.find_interval(x);

    // de Boor's algorithm: build up orders 1..q on the interval [t_mu, t_mu+1).
    // vals[i] holds B_{mu-k+1+i, k+1}(x) after pass k.
    let mut vals = vec![0.0; q];
    vals[0] = 1.0;
    for k in 1..q {
        let mut saved = 0.0;
        for i in 0..k {
            let left = t[mu - k + 1 + i];
            let right = t[mu + 1 + i];
            let term = vals[i] / (right - left);
            vals[i] = saved + (right - x) * term;
            saved = (x - left) * term;
        }
        vals[k] = saved;
    }

    Ok(BasisVector {
        dim: kv.dim(),
        offset: mu + 1 - q,
        values: vals,
    })
}

/// Derivative matrix W of Eq.-(28) shape: dimension J x (J-1), each column k
/// scaled by (q-1)/(t_{k+q} - t_{k+1}).
pub fn derivative_matrix(kv: &KnotVector) -> Result<DerivativeMatrix> {
    let q = kv.order;
    if q < 2 {
        return Err(Error::UnsupportedOrder(q));
    }
    let j = kv.dim();
    let t = &kv.knots;
    let scales = (0..j - 1)
        .map(|k| (q - 1) as f64 / (t[k + q] - t[k + 1]))
        .collect();
    Ok(DerivativeMatrix {
        rows: j,
        column_scales: scales,
    })
}

/// First derivative of the basis at x: W * b_{J-1, q-1}(x), returned in the
/// same sparse shape as [`eval`]. Entries sum to 0. For q = 1 the derivative
/// is 0 almost everywhere and a zero vector is returned.
pub fn eval_deriv(kv: &KnotVector, x: f64) -> Result<BasisVector> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::DomainError(x));
    }
    let q = kv.order;
    if q == 1 {
        return Ok(BasisVector {
            dim: kv.dim(),
            offset: 0,
            values: vec![0.0],
        });
    }
    let lower = kv.lower_order();
    let lo = eval(&lower, x)?;
    let w = derivative_matrix(kv)?;

    // Column k of W feeds lower-basis entry k; the q-1 nonzeros of `lo`
    // spread into q consecutive derivative entries starting at lo.offset.
    let mut values = vec![0.0; q];
    for (i, &v) in lo.values.iter().enumerate() {
        let k = lo.offset + i;
        let s = w.column_scales[k] * v;
        values[i] -= s;
        values[i + 1] += s;
    }
    Ok(BasisVector {
        dim: kv.dim(),
        offset: lo.offset,
        values,
    })
}

/// Quasi-uniformity ratio max increment / min increment over the breakpoints.
pub fn knot_mesh_ratio(kv: &KnotVector) -> f64 {
    let bp = kv.breakpoints();
    let mut min = f64::INFINITY;
    let mut max: f64 = 0.0;
    for w in bp.windows(2) {
        let d = w[1] - w[0];
        min = min.min(d);
        max = max.max(d);
    }
    max / min
}
