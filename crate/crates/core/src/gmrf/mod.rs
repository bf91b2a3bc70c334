//! Intrinsic CAR priors on lattices and the sparse linear algebra behind them.
//!
//! [`car_precision`] builds the first-order intrinsic CAR precision
//!
//! ```text
//! Q_ij(alpha) = alpha^2 * n_i   if i == j
//!             = -alpha^2        if i ~ j (4-neighbourhood)
//!             = 0               otherwise
//! ```
//!
//! whose quadratic form `x' Q x` is `alpha^2` times the sum of squared forward
//! differences over lattice edges. The constant vector spans its null space, so
//! `Q` alone is only ever factorized after adding a full-rank data term or a
//! jitter.

mod cholesky;
mod ordering;
mod sparse;

pub use cholesky::{factorize, Factor};
pub use sparse::{CsrMatrix, SparseSym, SparseSymBuilder};

use crate::error::{Error, Result};

/// A `rows x cols` lattice with the 4-neighbourhood, indexed row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Lattice2D {
    rows: usize,
    cols: usize,
}

impl Lattice2D {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "lattice must be non-empty, got {rows}x{cols}"
            )));
        }
        Ok(Lattice2D { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn neighbor_count(&self, i: usize, j: usize) -> usize {
        usize::from(i > 0)
            + usize::from(i + 1 < self.rows)
            + usize::from(j > 0)
            + usize::from(j + 1 < self.cols)
    }

    /// Each edge once, as `(s, n(s))` with `n(s)` the right or lower neighbour.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (rows, cols) = (self.rows, self.cols);
        (0..rows).flat_map(move |i| {
            (0..cols).flat_map(move |j| {
                let s = i * cols + j;
                let right = (j + 1 < cols).then_some((s, s + 1));
                let down = (i + 1 < rows).then_some((s, s + cols));
                right.into_iter().chain(down)
            })
        })
    }

    pub fn edge_count(&self) -> usize {
        self.rows * (self.cols - 1) + (self.rows - 1) * self.cols
    }
}

/// Intrinsic CAR precision `Q(alpha)` on `lat`.
pub fn car_precision(lat: &Lattice2D, alpha: f64) -> Result<SparseSym> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    let a2 = alpha * alpha;
    let mut b = SparseSymBuilder::with_capacity(lat.len(), lat.len() + lat.edge_count());
    for i in 0..lat.rows() {
        for j in 0..lat.cols() {
            let s = i * lat.cols() + j;
            b.push(s, s, a2 * lat.neighbor_count(i, j) as f64);
        }
    }
    for (s, t) in lat.edges() {
        b.push(s, t, -a2);
    }
    b.build()
}

/// `x' Q x`.
pub fn quad_form(q: &SparseSym, x: &[f64]) -> Result<f64> {
    if x.len() != q.n() {
        return Err(Error::dims(q.n(), x.len()));
    }
    let mut s = 0.0;
    for (i, j, v) in q.entries() {
        if i == j {
            s += v * x[i] * x[i];
        } else {
            s += 2.0 * v * x[i] * x[j];
        }
    }
    Ok(s)
}

/// `(Q + jitter I)^-1` diagonal entries at `indices`.
pub fn marginal_variances(f: &Factor, indices: &[usize]) -> Result<Vec<f64>> {
    f.marginal_variances(indices)
}

/// Null-space deflation shift used by [`car_log_pdet`].
pub const DEFLATION_EPS: f64 = 1e-8;

/// Generalized log-determinant `log |Q(1)|_+` of the unit-scale CAR precision:
/// the sum of the logs of its nonzero eigenvalues.
///
/// Computed from a factorization of `Q(1) + eps I`, removing the single null
/// direction's contribution `ln eps`. For `alpha != 1`,
/// `log |Q(alpha)|_+ = 2 (n - 1) ln alpha + log |Q(1)|_+`.
pub fn car_log_pdet(lat: &Lattice2D) -> Result<f64> {
    let q = car_precision(lat, 1.0)?;
    let f = factorize(&q, DEFLATION_EPS)?;
    Ok(f.log_det() - DEFLATION_EPS.ln())
}
