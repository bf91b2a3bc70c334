use std::sync::OnceLock;

use super::cholesky::Factor;
use crate::error::{Error, Result};

/// Symmetric sparse matrix holding its upper triangle in compressed rows.
///
/// Row `i` stores the columns `j >= i` in ascending order; the lower triangle
/// is implied. Values are finite and `(i, j)` pairs are unique.
#[derive(Debug, Clone)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    factor: OnceLock<Factor>,
}

impl SparseSym {
    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        assert!(diag.iter().all(|v| v.is_finite()));
        let n = diag.len();
        SparseSym {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: diag.to_vec(),
            factor: OnceLock::new(),
        }
    }

    /// Builds from a dense symmetric matrix, keeping the structural nonzeros
    /// of the upper triangle. Only intended for small problems.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut b = SparseSymBuilder::new(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::dims(n, row.len()));
            }
            for j in i..n {
                if (row[j] - rows[j][i]).abs() > 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "matrix not symmetric at ({i}, {j})"
                    )));
                }
                if row[j] != 0.0 || i == j {
                    b.push(i, j, row[j]);
                }
            }
        }
        b.build()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored upper-triangle entries.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Stored entries `(row, col, value)` with `row <= col`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k], self.vals[k]))
        })
    }

    pub(crate) fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.entries() {
            d[i][j] = v;
            d[j][i] = v;
        }
        d
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::dims(self.n, x.len()));
        }
        let mut y = vec![0.0; self.n];
        for (i, j, v) in self.entries() {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        Ok(y)
    }

    /// `a * self + b * other` over the union of both sparsity patterns.
    pub fn linear_combination(&self, a: f64, other: &SparseSym, b: f64) -> Result<SparseSym> {
        if self.n != other.n {
            return Err(Error::dims(self.n, other.n));
        }
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut cols = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut vals = Vec::with_capacity(cols.capacity());
        row_ptr.push(0);
        for i in 0..self.n {
            let (c1, v1) = self.row(i);
            let (c2, v2) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < c1.len() || q < c2.len() {
                let take1 = q == c2.len() || (p < c1.len() && c1[p] <= c2[q]);
                let take2 = p == c1.len() || (q < c2.len() && c2[q] <= c1[p]);
                let mut v = 0.0;
                let col = if take1 { c1[p] } else { c2[q] };
                if take1 {
                    v += a * v1[p];
                    p += 1;
                }
                if take2 {
                    v += b * v2[q];
                    q += 1;
                }
                cols.push(col);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear combination".into()));
        }
        Ok(SparseSym {
            n: self.n,
            row_ptr,
            cols,
            vals,
            factor: OnceLock::new(),
        })
    }

    pub fn scaled(&self, s: f64) -> SparseSym {
        let vals: Vec<f64> = self.vals.iter().map(|v| v * s).collect();
        assert!(vals.iter().all(|v| v.is_finite()));
        SparseSym {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            vals,
            factor: OnceLock::new(),
        }
    }

    /// Factorization without jitter, computed on first use and kept.
    pub fn cached_factor(&self) -> Result<&Factor> {
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let f = super::factorize(self, 0.0)?;
        Ok(self.factor.get_or_init(|| f))
    }
}

/// Triplet accumulator for [`SparseSym`]. Entries may be pushed in either
/// triangle; duplicates are summed.
#[derive(Debug, Clone)]
pub struct SparseSymBuilder {
    n: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl SparseSymBuilder {
    pub fn new(n: usize) -> Self {
        SparseSymBuilder {
            n,
            triplets: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        SparseSymBuilder {
            n,
            triplets: Vec::with_capacity(cap),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.triplets.push((i, j, v));
    }

    pub fn build(mut self) -> Result<SparseSym> {
        for &(i, j, v) in &self.triplets {
            if j >= self.n {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    n: self.n,
                });
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("entry ({i}, {j})")));
            }
        }
        self.triplets
            .sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; self.n + 1];
        let mut cols = Vec::with_capacity(self.triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.triplets {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(SparseSym {
            n: self.n,
            row_ptr,
            cols,
            vals,
            factor: OnceLock::new(),
        })
    }
}

/// Rectangular matrix in compressed rows, used for likelihood design matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists. Duplicate columns within a
    /// row are summed; exact zeros are kept as structural entries.
    pub fn from_rows(ncols: usize, rows: impl IntoIterator<Item = Vec<(usize, f64)>>) -> Result<Self> {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let start = cols.len();
            for (c, v) in row {
                if c >= ncols {
                    return Err(Error::IndexOutOfRange { index: c, n: ncols });
                }
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("design entry at column {c}")));
                }
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(CsrMatrix {
            ncols,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let s = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[s.clone()], &self.vals[s])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    /// Dense value lookup (zero when not stored).
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.iter()
            .position(|&k| k == c)
            .map_or(0.0, |k| vals[k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::dims(self.ncols, x.len()));
        }
        Ok((0..self.nrows())
            .map(|r| {
                let (c, v) = self.row(r);
                c.iter().zip(v).map(|(&c, &v)| v * x[c]).sum()
            })
            .collect())
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.nrows() {
            return Err(Error::dims(self.nrows(), y.len()));
        }
        let mut out = vec![0.0; self.ncols];
        for (r, &yr) in y.iter().enumerate() {
            let (c, v) = self.row(r);
            for (&c, &v) in c.iter().zip(v) {
                out[c] += v * yr;
            }
        }
        Ok(out)
    }

    /// `A' diag(w) A`.
    pub fn weighted_gram(&self, weights: &[f64]) -> Result<SparseSym> {
        if weights.len() != self.nrows() {
            return Err(Error::dims(self.nrows(), weights.len()));
        }
        let cap: usize = (0..self.nrows()).map(|r| self.row_nnz(r).pow(2)).sum();
        let mut b = SparseSymBuilder::with_capacity(self.ncols, cap);
        for (r, &w) in weights.iter().enumerate() {
            let (c, v) = self.row(r);
            for a in 0..c.len() {
                for k in a..c.len() {
                    b.push(c[a], c[k], w * v[a] * v[k]);
                }
            }
        }
        b.build()
    }
}
