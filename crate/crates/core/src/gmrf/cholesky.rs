//! Envelope (profile) Cholesky factorization.
//!
//! Rows of `L` are stored contiguously from the first structurally nonzero
//! column of the permuted matrix up to the diagonal. Fill is confined to the
//! envelope, so a bandwidth-reducing ordering keeps both storage and work
//! proportional to `n * b^2` for lattice-structured matrices.

use super::ordering;
use super::sparse::SparseSym;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Factor {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// `iperm[old] = new`.
    iperm: Vec<usize>,
    first: Vec<usize>,
    ptr: Vec<usize>,
    vals: Vec<f64>,
    jitter: f64,
}

impl Factor {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Stored envelope size, a proxy for the cost of the factorization.
    pub fn envelope_len(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.vals[self.ptr[r]..self.ptr[r + 1]]
    }

    #[inline]
    fn diag(&self, r: usize) -> f64 {
        self.vals[self.ptr[r + 1] - 1]
    }

    /// `log |Q + jitter I|`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|r| self.diag(r).ln()).sum::<f64>()
    }

    /// Solves `(Q + jitter I) x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::dims(self.n, b.len()));
        }
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.solve_permuted_in_place(&mut y);
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }

    fn solve_permuted_in_place(&self, y: &mut [f64]) {
        // L z = y
        for r in 0..self.n {
            let f = self.first[r];
            let row = self.row(r);
            let s: f64 = dot(&row[..r - f], &y[f..r]);
            y[r] = (y[r] - s) / row[r - f];
        }
        // L^T x = z, sweeping columns of L^T as rows of L.
        for r in (0..self.n).rev() {
            let f = self.first[r];
            let row = self.row(r);
            let xr = y[r] / row[r - f];
            y[r] = xr;
            for (yk, &l) in y[f..r].iter_mut().zip(&row[..r - f]) {
                *yk -= l * xr;
            }
        }
    }

    /// Diagonal of `(Q + jitter I)^-1` by one solve per requested index.
    pub fn marginal_variances(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(indices.len());
        let mut e = vec![0.0; self.n];
        for &i in indices {
            if i >= self.n {
                return Err(Error::IndexOutOfRange { index: i, n: self.n });
            }
            e.iter_mut().for_each(|v| *v = 0.0);
            e[self.iperm[i]] = 1.0;
            self.solve_permuted_in_place(&mut e);
            out.push(e[self.iperm[i]]);
        }
        Ok(out)
    }

    /// Full diagonal of `(Q + jitter I)^-1` by the Takahashi recursion over the
    /// envelope. Agrees with [`marginal_variances`](Self::marginal_variances)
    /// but costs about as much as the factorization itself instead of `n` solves.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.n;
        // Rows k > i whose envelope reaches column i.
        let mut count = vec![0usize; n + 1];
        for k in 0..n {
            for c in self.first[k]..k {
                count[c + 1] += 1;
            }
        }
        for i in 0..n {
            count[i + 1] += count[i];
        }
        let mut below = vec![0usize; count[n]];
        let mut fill = count.clone();
        for k in 0..n {
            for c in self.first[k]..k {
                below[fill[c]] = k;
                fill[c] += 1;
            }
        }

        let mut sigma = vec![0.0; self.vals.len()];
        let at = |r: usize, c: usize| -> usize {
            let (r, c) = if r >= c { (r, c) } else { (c, r) };
            self.ptr[r] + c - self.first[r]
        };
        let mut lcol = Vec::new();
        for i in (0..n).rev() {
            let rows = &below[count[i]..count[i + 1]];
            let lii = self.diag(i);
            lcol.clear();
            lcol.extend(rows.iter().map(|&k| self.vals[self.ptr[k] + i - self.first[k]]));
            for &j in rows {
                let mut s = 0.0;
                for (&k, &lki) in rows.iter().zip(&lcol) {
                    s += lki * sigma[at(k, j)];
                }
                sigma[at(j, i)] = -s / lii;
            }
            let mut s = 0.0;
            for (&k, &lki) in rows.iter().zip(&lcol) {
                s += lki * sigma[at(k, i)];
            }
            sigma[at(i, i)] = (1.0 / lii - s) / lii;
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = sigma[at(new, new)];
        }
        out
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without changing results
    // between runs.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * k + l] * b[4 * k + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Cholesky factorization of `q + jitter * I`.
///
/// The ordering is reverse Cuthill–McKee unless the natural order already
/// has the smaller envelope.
pub fn factorize(q: &SparseSym, jitter: f64) -> Result<Factor> {
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(Error::InvalidArgument(format!("jitter must be >= 0, got {jitter}")));
    }
    let n = q.n();
    let natural: Vec<usize> = (0..n).collect();
    let first_nat = ordering::envelope_first(q, &natural);
    let rcm = ordering::reverse_cuthill_mckee(&ordering::adjacency(q));
    let rcm_inv = ordering::invert(&rcm);
    let first_rcm = ordering::envelope_first(q, &rcm_inv);
    let (perm, iperm, first) =
        if ordering::envelope_size(&first_rcm) < ordering::envelope_size(&first_nat) {
            (rcm, rcm_inv, first_rcm)
        } else {
            (natural.clone(), natural, first_nat)
        };

    let mut ptr = Vec::with_capacity(n + 1);
    ptr.push(0);
    for r in 0..n {
        ptr.push(ptr[r] + r - first[r] + 1);
    }
    let mut vals = vec![0.0; ptr[n]];
    for (i, j, v) in q.entries() {
        let (a, b) = (iperm[i], iperm[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        vals[ptr[r] + c - first[r]] += v;
    }
    let mut orig_diag = vec![0.0; n];
    for r in 0..n {
        let d = &mut vals[ptr[r] + r - first[r]];
        *d += jitter;
        orig_diag[r] = *d;
    }

    let tol = n.max(1) as f64 * f64::EPSILON;
    for r in 0..n {
        let fr = first[r];
        let (done, rest) = vals.split_at_mut(ptr[r]);
        let row = &mut rest[..r - fr + 1];
        for c in fr..r {
            let fc = first[c];
            let k0 = fr.max(fc);
            let lc = &done[ptr[c]..ptr[c + 1]];
            let s = dot(&row[k0 - fr..c - fr], &lc[k0 - fc..c - fc]);
            row[c - fr] = (row[c - fr] - s) / lc[c - fc];
        }
        let s = dot(&row[..r - fr], &row[..r - fr]);
        let d = row[r - fr] - s;
        if !(d > tol * orig_diag[r].abs()) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite {
                pivot: perm[r],
                value: d,
            });
        }
        row[r - fr] = d.sqrt();
    }
    Ok(Factor {
        n,
        perm,
        iperm,
        first,
        ptr,
        vals,
        jitter,
    })
}
