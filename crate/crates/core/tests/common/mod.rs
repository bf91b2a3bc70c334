//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use dustflow::detect::{logistic, LabeledSample};
use dustflow::flow::FlowMethod;
use dustflow::raster::{DerivativeSet, Grid};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn random_grid(rng: &mut ChaCha20Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Grid {
    Grid::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

pub fn random_derivatives(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DerivativeSet {
    DerivativeSet::new(
        random_grid(rng, rows, cols, -1.0, 1.0),
        random_grid(rng, rows, cols, -1.0, 1.0),
        random_grid(rng, rows, cols, -0.5, 0.5),
        random_grid(rng, rows, cols, 0.0, 1.5),
    )
    .unwrap()
}

/// Design matrix written out pixel by pixel from the observation equations.
pub fn dense_design(method: FlowMethod, d: &DerivativeSet) -> (DMatrix<f64>, DVector<f64>) {
    let (rows, cols) = d.shape();
    let n = rows * cols;
    let mut a = DMatrix::zeros(n, 2 * n);
    let mut b = DVector::zeros(n);
    for i in 0..rows {
        for j in 0..cols {
            let p = i * cols + j;
            a[(p, p)] += d.eta_x.get(i, j);
            a[(p, n + p)] += d.eta_y.get(i, j);
            b[p] = -d.eta_t.get(i, j);
            if method == FlowMethod::Ice {
                let e = d.eta.get(i, j);
                // d/dx of u along the row, d/dy of v along the column.
                if j == 0 {
                    a[(p, p + 1)] += e;
                    a[(p, p)] -= e;
                } else if j == cols - 1 {
                    a[(p, p)] += e;
                    a[(p, p - 1)] -= e;
                } else {
                    a[(p, p + 1)] += e / 2.0;
                    a[(p, p - 1)] -= e / 2.0;
                }
                if i == 0 {
                    a[(p, n + p + cols)] += e;
                    a[(p, n + p)] -= e;
                } else if i == rows - 1 {
                    a[(p, n + p)] += e;
                    a[(p, n + p - cols)] -= e;
                } else {
                    a[(p, n + p + cols)] += e / 2.0;
                    a[(p, n + p - cols)] -= e / 2.0;
                }
            }
        }
    }
    (a, b)
}

/// Unit-scale CAR precision from explicit neighbour enumeration.
pub fn dense_car(rows: usize, cols: usize) -> DMatrix<f64> {
    let n = rows * cols;
    let mut q = DMatrix::zeros(n, n);
    for i in 0..rows {
        for j in 0..cols {
            let p = i * cols + j;
            let mut nb = Vec::new();
            if i > 0 {
                nb.push(p - cols);
            }
            if i + 1 < rows {
                nb.push(p + cols);
            }
            if j > 0 {
                nb.push(p - 1);
            }
            if j + 1 < cols {
                nb.push(p + 1);
            }
            q[(p, p)] = nb.len() as f64;
            for s in nb {
                q[(p, s)] = -1.0;
            }
        }
    }
    q
}

pub fn block_diag2(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(q);
    out.view_mut((n, n), (n, n)).copy_from(q);
    out
}

pub struct DensePosterior {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    /// Evidence of the intrinsic prior through the limit of proper priors.
    pub log_marginal: f64,
}

/// Normal-equations posterior and a limit evaluation of the evidence: the
/// proper prior `Q + eps I` gives `b ~ N(0, sigma2 I + A (Q + eps I)^-1 A')`,
/// whose density behaves as the intrinsic evidence times
/// `(eps / 2 pi)^(k / 2)` for `k` null directions.
pub fn dense_posterior(method: FlowMethod, d: &DerivativeSet, sigma2: f64, alpha: f64) -> DensePosterior {
    let (rows, cols) = d.shape();
    let (a, b) = dense_design(method, d);
    let q2 = block_diag2(&dense_car(rows, cols)) * (alpha * alpha);
    let p = a.transpose() * &a / sigma2 + &q2;
    let inv = p.clone().try_inverse().expect("posterior precision invertible");
    let mean = &inv * (a.transpose() * &b / sigma2);
    let var = inv.diagonal();

    let eps = 1e-7;
    let n2 = q2.nrows();
    let prior_cov = (&q2 + DMatrix::identity(n2, n2) * eps).try_inverse().unwrap();
    let m = b.len();
    let cov = DMatrix::identity(m, m) * sigma2 + &a * prior_cov * a.transpose();
    let chol = cov.cholesky().unwrap();
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = b.dot(&chol.solve(&b));
    let two_pi = 2.0 * std::f64::consts::PI;
    let proper = -0.5 * (m as f64 * two_pi.ln() + logdet + quad);
    let null_dims = 2.0;
    let log_marginal = proper - 0.5 * null_dims * (eps.ln() - two_pi.ln());
    DensePosterior {
        mean,
        var,
        log_marginal,
    }
}

/// `sum r^2 / sigma2 + alpha^2 * sum_edges (du^2 + dv^2)` from the dense design.
pub fn dense_objective(a: &DMatrix<f64>, b: &DVector<f64>, rows: usize, cols: usize, sigma2: f64, alpha: f64, w: &[f64]) -> f64 {
    let wv = DVector::from_column_slice(w);
    let r = a * &wv - b;
    let q2 = block_diag2(&dense_car(rows, cols));
    r.dot(&r) / sigma2 + alpha * alpha * wv.dot(&(q2 * &wv))
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = xp[k];
            xp[k] = orig + h;
            let fp = f(&xp);
            xp[k] = orig - h;
            let fm = f(&xp);
            xp[k] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    got.iter()
        .zip(want)
        .fold(0.0f64, |m, (g, w)| m.max((g - w).abs() / scale))
}

/// Design and prior built from scratch for the dense oracles.
pub fn dense_lsm(samples: &[LabeledSample], bins: usize, rho: f64, ridge: f64) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let per = bins * bins;
    let mut a = DMatrix::zeros(samples.len(), 3 * per);
    let bin = |x: f64, lo: f64, hi: f64| {
        if hi == lo {
            0
        } else {
            (((x - lo) / (hi - lo) * bins as f64).floor().max(0.0) as usize).min(bins - 1)
        }
    };
    for c in 0..3 {
        let range = |f: &dyn Fn(&LabeledSample) -> f64| {
            samples.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)))
        };
        let (la, ha) = range(&|s| s.intensity[c]);
        let (lb, hb) = range(&|s| s.emissivity.channel(c));
        for (k, s) in samples.iter().enumerate() {
            let idx = c * per + bin(s.intensity[c], la, ha) * bins + bin(s.emissivity.channel(c), lb, hb);
            a[(k, idx)] += 1.0;
        }
    }
    let y = DVector::from_iterator(samples.len(), samples.iter().map(|s| f64::from(u8::from(s.label))));
    let block = dense_car(bins, bins) * rho + DMatrix::identity(per, per) * ridge;
    let mut k = DMatrix::zeros(3 * per, 3 * per);
    for c in 0..3 {
        k.view_mut((c * per, c * per), (per, per)).copy_from(&block);
    }
    (a, y, k)
}

pub fn dense_objective_grad(a: &DMatrix<f64>, y: &DVector<f64>, k: &DMatrix<f64>, g: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
    let eta = a * g;
    let p = eta.map(logistic);
    let ll: f64 = eta.iter().zip(y.iter()).map(|(e, y)| y * e - (1.0 + e.exp()).ln()).sum();
    let f = 0.5 * g.dot(&(k * g)) - ll;
    let grad = k * g + a.transpose() * (&p - y);
    let w = DMatrix::from_diagonal(&p.map(|p| p * (1.0 - p)));
    let h = k + a.transpose() * w * a;
    (f, grad, h)
}
