//! Optical flow as the posterior of a latent Gaussian field.
//!
//! Each pixel `p` contributes one Gaussian observation row
//!
//! ```text
//! HS : u_p eta_x + v_p eta_y                  = -eta_t + e,   e ~ N(0, sigma2)
//! ICE: u_p eta_x + v_p eta_y + eta * div(w)_p = -eta_t + e
//! ```
//!
//! with `div(w)_ij ~ ((u_{i,j+1} - u_{i,j-1}) + (v_{i+1,j} - v_{i-1,j})) / 2`.
//! The unknown vector stacks every `u` and then every `v`; both components get
//! an independent intrinsic CAR prior `Q(alpha)`. For fixed `alpha` the
//! posterior is Gaussian with precision
//!
//! ```text
//! P(alpha) = A'A / sigma2 + blockdiag(Q(alpha), Q(alpha))
//! ```
//!
//! and its mean minimizes the discretized functional
//! `sum_p r_p^2 / sigma2 + alpha^2 * sum_edges (du^2 + dv^2)`.
//! [`bayes_flow`] integrates `alpha` over a grid with the exact Gaussian evidence.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmrf::{car_log_pdet, car_precision, factorize, CsrMatrix, Factor, Lattice2D, SparseSym};
use crate::raster::{DerivativeSet, Grid};

/// Per-pixel displacement in pixels per frame, with optional posterior variances.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Grid,
    pub v: Grid,
    pub var_u: Option<Grid>,
    pub var_v: Option<Grid>,
}

impl FlowField {
    pub fn new(u: Grid, v: Grid) -> Result<Self> {
        u.ensure_same_shape(&v)?;
        Ok(FlowField {
            u,
            v,
            var_u: None,
            var_v: None,
        })
    }

    pub fn with_variances(mut self, var_u: Grid, var_v: Grid) -> Result<Self> {
        self.u.ensure_same_shape(&var_u)?;
        self.u.ensure_same_shape(&var_v)?;
        self.var_u = Some(var_u);
        self.var_v = Some(var_v);
        Ok(self)
    }

    pub fn constant(rows: usize, cols: usize, u: f64, v: f64) -> Self {
        FlowField {
            u: Grid::filled(rows, cols, u),
            v: Grid::filled(rows, cols, v),
            var_u: None,
            var_v: None,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.u.shape()
    }

    /// Stacked unknown vector `(u..., v...)`.
    pub fn to_vector(&self) -> Vec<f64> {
        self.u.data().iter().chain(self.v.data()).copied().collect()
    }

    pub fn from_vector(rows: usize, cols: usize, w: &[f64]) -> Result<Self> {
        let n = rows * cols;
        if w.len() != 2 * n {
            return Err(Error::dims(2 * n, w.len()));
        }
        FlowField::new(
            Grid::new(rows, cols, w[..n].to_vec())?,
            Grid::new(rows, cols, w[n..].to_vec())?,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowMethod {
    /// Brightness constancy (Horn–Schunck).
    Hs,
    /// Integrated continuity equation.
    Ice,
}

impl std::str::FromStr for FlowMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hs" => Ok(FlowMethod::Hs),
            "ice" => Ok(FlowMethod::Ice),
            _ => Err(Error::InvalidArgument(format!("unknown flow method {s:?}"))),
        }
    }
}

impl std::fmt::Display for FlowMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FlowMethod::Hs => "hs",
            FlowMethod::Ice => "ice",
        })
    }
}

/// Gaussian observation system `A w = b + e`, `e ~ N(0, sigma2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodSystem {
    pub method: FlowMethod,
    pub rows: usize,
    pub cols: usize,
    /// One row per pixel; columns `0..n` are `u`, `n..2n` are `v`.
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub sigma2: f64,
}

impl LikelihoodSystem {
    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    /// `A w - b`, the per-pixel model residual.
    pub fn residuals(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.a.mul_vec(w)?;
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        Ok(r)
    }

    pub fn lattice(&self) -> Lattice2D {
        Lattice2D::new(self.rows, self.cols).expect("system has a non-empty grid")
    }
}

fn check_inputs(d: &DerivativeSet, sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma2 must be > 0, got {sigma2}")));
    }
    for (name, g) in [
        ("eta_x", &d.eta_x),
        ("eta_y", &d.eta_y),
        ("eta_t", &d.eta_t),
        ("eta", &d.eta),
    ] {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.into()));
        }
    }
    Ok(())
}

/// Brightness-constancy rows: `A[p, u_p] = eta_x`, `A[p, v_p] = eta_y`, `b_p = -eta_t`.
pub fn hs_system(d: &DerivativeSet, sigma2: f64) -> Result<LikelihoodSystem> {
    check_inputs(d, sigma2)?;
    let (rows, cols) = d.shape();
    let n = rows * cols;
    let a = CsrMatrix::from_rows(
        2 * n,
        (0..n).map(|p| vec![(p, d.eta_x.data()[p]), (n + p, d.eta_y.data()[p])]),
    )?;
    Ok(LikelihoodSystem {
        method: FlowMethod::Hs,
        rows,
        cols,
        a,
        b: d.eta_t.data().iter().map(|t| -t).collect(),
        sigma2,
    })
}

/// Divergence stencil weights along one axis at position `k` of `len`:
/// `(offset, weight)` pairs for the centred difference, or the one-sided
/// difference on the boundary ring.
fn divergence_stencil(k: usize, len: usize) -> [(isize, f64); 2] {
    if k == 0 {
        [(1, 1.0), (0, -1.0)]
    } else if k == len - 1 {
        [(0, 1.0), (-1, -1.0)]
    } else {
        [(1, 0.5), (-1, -0.5)]
    }
}

/// Integrated-continuity rows: the HS row plus `eta * div(w)`.
pub fn ice_system(d: &DerivativeSet, sigma2: f64) -> Result<LikelihoodSystem> {
    check_inputs(d, sigma2)?;
    let (rows, cols) = d.shape();
    if rows < 3 || cols < 3 {
        return Err(Error::InvalidArgument(format!(
            "ICE needs at least a 3x3 grid, got {rows}x{cols}"
        )));
    }
    let n = rows * cols;
    let a = CsrMatrix::from_rows(
        2 * n,
        (0..n).map(|p| {
            let (i, j) = (p / cols, p % cols);
            let eta = d.eta.data()[p];
            let mut row = vec![(p, d.eta_x.data()[p]), (n + p, d.eta_y.data()[p])];
            for (off, w) in divergence_stencil(j, cols) {
                let q = i * cols + (j as isize + off) as usize;
                row.push((q, eta * w));
            }
            for (off, w) in divergence_stencil(i, rows) {
                let q = (i as isize + off) as usize * cols + j;
                row.push((n + q, eta * w));
            }
            row
        }),
    )?;
    Ok(LikelihoodSystem {
        method: FlowMethod::Ice,
        rows,
        cols,
        a,
        b: d.eta_t.data().iter().map(|t| -t).collect(),
        sigma2,
    })
}

pub fn build_system(method: FlowMethod, d: &DerivativeSet, sigma2: f64) -> Result<LikelihoodSystem> {
    match method {
        FlowMethod::Hs => hs_system(d, sigma2),
        FlowMethod::Ice => ice_system(d, sigma2),
    }
}

/// `sum_p r_p^2 / sigma2 + alpha^2 * sum_edges (du^2 + dv^2)` at `w`.
pub fn objective(sys: &LikelihoodSystem, alpha: f64, w: &[f64]) -> Result<f64> {
    let r = sys.residuals(w)?;
    let data: f64 = r.iter().map(|x| x * x).sum::<f64>() / sys.sigma2;
    let n = sys.pixels();
    let lat = sys.lattice();
    let mut smooth = 0.0;
    for (s, t) in lat.edges() {
        smooth += (w[s] - w[t]).powi(2) + (w[n + s] - w[n + t]).powi(2);
    }
    Ok(data + alpha * alpha * smooth)
}

/// Options for the conditional posterior solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorOptions {
    /// Diagonal shift added to the posterior precision; 0 by default.
    pub jitter: f64,
    /// Retry with growing jitter when the precision is numerically singular
    /// (flat images carry no data term).
    pub auto_jitter: bool,
    /// Compute marginal variances of `u` and `v`.
    pub variances: bool,
}

impl Default for PosteriorOptions {
    fn default() -> Self {
        PosteriorOptions {
            jitter: 0.0,
            auto_jitter: true,
            variances: true,
        }
    }
}

/// Conditional posterior for one `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaPosterior {
    pub alpha: f64,
    pub flow: FlowField,
    pub log_marginal: f64,
    /// Jitter actually added to the posterior precision.
    pub jitter: f64,
}

/// Precomputed pieces shared by every `alpha` on a grid.
#[derive(Debug, Clone)]
pub struct FlowSolver {
    rows: usize,
    cols: usize,
    sigma2: f64,
    data_precision: SparseSym,
    prior_unit: SparseSym,
    rhs: Vec<f64>,
    btb_scaled: f64,
    log_pdet_unit: f64,
}

impl FlowSolver {
    pub fn new(sys: &LikelihoodSystem) -> Result<Self> {
        let n = sys.pixels();
        if sys.a.ncols() != 2 * n || sys.a.nrows() != n || sys.b.len() != n {
            return Err(Error::dims(
                format!("{n}x{} design", 2 * n),
                format!("{}x{} design", sys.a.nrows(), sys.a.ncols()),
            ));
        }
        let lat = sys.lattice();
        let inv = 1.0 / sys.sigma2;
        let data_precision = sys.a.weighted_gram(&vec![inv; n])?;
        let q1 = car_precision(&lat, 1.0)?;
        let prior_unit = block_diag2(&q1)?;
        let rhs: Vec<f64> = sys.a.tr_mul_vec(&sys.b)?.iter().map(|x| x * inv).collect();
        let btb_scaled = sys.b.iter().map(|x| x * x).sum::<f64>() * inv;
        Ok(FlowSolver {
            rows: sys.rows,
            cols: sys.cols,
            sigma2: sys.sigma2,
            data_precision,
            prior_unit,
            rhs,
            btb_scaled,
            log_pdet_unit: car_log_pdet(&lat)?,
        })
    }

    pub fn precision(&self, alpha: f64) -> Result<SparseSym> {
        self.data_precision
            .linear_combination(1.0, &self.prior_unit, alpha * alpha)
    }

    fn factor_with_jitter(&self, p: &SparseSym, opts: &PosteriorOptions) -> Result<Factor> {
        match factorize(p, opts.jitter) {
            Ok(f) => Ok(f),
            Err(e @ Error::NotPositiveDefinite { .. }) if opts.auto_jitter => {
                let scale = p.diag().iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1.0);
                let mut j = (opts.jitter * 10.0).max(1e-10 * scale);
                for _ in 0..12 {
                    if let Ok(f) = factorize(p, j) {
                        return Ok(f);
                    }
                    j *= 10.0;
                }
                Err(e)
            }
            Err(e) => Err(e),
        }
    }

    pub fn solve(&self, alpha: f64, opts: &PosteriorOptions) -> Result<AlphaPosterior> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
        }
        let p = self.precision(alpha)?;
        let f = self.factor_with_jitter(&p, opts)?;
        let mean = f.solve(&self.rhs)?;
        let n = self.rows * self.cols;
        // Intrinsic prior of rank 2(n-1) on 2n unknowns; m = n observations.
        let log_pdet_prior = 4.0 * (n as f64 - 1.0) * alpha.ln() + 2.0 * self.log_pdet_unit;
        let fit: f64 = mean.iter().zip(&self.rhs).map(|(m, c)| m * c).sum();
        let two_pi = 2.0 * std::f64::consts::PI;
        let log_marginal = -0.5 * n as f64 * (two_pi * self.sigma2).ln()
            + two_pi.ln()
            + 0.5 * log_pdet_prior
            - 0.5 * f.log_det()
            - 0.5 * (self.btb_scaled - fit);
        let mut flow = FlowField::from_vector(self.rows, self.cols, &mean)?;
        if opts.variances {
            let var = f.inverse_diagonal();
            flow = flow.with_variances(
                Grid::new(self.rows, self.cols, var[..n].to_vec())?,
                Grid::new(self.rows, self.cols, var[n..].to_vec())?,
            )?;
        }
        Ok(AlphaPosterior {
            alpha,
            flow,
            log_marginal,
            jitter: f.jitter(),
        })
    }
}

fn block_diag2(q: &SparseSym) -> Result<SparseSym> {
    let n = q.n();
    let mut b = crate::gmrf::SparseSymBuilder::with_capacity(2 * n, 2 * q.nnz());
    for (i, j, v) in q.entries() {
        b.push(i, j, v);
        b.push(n + i, n + j, v);
    }
    b.build()
}

/// Posterior of `(u, v)` for a fixed `alpha`, with its log evidence.
pub fn posterior_given_alpha(sys: &LikelihoodSystem, lat: &Lattice2D, alpha: f64) -> Result<AlphaPosterior> {
    posterior_given_alpha_with(sys, lat, alpha, &PosteriorOptions::default())
}

pub fn posterior_given_alpha_with(
    sys: &LikelihoodSystem,
    lat: &Lattice2D,
    alpha: f64,
    opts: &PosteriorOptions,
) -> Result<AlphaPosterior> {
    check_lattice(sys, lat)?;
    FlowSolver::new(sys)?.solve(alpha, opts)
}

fn check_lattice(sys: &LikelihoodSystem, lat: &Lattice2D) -> Result<()> {
    if (lat.rows(), lat.cols()) != (sys.rows, sys.cols) {
        return Err(Error::dims(
            format!("{}x{} lattice", sys.rows, sys.cols),
            format!("{}x{} lattice", lat.rows(), lat.cols()),
        ));
    }
    Ok(())
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "invalid log grid {lo}:{hi}:{n}"
        )));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.log10(), hi.log10());
    Ok((0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64)
            }
        })
        .collect())
}

/// The default smoothness grid: 20 log-spaced points on `[1e-2, 1e2]`.
pub fn default_alpha_grid() -> Vec<f64> {
    log_grid(1e-2, 1e2, 20).expect("valid constant grid")
}

/// Posterior summary after integrating `alpha` over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    /// Model-averaged mean and, when requested, mixture variances.
    pub mean: FlowField,
    pub alpha_grid: Vec<f64>,
    pub log_marginals: Vec<f64>,
    pub alpha_weights: Vec<f64>,
    pub sigma2: f64,
    pub map_alpha: f64,
    /// Jitter added at each grid point (all zero for non-degenerate inputs).
    pub jitter: Vec<f64>,
}

/// Normalized `exp(log_marginal) * prior` with the max-shift trick.
pub fn normalize_log_weights(log_marginals: &[f64], prior: &[f64]) -> Result<Vec<f64>> {
    let max = log_marginals
        .iter()
        .zip(prior)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Degenerate(
            "every log marginal likelihood is -inf".into(),
        ));
    }
    let mut w: Vec<f64> = log_marginals
        .iter()
        .zip(prior)
        .map(|(&l, &p)| if p > 0.0 { (l - max).exp() * p } else { 0.0 })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Options for [`bayes_flow_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesOptions {
    pub posterior: PosteriorOptions,
    /// Grid points with smaller weight are left out of the variance mixture.
    pub variance_weight_floor: f64,
}

impl Default for BayesOptions {
    fn default() -> Self {
        BayesOptions {
            posterior: PosteriorOptions::default(),
            variance_weight_floor: 1e-15,
        }
    }
}

/// Integrates `alpha` over `alpha_grid` with prior weights `alpha_prior`
/// (uniform when `None`) and returns the model-averaged posterior mean.
pub fn bayes_flow(
    sys: &LikelihoodSystem,
    lat: &Lattice2D,
    alpha_grid: &[f64],
    alpha_prior: Option<&[f64]>,
) -> Result<PosteriorSummary> {
    bayes_flow_with(sys, lat, alpha_grid, alpha_prior, &BayesOptions::default())
}

pub fn bayes_flow_with(
    sys: &LikelihoodSystem,
    lat: &Lattice2D,
    alpha_grid: &[f64],
    alpha_prior: Option<&[f64]>,
    opts: &BayesOptions,
) -> Result<PosteriorSummary> {
    check_lattice(sys, lat)?;
    let solver = FlowSolver::new(sys)?;
    let fits = solve_grid(&solver, alpha_grid, alpha_prior, &PosteriorOptions {
        variances: false,
        ..opts.posterior
    })?;
    summarize(&solver, alpha_grid, alpha_prior, fits, opts)
}

fn validate_grid(alpha_grid: &[f64], alpha_prior: Option<&[f64]>) -> Result<Vec<f64>> {
    if alpha_grid.is_empty() {
        return Err(Error::InvalidArgument("empty alpha grid".into()));
    }
    if alpha_grid.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidArgument("alpha values must be positive".into()));
    }
    if alpha_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("alpha grid must be increasing".into()));
    }
    let prior = match alpha_prior {
        Some(p) => {
            if p.len() != alpha_grid.len() {
                return Err(Error::dims(alpha_grid.len(), p.len()));
            }
            if p.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(Error::InvalidArgument("alpha prior must be nonnegative".into()));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "alpha prior must sum to 1, sums to {s}"
                )));
            }
            p.to_vec()
        }
        None => vec![1.0 / alpha_grid.len() as f64; alpha_grid.len()],
    };
    Ok(prior)
}

fn solve_grid(
    solver: &FlowSolver,
    alpha_grid: &[f64],
    alpha_prior: Option<&[f64]>,
    opts: &PosteriorOptions,
) -> Result<Vec<AlphaPosterior>> {
    validate_grid(alpha_grid, alpha_prior)?;
    alpha_grid
        .par_iter()
        .map(|&a| solver.solve(a, opts))
        .collect()
}

/// Combines per-`alpha` conditional fits already computed against `solver`.
fn summarize(
    solver: &FlowSolver,
    alpha_grid: &[f64],
    alpha_prior: Option<&[f64]>,
    fits: Vec<AlphaPosterior>,
    opts: &BayesOptions,
) -> Result<PosteriorSummary> {
    let prior = validate_grid(alpha_grid, alpha_prior)?;
    let log_marginals: Vec<f64> = fits.iter().map(|f| f.log_marginal).collect();
    let weights = normalize_log_weights(&log_marginals, &prior)?;
    let (rows, cols) = (solver.rows, solver.cols);
    let n = rows * cols;

    let mut mean = vec![0.0; 2 * n];
    for (fit, &w) in fits.iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        for (m, x) in mean.iter_mut().zip(fit.flow.to_vector()) {
            *m += w * x;
        }
    }
    let mut flow = FlowField::from_vector(rows, cols, &mean)?;

    if opts.posterior.variances {
        // Mixture variance: sum_j w_j (var_j + m_j^2) - m^2.
        let active: Vec<usize> = (0..fits.len())
            .filter(|&k| weights[k] > opts.variance_weight_floor)
            .collect();
        let with_var: Vec<AlphaPosterior> = active
            .par_iter()
            .map(|&k| solver.solve(alpha_grid[k], &opts.posterior))
            .collect::<Result<_>>()?;
        let mut second = vec![0.0; 2 * n];
        let wsum: f64 = active.iter().map(|&k| weights[k]).sum();
        for (&k, fit) in active.iter().zip(&with_var) {
            let w = weights[k] / wsum;
            let m = fit.flow.to_vector();
            let vu = fit.flow.var_u.as_ref().unwrap().data();
            let vv = fit.flow.var_v.as_ref().unwrap().data();
            for p in 0..n {
                second[p] += w * (vu[p] + m[p] * m[p]);
                second[n + p] += w * (vv[p] + m[n + p] * m[n + p]);
            }
        }
        let var: Vec<f64> = second
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s - m * m).max(0.0))
            .collect();
        flow = flow.with_variances(
            Grid::new(rows, cols, var[..n].to_vec())?,
            Grid::new(rows, cols, var[n..].to_vec())?,
        )?;
    }

    let map_index = weights
        .iter()
        .enumerate()
        .fold(0, |best, (k, &w)| if w > weights[best] { k } else { best });
    Ok(PosteriorSummary {
        mean: flow,
        alpha_grid: alpha_grid.to_vec(),
        log_marginals,
        alpha_weights: weights,
        sigma2: solver.sigma2,
        map_alpha: alpha_grid[map_index],
        jitter: fits.iter().map(|f| f.jitter).collect(),
    })
}

/// Fixed-`alpha` fits at every grid point plus the Bayesian summary, sharing
/// one set of factorizations. Used by the simulation study.
pub fn sweep_alpha(
    sys: &LikelihoodSystem,
    alpha_grid: &[f64],
    alpha_prior: Option<&[f64]>,
    opts: &BayesOptions,
) -> Result<(Vec<AlphaPosterior>, PosteriorSummary)> {
    let solver = FlowSolver::new(sys)?;
    let fits = solve_grid(&solver, alpha_grid, alpha_prior, &PosteriorOptions {
        variances: false,
        ..opts.posterior
    })?;
    let summary = summarize(&solver, alpha_grid, alpha_prior, fits.clone(), opts)?;
    Ok((fits, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvectDirection {
    /// Transport along `w`: sample at `p - w(p)`.
    Forward,
    /// Rewind: sample at `p + w(p)`.
    Backward,
}

/// Bilinear sample at fractional `(x, y)` = (column, row), clamped to the grid.
pub fn bilinear(g: &Grid, x: f64, y: f64) -> f64 {
    let (rows, cols) = g.shape();
    let x = x.clamp(0.0, (cols - 1) as f64);
    let y = y.clamp(0.0, (rows - 1) as f64);
    let (j0, i0) = (x.floor() as usize, y.floor() as usize);
    let (j1, i1) = ((j0 + 1).min(cols - 1), (i0 + 1).min(rows - 1));
    let (fx, fy) = (x - j0 as f64, y - i0 as f64);
    let top = g.get(i0, j0) * (1.0 - fx) + g.get(i0, j1) * fx;
    let bottom = g.get(i1, j0) * (1.0 - fx) + g.get(i1, j1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// One semi-Lagrangian step of `eta` under `w`.
pub fn advect(eta: &Grid, w: &FlowField, direction: AdvectDirection) -> Result<Grid> {
    eta.ensure_same_shape(&w.u)?;
    let sign = match direction {
        AdvectDirection::Forward => -1.0,
        AdvectDirection::Backward => 1.0,
    };
    let (rows, cols) = eta.shape();
    Ok(Grid::from_fn(rows, cols, |i, j| {
        let x = j as f64 + sign * w.u.get(i, j);
        let y = i as f64 + sign * w.v.get(i, j);
        bilinear(eta, x, y)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::derivatives;

    fn one_pixel(ex: f64, ey: f64, et: f64) -> DerivativeSet {
        let g = |v| Grid::filled(1, 1, v);
        DerivativeSet::new(g(ex), g(ey), g(et), g(0.0)).unwrap()
    }

    #[test]
    fn hs_single_pixel_row() {
        let sys = hs_system(&one_pixel(2.0, 3.0, -4.0), 1.0).unwrap();
        assert_eq!(sys.a.get(0, 0), 2.0);
        assert_eq!(sys.a.get(0, 1), 3.0);
        assert_eq!(sys.b, vec![4.0]);
        assert!(hs_system(&one_pixel(1.0, 1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn hs_zero_gradients_give_zero_system() {
        let z = Grid::zeros(4, 4);
        let d = derivatives(&z, &z).unwrap();
        let sys = hs_system(&d, 1.0).unwrap();
        assert!(sys.b.iter().all(|&x| x == 0.0));
        for p in 0..16 {
            assert_eq!(sys.a.row_nnz(p), 2);
            assert!(sys.a.row(p).1.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn ice_interior_coefficients() {
        let eta = Grid::filled(5, 5, 2.0);
        let z = Grid::zeros(5, 5);
        let d = DerivativeSet::new(z.clone(), z.clone(), z, eta).unwrap();
        let sys = ice_system(&d, 1.0).unwrap();
        let n = 25;
        let p = 2 * 5 + 2;
        assert_eq!(sys.a.get(p, p + 1), 1.0);
        assert_eq!(sys.a.get(p, p - 1), -1.0);
        assert_eq!(sys.a.get(p, n + p + 5), 1.0);
        assert_eq!(sys.a.get(p, n + p - 5), -1.0);
        assert!((0..n).all(|r| sys.a.row_nnz(r) <= 6));
        // Corner: one-sided differences with weight eta.
        assert_eq!(sys.a.get(0, 1), 2.0);
        assert_eq!(sys.a.get(0, 0), -2.0);
        assert!(ice_system(&one_pixel(1.0, 1.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn flat_image_gives_zero_flow() {
        let z = Grid::filled(4, 4, 0.3);
        let d = derivatives(&z, &z).unwrap();
        let sys = hs_system(&d, 1.0).unwrap();
        let lat = sys.lattice();
        for alpha in [0.1, 1.0, 10.0] {
            let post = posterior_given_alpha(&sys, &lat, alpha).unwrap();
            assert!(post.flow.u.data().iter().all(|&x| x == 0.0));
            assert!(post.flow.v.data().iter().all(|&x| x == 0.0));
            assert!(post.jitter > 0.0);
        }
        let strict = PosteriorOptions {
            auto_jitter: false,
            ..Default::default()
        };
        assert!(matches!(
            posterior_given_alpha_with(&sys, &lat, 1.0, &strict),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn weights_single_and_duplicate_grid() {
        let w = normalize_log_weights(&[-3.0], &[1.0]).unwrap();
        assert_eq!(w, vec![1.0]);
        let w = normalize_log_weights(&[-1e6, -1e6], &[0.5, 0.5]).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        assert!(normalize_log_weights(&[f64::NEG_INFINITY], &[1.0]).is_err());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = default_alpha_grid();
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 0.01);
        assert_eq!(g[19], 100.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(log_grid(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn advect_identity_and_shift() {
        let ramp = Grid::from_fn(5, 6, |i, j| (i * 10 + j) as f64);
        let zero = FlowField::constant(5, 6, 0.0, 0.0);
        assert_eq!(advect(&ramp, &zero, AdvectDirection::Forward).unwrap(), ramp);
        let right = FlowField::constant(5, 6, 1.0, 0.0);
        let out = advect(&ramp, &right, AdvectDirection::Forward).unwrap();
        for i in 0..5 {
            for j in 1..6 {
                assert_eq!(out.get(i, j), ramp.get(i, j - 1));
            }
            assert_eq!(out.get(i, 0), ramp.get(i, 0));
        }
        assert!(advect(&Grid::zeros(2, 2), &zero, AdvectDirection::Forward).is_err());
    }
}
