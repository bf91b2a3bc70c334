//! Dust detectors: brightness-temperature thresholds, Fisher LDA, and latent
//! signal mapping (LSM).
//!
//! Every detector produces the linear predictor `eta` of dust evidence per
//! pixel; probabilistic detectors map it through the logistic function.
//!
//! LSM models `eta = g_1(I_1, E_1) + g_2(I_2, E_2) + g_3(I_3, E_3)` where each
//! `g_i` is a latent surface on a `bins_a x bins_b` grid over (intensity,
//! emissivity) with an intrinsic CAR prior of precision `rho * Q`, plus a weak
//! ridge `kappa * I` that pins the additive constants the data cannot split
//! between surfaces. The surfaces are fitted jointly to Bernoulli labels at
//! their posterior mode by damped Newton iterations, and `rho` is chosen on a
//! grid by the Laplace approximation to the marginal likelihood. A surface
//! with `bins_b = 1` ignores emissivity and is a first-order random walk over
//! intensity.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, ParseErrorKind, Result};
use crate::gmrf::{car_precision, factorize, Lattice2D, SparseSym, SparseSymBuilder};
use crate::raster::{channel, format_f64, ChannelStack, Grid};

/// Threshold scheme on split-window brightness temperatures (Kelvin).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRule {
    /// Apply the `bt10.8 < t_bt108` test.
    pub use_bt108: bool,
    pub t_br: f64,
    pub t_bg: f64,
    pub t_bt108: f64,
    /// `dt_br - M < t_anom`; `None` skips the test and the `M` layer.
    pub t_anom: Option<f64>,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule {
            use_bt108: true,
            t_br: 0.0,
            t_bg: 10.0,
            t_bt108: 285.0,
            t_anom: Some(-2.0),
        }
    }
}

impl ThresholdRule {
    /// The variant without the 10.8 um test.
    pub fn without_bt108() -> Self {
        ThresholdRule {
            use_bt108: false,
            ..Self::default()
        }
    }

    /// The rule at one pixel.
    pub fn flags(&self, dt_br: f64, dt_bg: f64, bt108: f64, rolling_mean: f64) -> bool {
        dt_br > self.t_br
            && dt_bg < self.t_bg
            && (!self.use_bt108 || bt108 < self.t_bt108)
            && self.t_anom.is_none_or(|t| dt_br - rolling_mean < t)
    }
}

/// Binary dust mask from layers `dt_br`, `dt_bg`, `bt10.8` (when used) and `M`
/// (when the anomaly test is active).
pub fn threshold_detect(stack: &ChannelStack, rule: &ThresholdRule) -> Result<Grid> {
    if [rule.t_br, rule.t_bg, rule.t_bt108].iter().any(|t| !t.is_finite())
        || rule.t_anom.is_some_and(|t| !t.is_finite())
    {
        return Err(Error::InvalidArgument("thresholds must be finite".into()));
    }
    let br = stack.require(channel::DT_BR)?;
    let bg = stack.require(channel::DT_BG)?;
    let bt = if rule.use_bt108 {
        Some(stack.require(channel::BT108)?)
    } else {
        None
    };
    let m = if rule.t_anom.is_some() {
        Some(stack.require(channel::ROLLING_MEAN)?)
    } else {
        None
    };
    let (rows, cols) = br.shape();
    Ok(Grid::from_fn(rows, cols, |i, j| {
        let hit = rule.flags(
            br.get(i, j),
            bg.get(i, j),
            bt.map_or(0.0, |g| g.get(i, j)),
            m.map_or(0.0, |g| g.get(i, j)),
        );
        f64::from(u8::from(hit))
    }))
}

/// `1` where `prob > cutoff`, else `0`.
pub fn classify(prob: &Grid, cutoff: f64) -> Grid {
    prob.map(|p| f64::from(u8::from(p > cutoff)))
}

/// `1 / (1 + exp(-eta))` without overflow.
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Emissivity {
    /// One emissivity shared by all three channels.
    Scalar(f64),
    PerChannel([f64; 3]),
}

impl Emissivity {
    pub fn channel(&self, i: usize) -> f64 {
        match self {
            Emissivity::Scalar(e) => *e,
            Emissivity::PerChannel(e) => e[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub pixel: usize,
    pub intensity: [f64; 3],
    pub emissivity: Emissivity,
    pub label: bool,
    pub hour: f64,
}

impl LabeledSample {
    /// Emissivity seen by channel `i`.
    pub fn e(&self, i: usize) -> f64 {
        self.emissivity.channel(i)
    }
}

/// Text form: `samples <n>` then one `I1 I2 I3 E label hour` line per sample,
/// or `I1 I2 I3 E1 E2 E3 label hour` with per-channel emissivity. The pixel
/// index of a sample is its position in the file.
pub fn samples_to_text(samples: &[LabeledSample]) -> String {
    let mut s = format!("samples {}\n", samples.len());
    for x in samples {
        for v in x.intensity {
            s.push_str(&format_f64(v));
            s.push(' ');
        }
        match x.emissivity {
            Emissivity::Scalar(e) => {
                s.push_str(&format_f64(e));
                s.push(' ');
            }
            Emissivity::PerChannel(e) => {
                for v in e {
                    s.push_str(&format_f64(v));
                    s.push(' ');
                }
            }
        }
        let _ = writeln!(s, "{} {}", u8::from(x.label), format_f64(x.hour));
    }
    s
}

fn parse_real(tok: &str, line: usize) -> std::result::Result<f64, (usize, ParseErrorKind)> {
    let v: f64 = tok
        .parse()
        .map_err(|_| (line, ParseErrorKind::Number(tok.to_string())))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err((line, ParseErrorKind::NonFinite(tok.to_string())))
    }
}

pub fn parse_samples(text: &str) -> std::result::Result<Vec<LabeledSample>, (usize, ParseErrorKind)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or((1, ParseErrorKind::Header("empty file".into())))?;
    let n: usize = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["samples", n] => n
            .parse()
            .map_err(|_| (1, ParseErrorKind::Header(header.to_string())))?,
        _ => return Err((1, ParseErrorKind::Header(header.to_string()))),
    };
    let mut out = Vec::with_capacity(n);
    let mut last_line = 1;
    for (line, raw) in lines {
        last_line = line;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if out.len() == n {
            return Err((line, ParseErrorKind::Count { expected: n, found: n + 1 }));
        }
        let (emissivity, rest) = match toks.len() {
            6 => (Emissivity::Scalar(parse_real(toks[3], line)?), &toks[4..]),
            8 => (
                Emissivity::PerChannel([
                    parse_real(toks[3], line)?,
                    parse_real(toks[4], line)?,
                    parse_real(toks[5], line)?,
                ]),
                &toks[6..],
            ),
            k => return Err((line, ParseErrorKind::Count { expected: 6, found: k })),
        };
        let label = match rest[0] {
            "0" => false,
            "1" => true,
            t => return Err((line, ParseErrorKind::Other(format!("label must be 0 or 1, got {t:?}")))),
        };
        out.push(LabeledSample {
            pixel: out.len(),
            intensity: [
                parse_real(toks[0], line)?,
                parse_real(toks[1], line)?,
                parse_real(toks[2], line)?,
            ],
            emissivity,
            label,
            hour: parse_real(rest[1], line)?,
        });
    }
    if out.len() != n {
        return Err((last_line, ParseErrorKind::Count { expected: n, found: out.len() }));
    }
    Ok(out)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<LabeledSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_samples(&text).map_err(|(line, kind)| Error::parse(path, line, kind))
}

pub fn save_samples(samples: &[LabeledSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, samples_to_text(samples)).map_err(|e| Error::io(path, e))
}

fn check_samples(samples: &[LabeledSample]) -> Result<()> {
    for s in samples {
        let e = [s.e(0), s.e(1), s.e(2)];
        if s.intensity.iter().chain(&e).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {}", s.pixel)));
        }
    }
    Ok(())
}

/// Two-class Fisher discriminant `eta = q + r . I` with `eta > 0` meaning dust.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdaModel {
    pub q: f64,
    pub r: [f64; 3],
    /// Ridge added to the pooled covariance when it was singular, else 0.
    pub ridge: f64,
}

pub const LDA_RIDGE: f64 = 1e-8;

fn cholesky_solve3(m: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let scale = m[0][0].abs().max(m[1][1].abs()).max(m[2][2].abs());
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if !(d > 1e-12 * scale) {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    let mut y = [0.0; 3];
    for i in 0..3 {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        x[i] = (y[i] - (i + 1..3).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

/// Fits `r = S^-1 (mu_1 - mu_0)` with `S` the pooled within-class covariance
/// and `q` placing the boundary midway between the class means, so that
/// `logistic(eta)` is the equal-prior Gaussian posterior of dust.
pub fn lda_fit(samples: &[LabeledSample]) -> Result<LdaModel> {
    check_samples(samples)?;
    if samples.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "LDA needs at least 4 samples, got {}",
            samples.len()
        )));
    }
    let mut mean = [[0.0; 3]; 2];
    let mut count = [0usize; 2];
    for s in samples {
        let c = usize::from(s.label);
        count[c] += 1;
        for k in 0..3 {
            mean[c][k] += s.intensity[k];
        }
    }
    if count[0] == 0 || count[1] == 0 {
        return Err(Error::Degenerate("LDA needs both classes".into()));
    }
    for c in 0..2 {
        for k in 0..3 {
            mean[c][k] /= count[c] as f64;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for s in samples {
        let m = &mean[usize::from(s.label)];
        let d = [s.intensity[0] - m[0], s.intensity[1] - m[1], s.intensity[2] - m[2]];
        for a in 0..3 {
            for b in 0..3 {
                cov[a][b] += d[a] * d[b];
            }
        }
    }
    let dof = (samples.len() - 2) as f64;
    cov.iter_mut().flatten().for_each(|v| *v /= dof);
    let diff = [mean[1][0] - mean[0][0], mean[1][1] - mean[0][1], mean[1][2] - mean[0][2]];
    let (r, ridge) = match cholesky_solve3(&cov, &diff) {
        Some(r) => (r, 0.0),
        None => {
            let mut reg = cov;
            for (k, row) in reg.iter_mut().enumerate() {
                row[k] += LDA_RIDGE;
            }
            let r = cholesky_solve3(&reg, &diff)
                .ok_or_else(|| Error::Degenerate("within-class scatter is singular".into()))?;
            (r, LDA_RIDGE)
        }
    };
    let mid: f64 = (0..3).map(|k| 0.5 * (mean[0][k] + mean[1][k]) * r[k]).sum();
    Ok(LdaModel { q: -mid, r, ridge })
}

fn intensity_layers(stack: &ChannelStack) -> Result<[&Grid; 3]> {
    Ok([
        stack.require(channel::RED)?,
        stack.require(channel::GREEN)?,
        stack.require(channel::BLUE)?,
    ])
}

impl LdaModel {
    pub fn eta(&self, i: &[f64; 3]) -> f64 {
        self.q + self.r[0] * i[0] + self.r[1] * i[1] + self.r[2] * i[2]
    }

    pub fn probability(&self, i: &[f64; 3]) -> f64 {
        logistic(self.eta(i))
    }

    /// Per-pixel dust probability from layers `R`, `G`, `B`.
    pub fn predict(&self, stack: &ChannelStack) -> Result<Grid> {
        let [r, g, b] = intensity_layers(stack)?;
        let (rows, cols) = r.shape();
        Ok(Grid::from_fn(rows, cols, |i, j| {
            self.probability(&[r.get(i, j), g.get(i, j), b.get(i, j)])
        }))
    }
}

/// Equal-width binning of `[lo, hi]` into `bins` cells; values outside clamp
/// to the edge cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinAxis {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl BinAxis {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo {
            return Err(Error::InvalidArgument(format!("invalid bin axis {bins} over [{lo}, {hi}]")));
        }
        Ok(BinAxis { bins, lo, hi })
    }

    fn spanning<'a>(bins: usize, values: impl Iterator<Item = f64> + 'a) -> Result<Self> {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        BinAxis::new(bins, lo, hi)
    }

    pub fn bin(&self, x: f64) -> usize {
        if self.bins == 1 || self.hi == self.lo {
            return 0;
        }
        let t = (x - self.lo) / (self.hi - self.lo) * self.bins as f64;
        if t <= 0.0 {
            0
        } else {
            (t as usize).min(self.bins - 1)
        }
    }
}

/// Latent function on an (intensity, emissivity) bin grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSurface {
    pub axis_a: BinAxis,
    pub axis_b: BinAxis,
    /// `axis_a.bins x axis_b.bins`.
    pub values: Grid,
    pub rho: f64,
}

impl LatentSurface {
    pub fn zeros(axis_a: BinAxis, axis_b: BinAxis, rho: f64) -> Self {
        LatentSurface {
            values: Grid::zeros(axis_a.bins, axis_b.bins),
            axis_a,
            axis_b,
            rho,
        }
    }

    pub fn bins(&self) -> usize {
        self.axis_a.bins * self.axis_b.bins
    }

    /// Flat index of the bin containing `(a, b)`.
    pub fn cell(&self, a: f64, b: f64) -> usize {
        self.axis_a.bin(a) * self.axis_b.bins + self.axis_b.bin(b)
    }

    pub fn lookup(&self, a: f64, b: f64) -> f64 {
        self.values.data()[self.cell(a, b)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsmConfig {
    /// Intensity bins per surface.
    pub bins_a: usize,
    /// Emissivity bins per surface; 1 drops emissivity.
    pub bins_b: usize,
    pub rho_grid: Vec<f64>,
    /// Ridge `kappa` on every latent value.
    pub ridge: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Stop when `|grad| <= tol * (1 + |grad_0|)`.
    pub tol: f64,
}

impl Default for LsmConfig {
    fn default() -> Self {
        LsmConfig {
            bins_a: 100,
            bins_b: 100,
            rho_grid: vec![0.1, 1.0, 10.0, 100.0],
            ridge: 1e-3,
            max_iter: 100,
            max_halvings: 30,
            tol: 1e-6,
        }
    }
}

impl LsmConfig {
    pub fn with_bins(bins: usize) -> Self {
        LsmConfig {
            bins_a: bins,
            bins_b: bins,
            ..Self::default()
        }
    }
}

/// Penalized Bernoulli problem for stacked surface values `g`:
/// minimize `F(g) = -sum_s [y_s eta_s - ln(1 + exp(eta_s))] + g' K g / 2`
/// where `eta_s` sums one entry of `g` per column listed for sample `s`.
#[derive(Debug, Clone)]
pub struct LsmProblem {
    n_params: usize,
    cells: Vec<Vec<usize>>,
    y: Vec<f64>,
    prior: SparseSym,
}

/// Outcome of [`LsmProblem::newton`].
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonResult {
    pub mode: Vec<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub initial_gradient_norm: f64,
    /// `F` after every accepted step, starting at the initial point.
    pub objective_trace: Vec<f64>,
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl LsmProblem {
    /// `cells[s]` lists the entries of `g` summed into `eta_s`; `prior` is `K`.
    pub fn new(cells: Vec<Vec<usize>>, y: Vec<f64>, prior: SparseSym) -> Result<Self> {
        let n_params = prior.n();
        if cells.len() != y.len() {
            return Err(Error::dims(cells.len(), y.len()));
        }
        if let Some(&c) = cells.iter().flatten().find(|&&c| c >= n_params) {
            return Err(Error::IndexOutOfRange { index: c, n: n_params });
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        Ok(LsmProblem {
            n_params,
            cells,
            y,
            prior,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn prior(&self) -> &SparseSym {
        &self.prior
    }

    pub fn linear_predictor(&self, g: &[f64]) -> Vec<f64> {
        self.cells
            .iter()
            .map(|c| c.iter().map(|&k| g[k]).sum())
            .collect()
    }

    pub fn log_likelihood(&self, g: &[f64]) -> f64 {
        self.linear_predictor(g)
            .iter()
            .zip(&self.y)
            .map(|(&eta, &y)| y * eta - softplus(eta))
            .sum()
    }

    fn penalty(&self, g: &[f64]) -> f64 {
        let kg = self.prior.mul_vec(g).expect("length checked by caller");
        0.5 * g.iter().zip(&kg).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn objective(&self, g: &[f64]) -> Result<f64> {
        self.check(g)?;
        Ok(self.penalty(g) - self.log_likelihood(g))
    }

    pub fn gradient(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check(g)?;
        let mut grad = self.prior.mul_vec(g)?;
        for (c, (&eta, &y)) in self.cells.iter().zip(self.linear_predictor(g).iter().zip(&self.y)) {
            let r = logistic(eta) - y;
            for &k in c {
                grad[k] += r;
            }
        }
        Ok(grad)
    }

    /// `A' W A + K` with Bernoulli weights `W = p (1 - p)`.
    pub fn hessian(&self, g: &[f64]) -> Result<SparseSym> {
        self.check(g)?;
        let per = self.cells.iter().map(|c| c.len() * c.len()).sum::<usize>();
        let mut b = SparseSymBuilder::with_capacity(self.n_params, per + self.prior.nnz());
        for (i, j, v) in self.prior.entries() {
            b.push(i, j, v);
        }
        for (c, eta) in self.cells.iter().zip(self.linear_predictor(g)) {
            let p = logistic(eta);
            let w = p * (1.0 - p);
            for (x, &a) in c.iter().enumerate() {
                b.push(a, a, w);
                for &bb in &c[x + 1..] {
                    // A repeated cell sits on the diagonal twice.
                    b.push(a, bb, if a == bb { 2.0 * w } else { w });
                }
            }
        }
        b.build()
    }

    fn check(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.n_params {
            return Err(Error::dims(self.n_params, g.len()));
        }
        Ok(())
    }

    /// Damped Newton from `g0` with step halving on any objective increase.
    pub fn newton(&self, g0: &[f64], cfg: &LsmConfig) -> Result<NewtonResult> {
        let mut g = g0.to_vec();
        let mut f = self.objective(&g)?;
        let mut grad = self.gradient(&g)?;
        let gn0 = norm2(&grad);
        let mut trace = vec![f];
        for it in 0..=cfg.max_iter {
            let gn = norm2(&grad);
            if gn <= cfg.tol * (1.0 + gn0) {
                return Ok(NewtonResult {
                    mode: g,
                    iterations: it,
                    gradient_norm: gn,
                    initial_gradient_norm: gn0,
                    objective_trace: trace,
                });
            }
            if it == cfg.max_iter {
                break;
            }
            let h = self.hessian(&g)?;
            let step = factorize(&h, 0.0)?.solve(&grad)?;
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..=cfg.max_halvings {
                let cand: Vec<f64> = g.iter().zip(&step).map(|(x, d)| x - t * d).collect();
                let fc = self.objective(&cand)?;
                if fc <= f {
                    accepted = Some((cand, fc));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, fc)) = accepted else {
                return Err(Error::NotConverged {
                    iterations: it,
                    gradient_norm: gn,
                });
            };
            g = cand;
            f = fc;
            grad = self.gradient(&g)?;
            trace.push(f);
        }
        Err(Error::NotConverged {
            iterations: cfg.max_iter,
            gradient_norm: norm2(&grad),
        })
    }

    /// Laplace approximation to `ln p(y)` at a mode `g`:
    /// `l(g) - g'Kg/2 + ln|K|/2 - ln|H(g)|/2`.
    pub fn log_evidence(&self, g: &[f64]) -> Result<f64> {
        let lk = factorize(&self.prior, 0.0)?.log_det();
        let lh = factorize(&self.hessian(g)?, 0.0)?.log_det();
        Ok(self.log_likelihood(g) - self.penalty(g) + 0.5 * lk - 0.5 * lh)
    }
}

/// Prior precision `rho * Q + kappa * I` for one surface.
pub fn surface_prior(bins_a: usize, bins_b: usize, rho: f64, ridge: f64) -> Result<SparseSym> {
    if !(rho > 0.0 && rho.is_finite()) || !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rho and ridge must be > 0, got {rho} and {ridge}"
        )));
    }
    let q = car_precision(&Lattice2D::new(bins_a, bins_b)?, 1.0)?;
    q.linear_combination(rho, &SparseSym::identity(q.n()), ridge)
}

fn stacked_prior(block: &SparseSym, copies: usize) -> Result<SparseSym> {
    let n = block.n();
    let mut b = SparseSymBuilder::with_capacity(n * copies, block.nnz() * copies);
    for c in 0..copies {
        for (i, j, v) in block.entries() {
            b.push(c * n + i, c * n + j, v);
        }
    }
    b.build()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsmFitReport {
    pub rho: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub initial_gradient_norm: f64,
    pub objective_trace: Vec<f64>,
    /// `(rho, log evidence)` for every grid value tried.
    pub evidence: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LsmModel {
    /// One surface per intensity channel once fitted.
    pub surfaces: Vec<LatentSurface>,
    pub fitted: bool,
    pub fit_report: Option<LsmFitReport>,
}

/// Bin templates spanning the training data.
fn surface_axes(samples: &[LabeledSample], cfg: &LsmConfig) -> Result<Vec<(BinAxis, BinAxis)>> {
    (0..3)
        .map(|i| {
            Ok((
                BinAxis::spanning(cfg.bins_a, samples.iter().map(|s| s.intensity[i]))?,
                BinAxis::spanning(cfg.bins_b, samples.iter().map(|s| s.e(i)))?,
            ))
        })
        .collect()
}

fn sample_cells(samples: &[LabeledSample], surfaces: &[LatentSurface]) -> Vec<Vec<usize>> {
    let mut offset = vec![0; surfaces.len()];
    for i in 1..surfaces.len() {
        offset[i] = offset[i - 1] + surfaces[i - 1].bins();
    }
    samples
        .iter()
        .map(|s| {
            surfaces
                .iter()
                .enumerate()
                .map(|(i, sf)| offset[i] + sf.cell(s.intensity[i], s.e(i)))
                .collect()
        })
        .collect()
}

/// LSM problem on `samples` for one `rho`, with bins spanning the data.
pub fn lsm_problem(samples: &[LabeledSample], cfg: &LsmConfig, rho: f64) -> Result<LsmProblem> {
    let axes = surface_axes(samples, cfg)?;
    let surfaces: Vec<LatentSurface> = axes
        .iter()
        .map(|&(a, b)| LatentSurface::zeros(a, b, rho))
        .collect();
    let block = surface_prior(cfg.bins_a, cfg.bins_b, rho, cfg.ridge)?;
    LsmProblem::new(
        sample_cells(samples, &surfaces),
        samples.iter().map(|s| f64::from(u8::from(s.label))).collect(),
        stacked_prior(&block, 3)?,
    )
}

/// Fits LSM surfaces with `bins x bins` cells each, choosing `rho` from
/// `rho_grid` by Laplace evidence.
pub fn lsm_fit(samples: &[LabeledSample], bins: usize, rho_grid: &[f64]) -> Result<LsmModel> {
    lsm_fit_with(
        samples,
        &LsmConfig {
            rho_grid: rho_grid.to_vec(),
            ..LsmConfig::with_bins(bins)
        },
    )
}

pub fn lsm_fit_with(samples: &[LabeledSample], cfg: &LsmConfig) -> Result<LsmModel> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    check_samples(samples)?;
    if cfg.bins_a < 2 || cfg.bins_b < 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 intensity bins and 1 emissivity bin, got {}x{}",
            cfg.bins_a, cfg.bins_b
        )));
    }
    if cfg.rho_grid.is_empty() {
        return Err(Error::InvalidArgument("empty rho grid".into()));
    }
    let axes = surface_axes(samples, cfg)?;
    let mut best: Option<(f64, f64, NewtonResult)> = None;
    let mut evidence = Vec::with_capacity(cfg.rho_grid.len());
    let mut start = vec![0.0; 3 * cfg.bins_a * cfg.bins_b];
    for &rho in &cfg.rho_grid {
        let problem = lsm_problem(samples, cfg, rho)?;
        let fit = problem.newton(&start, cfg)?;
        let ev = problem.log_evidence(&fit.mode)?;
        evidence.push((rho, ev));
        start.clone_from(&fit.mode);
        if best.as_ref().is_none_or(|b| ev > b.1) {
            best = Some((rho, ev, fit));
        }
    }
    let (rho, _, fit) = best.expect("non-empty grid");
    let per = cfg.bins_a * cfg.bins_b;
    let surfaces = axes
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            Ok(LatentSurface {
                axis_a: a,
                axis_b: b,
                values: Grid::new(a.bins, b.bins, fit.mode[i * per..(i + 1) * per].to_vec())?,
                rho,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LsmModel {
        surfaces,
        fitted: true,
        fit_report: Some(LsmFitReport {
            rho,
            iterations: fit.iterations,
            gradient_norm: fit.gradient_norm,
            initial_gradient_norm: fit.initial_gradient_norm,
            objective_trace: fit.objective_trace,
            evidence,
        }),
    })
}

impl LsmModel {
    fn surfaces(&self) -> Result<&[LatentSurface]> {
        if !self.fitted || self.surfaces.len() != 3 {
            return Err(Error::Unfitted);
        }
        Ok(&self.surfaces)
    }

    pub fn eta(&self, intensity: &[f64; 3], emissivity: &Emissivity) -> Result<f64> {
        Ok(self
            .surfaces()?
            .iter()
            .enumerate()
            .map(|(i, s)| s.lookup(intensity[i], emissivity.channel(i)))
            .sum())
    }

    pub fn probability(&self, sample: &LabeledSample) -> Result<f64> {
        Ok(logistic(self.eta(&sample.intensity, &sample.emissivity)?))
    }
}

/// Per-pixel dust probability from layers `R`, `G`, `B` and either `E` or all
/// of `E1`, `E2`, `E3`.
pub fn lsm_predict(model: &LsmModel, stack: &ChannelStack) -> Result<Grid> {
    let surfaces = model.surfaces()?;
    let intensity = intensity_layers(stack)?;
    let per_channel = channel::EMISSIVITY_PER_CHANNEL;
    let emissivity: [&Grid; 3] = if per_channel.iter().all(|c| stack.contains(c)) {
        [
            stack.require(per_channel[0])?,
            stack.require(per_channel[1])?,
            stack.require(per_channel[2])?,
        ]
    } else {
        let e = stack.require(channel::EMISSIVITY)?;
        [e, e, e]
    };
    let (rows, cols) = intensity[0].shape();
    Ok(Grid::from_fn(rows, cols, |i, j| {
        let eta: f64 = (0..3)
            .map(|c| surfaces[c].lookup(intensity[c].get(i, j), emissivity[c].get(i, j)))
            .sum();
        logistic(eta)
    }))
}

/// A fitted probabilistic detector and its text form.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorModel {
    Lda(LdaModel),
    Lsm(LsmModel),
}

impl DetectorModel {
    pub fn predict(&self, stack: &ChannelStack) -> Result<Grid> {
        match self {
            DetectorModel::Lda(m) => m.predict(stack),
            DetectorModel::Lsm(m) => lsm_predict(m, stack),
        }
    }

    /// ```text
    /// lda
    /// q <q>
    /// r <r1> <r2> <r3>
    /// ridge <ridge>
    /// ```
    /// or
    /// ```text
    /// lsm
    /// surface <bins_a> <bins_b> <lo_a> <hi_a> <lo_b> <hi_b> <rho>
    /// <bins_b values>     (bins_a lines)
    /// ...                 (three surfaces)
    /// ```
    pub fn to_text(&self) -> Result<String> {
        let f = format_f64;
        let mut s = String::new();
        match self {
            DetectorModel::Lda(m) => {
                let _ = writeln!(s, "lda\nq {}", f(m.q));
                let _ = writeln!(s, "r {} {} {}", f(m.r[0]), f(m.r[1]), f(m.r[2]));
                let _ = writeln!(s, "ridge {}", f(m.ridge));
            }
            DetectorModel::Lsm(m) => {
                s.push_str("lsm\n");
                for sf in m.surfaces()? {
                    let (a, b) = (sf.axis_a, sf.axis_b);
                    let _ = writeln!(
                        s,
                        "surface {} {} {} {} {} {} {}",
                        a.bins,
                        b.bins,
                        f(a.lo),
                        f(a.hi),
                        f(b.lo),
                        f(b.hi),
                        f(sf.rho)
                    );
                    for row in sf.values.data().chunks(b.bins) {
                        let toks: Vec<String> = row.iter().map(|&v| f(v)).collect();
                        s.push_str(&toks.join(" "));
                        s.push('\n');
                    }
                }
            }
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> std::result::Result<Self, (usize, ParseErrorKind)> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
            .filter(|(_, t)| !t.is_empty());
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| (0, ParseErrorKind::Other(format!("unexpected end of file, expected {what}"))))
        };
        let (line, kind) = next("model kind")?;
        let reals = |line: usize, toks: &[&str]| -> std::result::Result<Vec<f64>, (usize, ParseErrorKind)> {
            toks.iter().map(|t| parse_real(t, line)).collect()
        };
        match kind.as_slice() {
            ["lda"] => {
                let (l, q) = next("q")?;
                let q = match q.as_slice() {
                    ["q", v] => parse_real(v, l)?,
                    _ => return Err((l, ParseErrorKind::Header("expected `q <value>`".into()))),
                };
                let (l, r) = next("r")?;
                let r = match r.as_slice() {
                    ["r", rest @ ..] if rest.len() == 3 => reals(l, rest)?,
                    _ => return Err((l, ParseErrorKind::Header("expected `r <r1> <r2> <r3>`".into()))),
                };
                let (l, ridge) = next("ridge")?;
                let ridge = match ridge.as_slice() {
                    ["ridge", v] => parse_real(v, l)?,
                    _ => return Err((l, ParseErrorKind::Header("expected `ridge <value>`".into()))),
                };
                Ok(DetectorModel::Lda(LdaModel {
                    q,
                    r: [r[0], r[1], r[2]],
                    ridge,
                }))
            }
            ["lsm"] => {
                let mut surfaces = Vec::with_capacity(3);
                for _ in 0..3 {
                    let (l, head) = next("surface header")?;
                    let bad = || (l, ParseErrorKind::Header("expected `surface <bins_a> <bins_b> <lo_a> <hi_a> <lo_b> <hi_b> <rho>`".into()));
                    if head.len() != 8 || head[0] != "surface" {
                        return Err(bad());
                    }
                    let ba: usize = head[1].parse().map_err(|_| bad())?;
                    let bb: usize = head[2].parse().map_err(|_| bad())?;
                    let v = reals(l, &head[3..])?;
                    let axis_a = BinAxis::new(ba, v[0], v[1]).map_err(|e| (l, ParseErrorKind::Other(e.to_string())))?;
                    let axis_b = BinAxis::new(bb, v[2], v[3]).map_err(|e| (l, ParseErrorKind::Other(e.to_string())))?;
                    let mut data = Vec::with_capacity(ba * bb);
                    for _ in 0..ba {
                        let (l, row) = next("surface values")?;
                        if row.len() != bb {
                            return Err((l, ParseErrorKind::Count { expected: bb, found: row.len() }));
                        }
                        data.extend(reals(l, &row)?);
                    }
                    surfaces.push(LatentSurface {
                        axis_a,
                        axis_b,
                        values: Grid::new(ba, bb, data).map_err(|e| (l, ParseErrorKind::Other(e.to_string())))?,
                        rho: v[4],
                    });
                }
                if let Some((l, _)) = lines.next() {
                    return Err((l, ParseErrorKind::Other("trailing content after three surfaces".into())));
                }
                Ok(DetectorModel::Lsm(LsmModel {
                    surfaces,
                    fitted: true,
                    fit_report: None,
                }))
            }
            _ => Err((line, ParseErrorKind::Header("expected `lda` or `lsm`".into()))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|(line, kind)| Error::parse(path, line, kind))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(dt_br: f64, dt_bg: f64, bt108: f64, m: f64) -> ChannelStack {
        let g = |v| Grid::filled(2, 2, v);
        ChannelStack::new(0, None)
            .unwrap()
            .with(channel::DT_BR, g(dt_br))
            .unwrap()
            .with(channel::DT_BG, g(dt_bg))
            .unwrap()
            .with(channel::BT108, g(bt108))
            .unwrap()
            .with(channel::ROLLING_MEAN, g(m))
            .unwrap()
    }

    #[test]
    fn printed_thresholds() {
        let rule = ThresholdRule::default();
        let all = |s: &ChannelStack, r| threshold_detect(s, r).unwrap().data().to_vec();
        assert_eq!(all(&stack(1.5, 5.0, 280.0, 4.5), &rule), vec![1.0; 4]);
        assert_eq!(all(&stack(0.0, 5.0, 280.0, 4.5), &rule), vec![0.0; 4]);
        assert_eq!(all(&stack(1.5, 10.0, 280.0, 4.5), &rule), vec![0.0; 4]);
        assert_eq!(all(&stack(1.5, 5.0, 285.0, 4.5), &rule), vec![0.0; 4]);
        assert_eq!(all(&stack(1.5, 5.0, 280.0, 3.5), &rule), vec![0.0; 4]);
        let no108 = ThresholdRule::without_bt108();
        assert_eq!(all(&stack(1.5, 5.0, 300.0, 4.5), &no108), vec![1.0; 4]);
    }

    #[test]
    fn missing_rolling_mean_is_named() {
        let s = ChannelStack::new(0, None)
            .unwrap()
            .with(channel::DT_BR, Grid::zeros(1, 1))
            .unwrap()
            .with(channel::DT_BG, Grid::zeros(1, 1))
            .unwrap()
            .with(channel::BT108, Grid::zeros(1, 1))
            .unwrap();
        match threshold_detect(&s, &ThresholdRule::default()) {
            Err(Error::MissingLayer(name)) => assert_eq!(name, "M"),
            other => panic!("unexpected {other:?}"),
        }
        let rule = ThresholdRule {
            t_anom: None,
            ..Default::default()
        };
        assert!(threshold_detect(&s, &rule).is_ok());
    }

    #[test]
    fn classify_is_strict() {
        let p = Grid::new(1, 3, vec![0.5, 0.51, 0.49]).unwrap();
        assert_eq!(classify(&p, 0.5).data(), &[0.0, 1.0, 0.0]);
        assert_eq!(logistic(0.0), 0.5);
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
    }

    #[test]
    fn sample_text_round_trip() {
        let s = vec![
            LabeledSample {
                pixel: 0,
                intensity: [0.1, 0.2, 0.3],
                emissivity: Emissivity::Scalar(0.9),
                label: true,
                hour: 7.0,
            },
            LabeledSample {
                pixel: 1,
                intensity: [-1.0, 2.5, 1e-9],
                emissivity: Emissivity::PerChannel([0.8, 0.85, 0.9]),
                label: false,
                hour: 12.5,
            },
        ];
        let text = samples_to_text(&s);
        assert!(text.starts_with("samples 2\n0.1 0.2 0.3 0.9 1 7\n"));
        assert_eq!(parse_samples(&text).unwrap(), s);
        assert_eq!(parse_samples("samples 2\n1 2 3 4 0 5\n").unwrap_err().0, 2);
        assert_eq!(parse_samples("samples 1\n1 2 3 4 2 5\n").unwrap_err().0, 2);
        assert_eq!(parse_samples("sample 1\n").unwrap_err().0, 1);
    }

    #[test]
    fn binning_clamps() {
        let a = BinAxis::new(4, 0.0, 1.0).unwrap();
        assert_eq!(a.bin(-3.0), 0);
        assert_eq!(a.bin(0.3), 1);
        assert_eq!(a.bin(1.0), 3);
        assert_eq!(a.bin(7.0), 3);
        assert_eq!(BinAxis::new(4, 2.0, 2.0).unwrap().bin(2.0), 0);
    }

    #[test]
    fn unfitted_model_refuses_to_predict() {
        let s = ChannelStack::new(0, None).unwrap();
        assert!(matches!(lsm_predict(&LsmModel::default(), &s), Err(Error::Unfitted)));
    }
}
