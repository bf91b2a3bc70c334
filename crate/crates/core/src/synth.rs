//! Synthetic benchmarks: a growing Gaussian plume under a known constant flow,
//! and class-conditional labeled pixels for the detectors.
//!
//! Noise comes from `ChaCha20Rng::seed_from_u64(seed)` with standard normal
//! draws (`rand_distr::StandardNormal`) taken frame by frame in row-major
//! order, so a seed names the same stream on every platform.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::detect::{Emissivity, LabeledSample};
use crate::error::{Error, ParseErrorKind, Result};
use crate::flow::FlowField;
use crate::raster::{channel, format_f64, ChannelStack, Grid};

#[derive(Debug, Clone, PartialEq)]
pub struct PlumeScenario {
    pub rows: usize,
    pub cols: usize,
    pub n_frames: usize,
    /// `(u0, v0)` in pixels per frame; `u` runs along columns.
    pub flow: (f64, f64),
    /// Initial centre as `(x, y)` = (column, row).
    pub center0: (f64, f64),
    pub sigma0: f64,
    pub growth: f64,
    pub amplitude: f64,
    pub noise_sd: f64,
}

impl Default for PlumeScenario {
    fn default() -> Self {
        PlumeScenario {
            rows: 64,
            cols: 64,
            n_frames: 4,
            flow: (1.0, 0.5),
            center0: (30.0, 31.0),
            sigma0: 6.0,
            growth: 1.15,
            amplitude: 1.0,
            noise_sd: 0.01,
        }
    }
}

impl PlumeScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.rows == 0 || self.cols == 0 {
            return bad("scenario grid must be non-empty");
        }
        if self.n_frames < 2 {
            return bad("scenario needs at least 2 frames");
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad("sigma0 must be > 0");
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return bad("growth must be >= 1");
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return bad("amplitude must be > 0");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be >= 0");
        }
        let finite = [self.flow.0, self.flow.1, self.center0.0, self.center0.1];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("flow and center0 must be finite");
        }
        Ok(())
    }

    pub fn center(&self, k: usize) -> (f64, f64) {
        (
            self.center0.0 + k as f64 * self.flow.0,
            self.center0.1 + k as f64 * self.flow.1,
        )
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.sigma0 * self.growth.powi(k as i32)
    }

    /// Noise-free frame `k`.
    pub fn clean_frame(&self, k: usize) -> Grid {
        let (cx, cy) = self.center(k);
        let s = self.sigma(k);
        let denom = 2.0 * s * s;
        Grid::from_fn(self.rows, self.cols, |i, j| {
            let (dx, dy) = (j as f64 - cx, i as f64 - cy);
            self.amplitude * (-(dx * dx + dy * dy) / denom).exp()
        })
    }

    /// Whether every frame keeps its centre at least `3 sigma` inside the grid.
    pub fn within_margin(&self) -> bool {
        (0..self.n_frames).all(|k| {
            let (cx, cy) = self.center(k);
            let m = 3.0 * self.sigma(k);
            cx - m >= 0.0
                && cy - m >= 0.0
                && cx + m <= (self.cols - 1) as f64
                && cy + m <= (self.rows - 1) as f64
        })
    }

    pub fn to_text(&self) -> String {
        let f = format_f64;
        let mut s = String::new();
        let _ = writeln!(s, "rows={}", self.rows);
        let _ = writeln!(s, "cols={}", self.cols);
        let _ = writeln!(s, "n_frames={}", self.n_frames);
        let _ = writeln!(s, "flow_u={}", f(self.flow.0));
        let _ = writeln!(s, "flow_v={}", f(self.flow.1));
        let _ = writeln!(s, "center_x={}", f(self.center0.0));
        let _ = writeln!(s, "center_y={}", f(self.center0.1));
        let _ = writeln!(s, "sigma0={}", f(self.sigma0));
        let _ = writeln!(s, "growth={}", f(self.growth));
        let _ = writeln!(s, "amplitude={}", f(self.amplitude));
        let _ = writeln!(s, "noise_sd={}", f(self.noise_sd));
        s
    }

    /// Parses `key=value` lines over the defaults. Blank lines and `#`
    /// comments are skipped; unknown keys are errors.
    pub fn parse(text: &str) -> std::result::Result<Self, (usize, ParseErrorKind)> {
        let mut sc = PlumeScenario::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| (line_no, ParseErrorKind::Other(format!("expected key=value, got {line:?}"))))?;
            let (key, value) = (key.trim(), value.trim());
            let real = || -> std::result::Result<f64, (usize, ParseErrorKind)> {
                let v: f64 = value
                    .parse()
                    .map_err(|_| (line_no, ParseErrorKind::Number(value.to_string())))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err((line_no, ParseErrorKind::NonFinite(value.to_string())))
                }
            };
            let int = || -> std::result::Result<usize, (usize, ParseErrorKind)> {
                value
                    .parse()
                    .map_err(|_| (line_no, ParseErrorKind::Number(value.to_string())))
            };
            match key {
                "rows" => sc.rows = int()?,
                "cols" => sc.cols = int()?,
                "n_frames" => sc.n_frames = int()?,
                "flow_u" => sc.flow.0 = real()?,
                "flow_v" => sc.flow.1 = real()?,
                "center_x" => sc.center0.0 = real()?,
                "center_y" => sc.center0.1 = real()?,
                "sigma0" => sc.sigma0 = real()?,
                "growth" => sc.growth = real()?,
                "amplitude" => sc.amplitude = real()?,
                "noise_sd" => sc.noise_sd = real()?,
                _ => return Err((line_no, ParseErrorKind::Other(format!("unknown key {key:?}")))),
            }
        }
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sc = Self::parse(&text).map_err(|(line, kind)| Error::parse(path, line, kind))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub true_flow: FlowField,
    pub frames: Vec<Grid>,
    /// Noise-free frames, kept for masks and labels.
    pub clean_frames: Vec<Grid>,
    /// Set when the plume comes within `3 sigma` of the border.
    pub margin_warning: bool,
}

impl GroundTruth {
    /// Default evaluation mask for the pair `(k, k + 1)`: pixels where the
    /// noiseless pair average exceeds `fraction` of the amplitude.
    pub fn pair_mask(&self, k: usize, amplitude: f64, fraction: f64) -> Result<Grid> {
        let (a, b) = (self.clean_frames.get(k), self.clean_frames.get(k + 1));
        let (a, b) = match (a, b) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::IndexOutOfRange {
                    index: k + 1,
                    n: self.clean_frames.len(),
                })
            }
        };
        a.zip_map(b, |x, y| f64::from(0.5 * (x + y) > fraction * amplitude))
    }
}

pub fn generate_plume(sc: &PlumeScenario, seed: u64) -> Result<GroundTruth> {
    sc.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(sc.n_frames);
    let mut clean_frames = Vec::with_capacity(sc.n_frames);
    for k in 0..sc.n_frames {
        let clean = sc.clean_frame(k);
        let noisy = if sc.noise_sd > 0.0 {
            clean.map(|x| {
                let z: f64 = rng.sample(StandardNormal);
                x + sc.noise_sd * z
            })
        } else {
            clean.clone()
        };
        frames.push(noisy);
        clean_frames.push(clean);
    }
    Ok(GroundTruth {
        true_flow: FlowField::constant(sc.rows, sc.cols, sc.flow.0, sc.flow.1),
        frames,
        clean_frames,
        margin_warning: !sc.within_margin(),
    })
}

/// Class-conditional intensity/emissivity generator.
///
/// Pristine surface: `E ~ U(0.75, 0.95)` and intensities tied to it through
/// `t = (E - 0.75) / 0.2` as `(0.2 + 0.5 t, 0.6 - 0.3 t, 0.4 + 0.3 t)`, sd 0.01.
/// Dust: `E` drawn the same way but unrelated to the intensities, which drift
/// with the hour through `s = clamp((hour - 7) / 6, 0, 1)` around
/// `(0.45 + 0.35 s, 0.48 - 0.2 s, 0.58 + 0.2 s)`, sd 0.03.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelModel {
    pub pristine_sd: f64,
    pub dust_sd: f64,
    pub emissivity_range: (f64, f64),
    pub first_hour: u32,
    pub last_hour: u32,
}

impl Default for LabelModel {
    fn default() -> Self {
        LabelModel {
            pristine_sd: 0.01,
            dust_sd: 0.03,
            emissivity_range: (0.75, 0.95),
            first_hour: 7,
            last_hour: 17,
        }
    }
}

impl LabelModel {
    pub fn pristine_mean(&self, e: f64) -> [f64; 3] {
        let (lo, hi) = self.emissivity_range;
        let t = (e - lo) / (hi - lo);
        [0.2 + 0.5 * t, 0.6 - 0.3 * t, 0.4 + 0.3 * t]
    }

    pub fn dust_mean(&self, hour: f64) -> [f64; 3] {
        let s = ((hour - 7.0) / 6.0).clamp(0.0, 1.0);
        [0.45 + 0.35 * s, 0.48 - 0.2 * s, 0.58 + 0.2 * s]
    }

    /// Hour assigned to the `index`-th generated sample, cycling through
    /// `first_hour..=last_hour`.
    pub fn hour(&self, index: usize) -> f64 {
        let span = (self.last_hour - self.first_hour + 1) as usize;
        (self.first_hour as usize + index % span) as f64
    }

    fn draw(&self, rng: &mut ChaCha20Rng, dusty: bool, hour: f64) -> ([f64; 3], f64) {
        let (lo, hi) = self.emissivity_range;
        let e = rng.random_range(lo..hi);
        let (mean, sd) = if dusty {
            (self.dust_mean(hour), self.dust_sd)
        } else {
            (self.pristine_mean(e), self.pristine_sd)
        };
        let mut z = [0.0; 3];
        for (zi, m) in z.iter_mut().zip(mean) {
            let n: f64 = rng.sample(StandardNormal);
            *zi = m + sd * n;
        }
        (z, e)
    }
}

/// Labeled pixels over every frame of the plume, `label = clean plume > cutoff`.
/// Sample `k * rows * cols + p` is pixel `p` of frame `k`.
pub fn generate_labeled(sc: &PlumeScenario, seed: u64, cutoff: f64) -> Result<Vec<LabeledSample>> {
    generate_labeled_with(sc, seed, cutoff, &LabelModel::default())
}

pub fn generate_labeled_with(
    sc: &PlumeScenario,
    seed: u64,
    cutoff: f64,
    model: &LabelModel,
) -> Result<Vec<LabeledSample>> {
    sc.validate()?;
    if !cutoff.is_finite() {
        return Err(Error::InvalidArgument("cutoff must be finite".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = sc.rows * sc.cols;
    let mut out = Vec::with_capacity(n * sc.n_frames);
    for k in 0..sc.n_frames {
        let clean = sc.clean_frame(k);
        for (p, &x) in clean.data().iter().enumerate() {
            let dusty = x > cutoff;
            let hour = model.hour(k * n + p);
            let (intensity, e) = model.draw(&mut rng, dusty, hour);
            out.push(LabeledSample {
                pixel: k * n + p,
                intensity,
                emissivity: Emissivity::Scalar(e),
                label: dusty,
                hour,
            });
        }
    }
    let dusty = out.iter().filter(|s| s.label).count();
    if dusty == 0 || dusty == out.len() {
        return Err(Error::Degenerate(format!(
            "cutoff {cutoff} yields a single class ({dusty} dusty of {})",
            out.len()
        )));
    }
    Ok(out)
}

/// Channel stack for frame `k` of a labeled set produced by
/// [`generate_labeled`] on `sc`, with layers `R`, `G`, `B`, `E` and `label`.
pub fn labeled_frame_stack(sc: &PlumeScenario, samples: &[LabeledSample], k: usize) -> Result<ChannelStack> {
    let n = sc.rows * sc.cols;
    let frame: Vec<&LabeledSample> = samples
        .iter()
        .filter(|s| s.pixel / n == k)
        .collect();
    if frame.len() != n {
        return Err(Error::dims(n, frame.len()));
    }
    let mut layers = vec![vec![0.0; n]; 5];
    for s in frame {
        let p = s.pixel % n;
        for c in 0..3 {
            layers[c][p] = s.intensity[c];
        }
        layers[3][p] = s.emissivity.channel(0);
        layers[4][p] = f64::from(u8::from(s.label));
    }
    let mut stack = ChannelStack::new(k as i64, None)?;
    for (name, data) in [channel::RED, channel::GREEN, channel::BLUE, channel::EMISSIVITY, channel::LABEL]
        .into_iter()
        .zip(layers)
    {
        stack.insert(name, Grid::new(sc.rows, sc.cols, data)?)?;
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_plume_frames_are_identical() {
        let sc = PlumeScenario {
            growth: 1.0,
            noise_sd: 0.0,
            flow: (0.0, 0.0),
            ..Default::default()
        };
        let gt = generate_plume(&sc, 1).unwrap();
        assert!(gt.frames.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn unit_shift_moves_one_column() {
        let sc = PlumeScenario {
            growth: 1.0,
            noise_sd: 0.0,
            flow: (1.0, 0.0),
            ..Default::default()
        };
        let gt = generate_plume(&sc, 1).unwrap();
        for k in 0..sc.n_frames - 1 {
            let (a, b) = (&gt.frames[k], &gt.frames[k + 1]);
            for i in 0..sc.rows {
                for j in 1..sc.cols {
                    assert!((b.get(i, j) - a.get(i, j - 1)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn default_scenario_respects_margin() {
        let gt = generate_plume(&PlumeScenario::default(), 7).unwrap();
        assert!(!gt.margin_warning);
        let far = PlumeScenario {
            center0: (2.0, 2.0),
            ..Default::default()
        };
        assert!(generate_plume(&far, 7).unwrap().margin_warning);
    }

    #[test]
    fn scenario_text_round_trip() {
        let sc = PlumeScenario {
            flow: (-0.25, 1e-3),
            ..Default::default()
        };
        assert_eq!(PlumeScenario::parse(&sc.to_text()).unwrap(), sc);
        assert_eq!(PlumeScenario::parse("# c\n\nrows=8\n").unwrap().rows, 8);
        assert_eq!(PlumeScenario::parse("a\n").unwrap_err().0, 1);
        assert_eq!(PlumeScenario::parse("rows=2\nbogus=1\n").unwrap_err().0, 2);
        assert!(matches!(
            PlumeScenario::parse("sigma0=inf").unwrap_err().1,
            ParseErrorKind::NonFinite(_)
        ));
    }

    #[test]
    fn labeled_degenerate_cutoffs() {
        let sc = PlumeScenario::default();
        assert!(generate_labeled(&sc, 11, 2.0).is_err());
        assert!(generate_labeled(&sc, 11, 0.0).is_err());
        let s = generate_labeled(&sc, 11, 0.5).unwrap();
        let frac = s.iter().filter(|s| s.label).count() as f64 / s.len() as f64;
        assert!((0.02..=0.98).contains(&frac));
    }

    #[test]
    fn labeled_stack_matches_samples() {
        let sc = PlumeScenario {
            rows: 8,
            cols: 8,
            sigma0: 2.0,
            center0: (4.0, 4.0),
            flow: (0.0, 0.0),
            ..Default::default()
        };
        let s = generate_labeled(&sc, 3, 0.5).unwrap();
        let st = labeled_frame_stack(&sc, &s, 1).unwrap();
        let p = 64 + 27;
        assert_eq!(st.require("R").unwrap().data()[27], s[p].intensity[0]);
        assert_eq!(st.timestamp, 1);
    }
}
