//! Rasters, channel stacks, finite-difference stencils and the GridText format.
//!
//! A [`Grid`] is a dense row-major lattice of finite reals. Pixel `(i, j)` is
//! row `i`, column `j`; the column axis is `x` and the row axis is `y`, so a
//! horizontal displacement `u` moves along columns.
//!
//! GridText v1 is the on-disk form of a grid:
//!
//! ```text
//! grid <rows> <cols>
//! v00 v01 ...
//! v10 v11 ...
//! ```
//!
//! Values are written in the shortest decimal form that parses back to the
//! same `f64`, one grid row per line, so `load(save(g)) == g` bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, ParseErrorKind, Result};

/// Conventional channel names used across the crate.
pub mod channel {
    pub const BT120: &str = "bt12.0";
    pub const BT108: &str = "bt10.8";
    pub const BT87: &str = "bt8.7";
    pub const DT_BR: &str = "dt_br";
    pub const DT_BG: &str = "dt_bg";
    pub const RED: &str = "R";
    pub const GREEN: &str = "G";
    pub const BLUE: &str = "B";
    /// Two-week cloud-masked rolling mean of `dt_br`.
    pub const ROLLING_MEAN: &str = "M";
    pub const EMISSIVITY: &str = "E";
    /// Per-channel emissivity layers, used instead of `E` when all three exist.
    pub const EMISSIVITY_PER_CHANNEL: [&str; 3] = ["E1", "E2", "E3"];
    pub const LABEL: &str = "label";
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::dims(rows * cols, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid data".into()));
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be positive");
        assert!(value.is_finite());
        Grid {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    /// Builds a grid from `f(row, col)`. Panics if `f` yields a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                assert!(v.is_finite(), "non-finite value at ({i}, {j})");
                data.push(v);
            }
        }
        Grid { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// Panics on a non-finite `value`.
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(value.is_finite());
        let k = self.index(row, col);
        self.data[k] = value;
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Grid {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()));
        Grid {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Element-wise combination of two grids of the same shape.
    pub fn zip_map(&self, other: &Grid, mut f: impl FnMut(f64, f64) -> f64) -> Result<Grid> {
        self.ensure_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Grid::new(self.rows, self.cols, data)
    }

    pub fn ensure_same_shape(&self, other: &Grid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Canonical GridText serialization.
    pub fn to_grid_text(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 8 + 16);
        writeln!(out, "grid {} {}", self.rows, self.cols).unwrap();
        for row in self.data.chunks(self.cols) {
            for (k, v) in row.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                write_f64(&mut out, *v);
            }
            out.push('\n');
        }
        out
    }

    /// Parses GridText, reporting failures as `(line, kind)` with 1-based lines.
    pub fn parse_grid_text(text: &str) -> std::result::Result<Grid, (usize, ParseErrorKind)> {
        let mut lines = text.lines().enumerate();
        let (rows, cols) = loop {
            match lines.next() {
                None => return Err((1, ParseErrorKind::Header("empty input".into()))),
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((k, l)) => break parse_header(l).map_err(|e| (k + 1, e))?,
            }
        };
        let expected = rows * cols;
        let mut data = Vec::with_capacity(expected);
        let mut last_line = 1;
        for (k, line) in lines {
            last_line = k + 1;
            for tok in line.split_whitespace() {
                if data.len() == expected {
                    return Err((
                        k + 1,
                        ParseErrorKind::Count {
                            expected,
                            found: expected + 1,
                        },
                    ));
                }
                data.push(parse_finite(tok).map_err(|e| (k + 1, e))?);
            }
        }
        if data.len() != expected {
            return Err((
                last_line,
                ParseErrorKind::Count {
                    expected,
                    found: data.len(),
                },
            ));
        }
        Ok(Grid { rows, cols, data })
    }
}

fn parse_header(line: &str) -> std::result::Result<(usize, usize), ParseErrorKind> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    match toks.as_slice() {
        ["grid", r, c] => {
            let rows: usize = r
                .parse()
                .map_err(|_| ParseErrorKind::Header(format!("bad row count {r:?}")))?;
            let cols: usize = c
                .parse()
                .map_err(|_| ParseErrorKind::Header(format!("bad column count {c:?}")))?;
            if rows == 0 || cols == 0 {
                return Err(ParseErrorKind::Header("dimensions must be positive".into()));
            }
            Ok((rows, cols))
        }
        _ => Err(ParseErrorKind::Header(format!(
            "expected \"grid <rows> <cols>\", found {line:?}"
        ))),
    }
}

/// Shortest round-trip decimal form of `v`: plain `Display` unless the
/// exponent form is strictly shorter (`5` but `1e-300`).
pub fn format_f64(v: f64) -> String {
    let plain = v.to_string();
    let exp = format!("{v:e}");
    if exp.len() < plain.len() {
        exp
    } else {
        plain
    }
}

pub(crate) fn write_f64(out: &mut String, v: f64) {
    out.push_str(&format_f64(v));
}

pub(crate) fn parse_finite(tok: &str) -> std::result::Result<f64, ParseErrorKind> {
    let v: f64 = tok
        .parse()
        .map_err(|_| ParseErrorKind::Number(tok.to_string()))?;
    if !v.is_finite() {
        return Err(ParseErrorKind::NonFinite(tok.to_string()));
    }
    Ok(v)
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<Grid> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Grid::parse_grid_text(&text).map_err(|(line, kind)| Error::parse(path, line, kind))
}

pub fn save_grid(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, grid.to_grid_text()).map_err(|e| Error::io(path, e))
}

/// Co-registered named rasters for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelStack {
    channels: BTreeMap<String, Grid>,
    pub timestamp: i64,
    pub hour_of_day: Option<f64>,
}

const MANIFEST: &str = "stack.manifest";

impl ChannelStack {
    pub fn new(timestamp: i64, hour_of_day: Option<f64>) -> Result<Self> {
        if let Some(h) = hour_of_day {
            if !(0.0..24.0).contains(&h) {
                return Err(Error::InvalidArgument(format!(
                    "hour of day {h} outside [0, 24)"
                )));
            }
        }
        Ok(ChannelStack {
            channels: BTreeMap::new(),
            timestamp,
            hour_of_day,
        })
    }

    /// Adds or replaces a channel. All channels must share one shape.
    pub fn insert(&mut self, name: impl Into<String>, grid: Grid) -> Result<()> {
        let name = name.into();
        if name.is_empty()
            || name.chars().any(char::is_whitespace)
            || name == "timestamp"
            || name == "hour"
        {
            return Err(Error::InvalidArgument(format!(
                "invalid channel name {name:?}"
            )));
        }
        if let Some((_, g)) = self.channels.iter().find(|(k, _)| **k != name) {
            g.ensure_same_shape(&grid)?;
        }
        self.channels.insert(name, grid);
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, grid: Grid) -> Result<Self> {
        self.insert(name, grid)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Grid> {
        self.channels.get(name)
    }

    /// Like [`get`](Self::get) but a missing channel is an error naming it.
    pub fn require(&self, name: &str) -> Result<&Grid> {
        self.channels
            .get(name)
            .ok_or_else(|| Error::MissingLayer(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.channels.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.channels.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Grid)> {
        self.channels.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.channels.values().next().map(Grid::shape)
    }

    /// Copies every channel of `other` into `self`, replacing same-named ones.
    pub fn merge(&mut self, other: &ChannelStack) -> Result<()> {
        for (name, grid) in other.iter() {
            self.insert(name, grid.clone())?;
        }
        Ok(())
    }

    /// Writes `stack.manifest` and one `<name>.grid` per channel into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = String::new();
        writeln!(manifest, "timestamp {}", self.timestamp).unwrap();
        match self.hour_of_day {
            Some(h) => writeln!(manifest, "hour {}", format_f64(h)).unwrap(),
            None => writeln!(manifest, "hour none").unwrap(),
        }
        for (name, grid) in &self.channels {
            let file = format!("{name}.grid");
            save_grid(grid, dir.join(&file))?;
            writeln!(manifest, "{name} {file}").unwrap();
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    /// Loads a stack directory written by [`save`](Self::save). Channel paths
    /// in the manifest are relative to `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut timestamp = None;
        let mut hour = None;
        let mut entries = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: String| Error::parse(&path, k + 1, ParseErrorKind::Other(msg));
            match toks.as_slice() {
                [] => {}
                ["timestamp", t] => {
                    timestamp = Some(
                        t.parse::<i64>()
                            .map_err(|_| bad(format!("bad timestamp {t:?}")))?,
                    )
                }
                ["hour", "none"] => hour = Some(None),
                ["hour", h] => {
                    hour = Some(Some(
                        parse_finite(h).map_err(|e| Error::parse(&path, k + 1, e))?,
                    ))
                }
                [name, file] => entries.push((k + 1, name.to_string(), file.to_string())),
                _ => return Err(bad(format!("unrecognized manifest line {line:?}"))),
            }
        }
        let timestamp = timestamp.ok_or_else(|| {
            Error::parse(&path, 1, ParseErrorKind::Other("missing timestamp".into()))
        })?;
        let mut stack = ChannelStack::new(timestamp, hour.unwrap_or(None))?;
        for (line, name, file) in entries {
            if stack.contains(&name) {
                return Err(Error::parse(
                    &path,
                    line,
                    ParseErrorKind::Other(format!("duplicate channel {name:?}")),
                ));
            }
            stack.insert(name, load_grid(dir.join(file))?)?;
        }
        Ok(stack)
    }
}

/// Physical ranges mapped onto `[0, 1]` by the false-colour rescalings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FalseColorRanges {
    pub dt_br: (f64, f64),
    pub dt_bg: (f64, f64),
    pub bt108: (f64, f64),
}

impl Default for FalseColorRanges {
    fn default() -> Self {
        FalseColorRanges {
            dt_br: (-4.0, 2.0),
            dt_bg: (0.0, 15.0),
            bt108: (261.0, 289.0),
        }
    }
}

/// Gamma applied to the green channel of the dust false-colour product.
pub const SFI_GAMMA: f64 = 0.4;

fn rescale(x: f64, (lo, hi): (f64, f64)) -> f64 {
    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Builds the split-window false-colour channels `R`, `G`, `B` together with
/// the raw differences `dt_br = bt12.0 - bt10.8` and `dt_bg = bt10.8 - bt8.7`.
pub fn false_color(
    bt120: &Grid,
    bt108: &Grid,
    bt87: &Grid,
    gamma: f64,
    ranges: &FalseColorRanges,
) -> Result<ChannelStack> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be > 0, got {gamma}")));
    }
    for (name, (lo, hi)) in [
        ("dt_br", ranges.dt_br),
        ("dt_bg", ranges.dt_bg),
        ("bt10.8", ranges.bt108),
    ] {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "empty rescaling range for {name}: [{lo}, {hi}]"
            )));
        }
    }
    let dt_br = bt120.zip_map(bt108, |a, b| a - b)?;
    let dt_bg = bt108.zip_map(bt87, |a, b| a - b)?;
    let red = dt_br.map(|x| rescale(x, ranges.dt_br));
    let green = dt_bg.map(|x| rescale(x, ranges.dt_bg).powf(gamma));
    let blue = bt108.map(|x| rescale(x, ranges.bt108));
    ChannelStack::new(0, None)?
        .with(channel::RED, red)?
        .with(channel::GREEN, green)?
        .with(channel::BLUE, blue)?
        .with(channel::DT_BR, dt_br)?
        .with(channel::DT_BG, dt_bg)
}

/// Spatio-temporal derivatives of a frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSet {
    pub eta_x: Grid,
    pub eta_y: Grid,
    pub eta_t: Grid,
    /// Temporal average of the two frames.
    pub eta: Grid,
}

impl DerivativeSet {
    pub fn new(eta_x: Grid, eta_y: Grid, eta_t: Grid, eta: Grid) -> Result<Self> {
        eta_x.ensure_same_shape(&eta_y)?;
        eta_x.ensure_same_shape(&eta_t)?;
        eta_x.ensure_same_shape(&eta)?;
        Ok(DerivativeSet {
            eta_x,
            eta_y,
            eta_t,
            eta,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.eta.shape()
    }
}

/// Central difference along one axis, one-sided on the outermost ring.
fn axis_difference(g: &Grid, along_cols: bool) -> Grid {
    let (rows, cols) = g.shape();
    Grid::from_fn(rows, cols, |i, j| {
        let (k, len) = if along_cols { (j, cols) } else { (i, rows) };
        let at = |m: usize| if along_cols { g.get(i, m) } else { g.get(m, j) };
        if k == 0 {
            at(1) - at(0)
        } else if k == len - 1 {
            at(k) - at(k - 1)
        } else {
            0.5 * (at(k + 1) - at(k - 1))
        }
    })
}

/// Forward temporal difference and central spatial differences of the
/// two-frame average, with unit pixel spacing and unit frame interval.
pub fn derivatives(eta_a: &Grid, eta_b: &Grid) -> Result<DerivativeSet> {
    eta_a.ensure_same_shape(eta_b)?;
    let (rows, cols) = eta_a.shape();
    if rows < 3 || cols < 3 {
        return Err(Error::InvalidArgument(format!(
            "derivatives need at least a 3x3 grid, got {rows}x{cols}"
        )));
    }
    let eta_t = eta_b.zip_map(eta_a, |b, a| b - a)?;
    let eta = eta_a.zip_map(eta_b, |a, b| 0.5 * (a + b))?;
    let eta_x = axis_difference(&eta, true);
    let eta_y = axis_difference(&eta, false);
    DerivativeSet::new(eta_x, eta_y, eta_t, eta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_examples() {
        let g = Grid::parse_grid_text("grid 1 3\n1.0 2.0 3.0").unwrap();
        assert_eq!(g, Grid::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let z = Grid::parse_grid_text("grid 2 2\n0 0\n0 0").unwrap();
        assert_eq!(z, Grid::zeros(2, 2));
    }

    #[test]
    fn canonical_serialization() {
        let g = Grid::new(1, 1, vec![5.0]).unwrap();
        assert_eq!(g.to_grid_text(), "grid 1 1\n5\n");
        let neg = Grid::new(1, 3, vec![-1.5, -0.25, 1e-300]).unwrap();
        assert_eq!(neg.to_grid_text(), "grid 1 3\n-1.5 -0.25 1e-300\n");
    }

    #[test]
    fn parse_errors_name_lines() {
        let (line, kind) = Grid::parse_grid_text("grd 1 1\n1").unwrap_err();
        assert_eq!(line, 1);
        assert!(matches!(kind, ParseErrorKind::Header(_)));

        let (line, kind) = Grid::parse_grid_text("grid 2 2\n1 2\n3").unwrap_err();
        assert_eq!(line, 3);
        assert_eq!(
            kind,
            ParseErrorKind::Count {
                expected: 4,
                found: 3
            }
        );

        let (line, kind) = Grid::parse_grid_text("grid 1 2\n1\n2\n3").unwrap_err();
        assert_eq!(line, 4);
        assert!(matches!(kind, ParseErrorKind::Count { .. }));

        let (line, kind) = Grid::parse_grid_text("grid 1 2\n1 NaN").unwrap_err();
        assert_eq!(line, 2);
        assert!(matches!(kind, ParseErrorKind::NonFinite(_)));

        let (_, kind) = Grid::parse_grid_text("grid 1 1\n1,5").unwrap_err();
        assert!(matches!(kind, ParseErrorKind::Number(_)));

        let (_, kind) = Grid::parse_grid_text("grid 0 3\n").unwrap_err();
        assert!(matches!(kind, ParseErrorKind::Header(_)));
    }

    #[test]
    fn constructor_rejects_nonfinite() {
        assert!(Grid::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Grid::new(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn false_color_identities() {
        let bt = Grid::filled(2, 2, 280.0);
        let out = false_color(&bt, &bt, &bt, SFI_GAMMA, &FalseColorRanges::default()).unwrap();
        assert_eq!(out.get(channel::DT_BR).unwrap(), &Grid::zeros(2, 2));

        // dt_bg at the midpoint of [0, 15] with gamma 1 gives G = 0.5.
        let b87 = Grid::filled(2, 2, 280.0 - 7.5);
        let out = false_color(&bt, &bt, &b87, 1.0, &FalseColorRanges::default()).unwrap();
        assert_eq!(out.get(channel::GREEN).unwrap().get(0, 0), 0.5);

        assert!(false_color(&bt, &bt, &bt, 0.0, &FalseColorRanges::default()).is_err());
        let small = Grid::zeros(1, 2);
        assert!(false_color(&bt, &small, &bt, 1.0, &FalseColorRanges::default()).is_err());
    }

    #[test]
    fn false_color_hand_values() {
        // Evaluated by hand: R = (dBR + 4) / 6, G = (dBG / 15)^0.4, B = (BT10.8 - 261) / 28,
        // each clamped to [0, 1].
        let bt120 = Grid::new(2, 2, vec![281.0, 270.0, 300.0, 262.0]).unwrap();
        let bt108 = Grid::new(2, 2, vec![280.0, 272.0, 296.0, 261.0]).unwrap();
        let bt87 = Grid::new(2, 2, vec![275.0, 272.0, 270.0, 263.0]).unwrap();
        let out = false_color(&bt120, &bt108, &bt87, 0.4, &FalseColorRanges::default()).unwrap();
        let r = out.get(channel::RED).unwrap();
        let g = out.get(channel::GREEN).unwrap();
        let b = out.get(channel::BLUE).unwrap();
        let expect_r = [5.0 / 6.0, 2.0 / 6.0, 1.0, 5.0 / 6.0];
        let expect_g = [(5.0f64 / 15.0).powf(0.4), 0.0, 1.0, 0.0];
        let expect_b = [19.0 / 28.0, 11.0 / 28.0, 1.0, 0.0];
        for k in 0..4 {
            assert!((r.data()[k] - expect_r[k]).abs() < 1e-15, "R[{k}]");
            assert!((g.data()[k] - expect_g[k]).abs() < 1e-15, "G[{k}]");
            assert!((b.data()[k] - expect_b[k]).abs() < 1e-15, "B[{k}]");
        }
        assert_eq!(out.get(channel::DT_BG).unwrap().data(), &[5.0, 0.0, 26.0, -2.0]);
    }

    #[test]
    fn derivatives_of_constant_and_ramp() {
        let c = Grid::filled(4, 5, 3.25);
        let d = derivatives(&c, &c).unwrap();
        assert!(d.eta_t.data().iter().all(|&v| v == 0.0));
        assert!(d.eta_x.data().iter().all(|&v| v == 0.0));
        assert!(d.eta_y.data().iter().all(|&v| v == 0.0));
        assert_eq!(d.eta, c);

        let ramp = Grid::from_fn(5, 6, |_, j| 1.0 + 0.5 * j as f64);
        let d = derivatives(&ramp, &ramp).unwrap();
        for i in 0..5 {
            for j in 0..6 {
                assert_eq!(d.eta_x.get(i, j), 0.5);
            }
        }
    }

    #[test]
    fn derivatives_reject_small_grids() {
        let g = Grid::zeros(2, 5);
        assert!(derivatives(&g, &g).is_err());
        assert!(derivatives(&Grid::zeros(3, 3), &Grid::zeros(3, 4)).is_err());
    }

    #[test]
    fn stack_rejects_mismatched_channels() {
        let mut s = ChannelStack::new(0, Some(12.0)).unwrap();
        s.insert("a", Grid::zeros(2, 2)).unwrap();
        assert!(s.insert("b", Grid::zeros(2, 3)).is_err());
        // Replacing the only channel with a new shape is allowed.
        s.insert("a", Grid::zeros(3, 3)).unwrap();
        assert!(s.insert("has space", Grid::zeros(3, 3)).is_err());
        assert!(ChannelStack::new(0, Some(24.0)).is_err());
        assert!(matches!(s.require("M"), Err(Error::MissingLayer(n)) if n == "M"));
    }

    #[test]
    fn stack_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = ChannelStack::new(7, Some(9.5))
            .unwrap()
            .with("R", Grid::from_fn(3, 2, |i, j| (i * 2 + j) as f64 * 0.1))
            .unwrap()
            .with("E", Grid::filled(3, 2, 0.9))
            .unwrap();
        s.save(dir.path()).unwrap();
        assert_eq!(ChannelStack::load(dir.path()).unwrap(), s);

        let none = ChannelStack::new(-3, None).unwrap().with("x", Grid::zeros(1, 1)).unwrap();
        none.save(dir.path().join("n")).unwrap();
        assert_eq!(ChannelStack::load(dir.path().join("n")).unwrap(), none);
    }
}
