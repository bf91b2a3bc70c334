//! Flow error and classification accuracy reports.

use std::fmt::Write as _;

use crate::detect::LabeledSample;
use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::raster::{format_f64, Grid};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowErrorReport {
    /// Degrees.
    pub mean_abs_angular_error: f64,
    /// Pixels per frame.
    pub mean_abs_magnitude_error: f64,
    pub angular_error: Grid,
    pub magnitude_error: Grid,
    pub mask: Grid,
    pub evaluated: usize,
}

impl FlowErrorReport {
    /// Flat `key value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mean_abs_angular_error {}", format_f64(self.mean_abs_angular_error));
        let _ = writeln!(s, "mean_abs_magnitude_error {}", format_f64(self.mean_abs_magnitude_error));
        let _ = writeln!(s, "evaluated_pixels {}", self.evaluated);
        s
    }
}

/// Angle between two flow vectors in degrees; 0 if both are zero, 90 if
/// exactly one is.
pub fn angular_error(est: (f64, f64), truth: (f64, f64)) -> f64 {
    let ne = est.0.hypot(est.1);
    let nt = truth.0.hypot(truth.1);
    match (ne == 0.0, nt == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 90.0,
        _ => {
            // Same angle as arccos of the normalized dot product, without its
            // loss of precision near 0 and 180 degrees.
            let dot = est.0 * truth.0 + est.1 * truth.1;
            let cross = est.0 * truth.1 - est.1 * truth.0;
            cross.abs().atan2(dot).to_degrees()
        }
    }
}

pub fn magnitude_error(est: (f64, f64), truth: (f64, f64)) -> f64 {
    (est.0.hypot(est.1) - truth.0.hypot(truth.1)).abs()
}

/// Errors over pixels where `mask` is nonzero. Unmasked pixels are 0 in the
/// per-pixel grids.
pub fn flow_errors(est: &FlowField, truth: &FlowField, mask: &Grid) -> Result<FlowErrorReport> {
    est.u.ensure_same_shape(&truth.u)?;
    est.u.ensure_same_shape(mask)?;
    if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::InvalidArgument("mask must be binary".into()));
    }
    let (rows, cols) = mask.shape();
    let mut ang = Grid::zeros(rows, cols);
    let mut mag = Grid::zeros(rows, cols);
    let (mut sa, mut sm, mut count) = (0.0, 0.0, 0usize);
    for i in 0..rows {
        for j in 0..cols {
            if mask.get(i, j) == 0.0 {
                continue;
            }
            let e = (est.u.get(i, j), est.v.get(i, j));
            let t = (truth.u.get(i, j), truth.v.get(i, j));
            let (a, m) = (angular_error(e, t), magnitude_error(e, t));
            ang.set(i, j, a);
            mag.set(i, j, m);
            sa += a;
            sm += m;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("evaluation mask is empty".into()));
    }
    Ok(FlowErrorReport {
        mean_abs_angular_error: sa / count as f64,
        mean_abs_magnitude_error: sm / count as f64,
        angular_error: ang,
        magnitude_error: mag,
        mask: mask.clone(),
        evaluated: count,
    })
}

/// Correct counts for one class within a stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub correct: usize,
    pub total: usize,
}

impl ClassCounts {
    /// `None` for an empty stratum.
    pub fn fraction(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += usize::from(ok);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    /// Hours covered, `[start, end)`.
    pub hours: (f64, f64),
    pub dusty: ClassCounts,
    pub pristine: ClassCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub strata: Vec<Stratum>,
    pub dusty: ClassCounts,
    pub pristine: ClassCounts,
}

impl ClassReport {
    pub fn overall_accuracy(&self) -> Option<f64> {
        let total = self.dusty.total + self.pristine.total;
        (total > 0).then(|| (self.dusty.correct + self.pristine.correct) as f64 / total as f64)
    }

    /// Flat `key value` lines; undefined fractions print as `na`.
    pub fn to_text(&self) -> String {
        let frac = |c: &ClassCounts| c.fraction().map_or_else(|| "na".to_string(), format_f64);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "overall_accuracy {}",
            self.overall_accuracy().map_or_else(|| "na".to_string(), format_f64)
        );
        let _ = writeln!(s, "dusty_correct {}", frac(&self.dusty));
        let _ = writeln!(s, "dusty_count {}", self.dusty.total);
        let _ = writeln!(s, "pristine_correct {}", frac(&self.pristine));
        let _ = writeln!(s, "pristine_count {}", self.pristine.total);
        for (k, st) in self.strata.iter().enumerate() {
            let _ = writeln!(s, "bucket{k}_hours {}-{}", format_f64(st.hours.0), format_f64(st.hours.1));
            let _ = writeln!(s, "bucket{k}_dusty_correct {}", frac(&st.dusty));
            let _ = writeln!(s, "bucket{k}_dusty_count {}", st.dusty.total);
            let _ = writeln!(s, "bucket{k}_pristine_correct {}", frac(&st.pristine));
            let _ = writeln!(s, "bucket{k}_pristine_count {}", st.pristine.total);
        }
        s
    }
}

/// Accuracy split by true class, overall and in `hour_buckets` equal-width
/// buckets over `[0, 24)`. `pred` is indexed by [`LabeledSample::pixel`].
pub fn class_report(pred: &[bool], labels: &[LabeledSample], hour_buckets: usize) -> Result<ClassReport> {
    if hour_buckets == 0 {
        return Err(Error::InvalidArgument("need at least one hour bucket".into()));
    }
    let width = 24.0 / hour_buckets as f64;
    let mut strata: Vec<Stratum> = (0..hour_buckets)
        .map(|k| Stratum {
            hours: (k as f64 * width, (k + 1) as f64 * width),
            dusty: ClassCounts::default(),
            pristine: ClassCounts::default(),
        })
        .collect();
    let mut dusty = ClassCounts::default();
    let mut pristine = ClassCounts::default();
    for s in labels {
        let &p = pred.get(s.pixel).ok_or(Error::IndexOutOfRange {
            index: s.pixel,
            n: pred.len(),
        })?;
        let ok = p == s.label;
        let b = ((s.hour / width).floor() as usize).min(hour_buckets - 1);
        if s.label {
            dusty.add(ok);
            strata[b].dusty.add(ok);
        } else {
            pristine.add(ok);
            strata[b].pristine.add(ok);
        }
    }
    Ok(ClassReport {
        strata,
        dusty,
        pristine,
    })
}

/// Binary grid cells as booleans. Errors on values other than 0 and 1.
pub fn grid_to_predictions(g: &Grid) -> Result<Vec<bool>> {
    g.data()
        .iter()
        .map(|&v| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(Error::InvalidArgument(format!("non-binary prediction {v}"))),
        })
        .collect()
}
