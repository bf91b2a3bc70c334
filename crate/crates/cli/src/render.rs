//! Binary PPM heatmaps and flow-arrow overlays.
//!
//! The colormap is piecewise linear through five anchors, evaluated at
//! `t = (x - lo) / (hi - lo)` clamped to `[0, 1]`:
//!
//! | t    | RGB            |
//! |------|----------------|
//! | 0    | 68, 1, 84      |
//! | 0.25 | 59, 82, 139    |
//! | 0.5  | 33, 145, 140   |
//! | 0.75 | 94, 201, 98    |
//! | 1    | 253, 231, 37   |
//!
//! Channels are rounded to the nearest integer. A degenerate range maps every
//! pixel to the `t = 0` colour.

use std::path::Path;

use dustflow::flow::FlowField;
use dustflow::raster::Grid;

use crate::CliError;

pub const ANCHORS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

pub const ARROW: [u8; 3] = [255, 255, 255];
pub const ARROW_TAIL: [u8; 3] = [0, 0, 0];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<[u8; 3]>,
}

impl Image {
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().flatten());
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), CliError> {
        crate::write_file(path, &self.to_ppm())
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = c;
        }
    }
}

pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let s = t * 4.0;
    let k = (s.floor() as usize).min(3);
    let f = s - k as f64;
    let (a, b) = (ANCHORS[k], ANCHORS[k + 1]);
    [0, 1, 2].map(|c| (a[c] + f * (b[c] - a[c])).round() as u8)
}

/// Heatmap over `range`, or over the grid's own min/max.
pub fn heatmap(grid: &Grid, range: Option<(f64, f64)>) -> Image {
    let (lo, hi) = range.unwrap_or_else(|| grid.min_max());
    let span = hi - lo;
    Image {
        width: grid.cols(),
        height: grid.rows(),
        pixels: grid
            .data()
            .iter()
            .map(|&x| colormap(if span > 0.0 { (x - lo) / span } else { 0.0 }))
            .collect(),
    }
}

/// Draws one arrow per `stride x stride` block, anchored at the block centre.
/// Arrows are scaled so the longest spans `0.9 * stride` pixels.
pub fn overlay_flow(img: &mut Image, flow: &FlowField, stride: usize) -> Result<(), CliError> {
    if stride == 0 {
        return Err(CliError::Usage("--stride must be positive".into()));
    }
    let (rows, cols) = flow.shape();
    if (rows, cols) != (img.height, img.width) {
        return Err(CliError::Data(dustflow::Error::Dimension {
            expected: format!("{}x{}", img.height, img.width),
            got: format!("{rows}x{cols}"),
        }));
    }
    let anchors: Vec<(usize, usize)> = (stride / 2..rows)
        .step_by(stride)
        .flat_map(|i| (stride / 2..cols).step_by(stride).map(move |j| (i, j)))
        .collect();
    let longest = anchors
        .iter()
        .map(|&(i, j)| flow.u.get(i, j).hypot(flow.v.get(i, j)))
        .fold(0.0f64, f64::max);
    let scale = if longest > 0.0 { 0.9 * stride as f64 / longest } else { 0.0 };
    for (i, j) in anchors {
        let (dx, dy) = (flow.u.get(i, j) * scale, flow.v.get(i, j) * scale);
        let steps = dx.abs().max(dy.abs()).ceil() as i64;
        for s in 1..=steps {
            let f = s as f64 / steps as f64;
            img.put(
                (j as f64 + f * dx).round() as i64,
                (i as f64 + f * dy).round() as i64,
                ARROW,
            );
        }
        img.put(j as i64, i as i64, ARROW_TAIL);
    }
    Ok(())
}
