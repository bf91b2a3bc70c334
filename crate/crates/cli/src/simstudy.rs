//! The HS versus ICE simulation study over an alpha grid.

use std::fmt::Write as _;

use dustflow::flow::{build_system, sweep_alpha, BayesOptions, FlowField, FlowMethod, PosteriorOptions};
use dustflow::metrics::{flow_errors, FlowErrorReport};
use dustflow::raster::{derivatives, format_f64};
use dustflow::synth::{generate_plume, GroundTruth, PlumeScenario};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyConfig {
    pub seed: u64,
    pub sigma2: f64,
    /// Mask threshold as a fraction of the plume amplitude.
    pub mask_fraction: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            seed: 7,
            sigma2: 1.0,
            mask_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub method: FlowMethod,
    /// `None` for the model-averaged estimate.
    pub alpha: Option<f64>,
    pub mean_abs_angular_error: f64,
    pub mean_abs_magnitude_error: f64,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    /// Per method: one row per grid value, then the Bayesian row.
    pub rows: Vec<StudyRow>,
    pub truth: GroundTruth,
    /// Bayesian estimate and its errors for the first frame pair, per method.
    pub first_pair: Vec<(FlowMethod, FlowField, FlowErrorReport)>,
}

impl StudyResult {
    pub fn row(&self, method: FlowMethod, alpha: Option<f64>) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.method == method && r.alpha == alpha)
    }

    pub fn fixed(&self, method: FlowMethod) -> impl Iterator<Item = &StudyRow> {
        self.rows.iter().filter(move |r| r.method == method && r.alpha.is_some())
    }

    /// Tab-separated table with a header line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("method\talpha\tmean_abs_angular_error\tmean_abs_magnitude_error\n");
        for r in &self.rows {
            let alpha = r.alpha.map_or_else(|| "bayes".to_string(), format_f64);
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                r.method,
                alpha,
                format_f64(r.mean_abs_angular_error),
                format_f64(r.mean_abs_magnitude_error)
            );
        }
        s
    }
}

/// Runs HS and ICE on every consecutive frame pair. Errors are pooled over
/// pairs, weighting each pair by its number of masked pixels.
pub fn run_study(sc: &PlumeScenario, grid: &[f64], cfg: &StudyConfig) -> dustflow::Result<StudyResult> {
    let truth = generate_plume(sc, cfg.seed)?;
    let opts = BayesOptions {
        posterior: PosteriorOptions {
            variances: false,
            ..PosteriorOptions::default()
        },
        ..BayesOptions::default()
    };
    let pairs: Vec<usize> = (0..sc.n_frames - 1).collect();
    let mut rows = Vec::new();
    let mut first_pair = Vec::new();
    for method in [FlowMethod::Hs, FlowMethod::Ice] {
        let per_pair = pairs
            .par_iter()
            .map(|&k| {
                let d = derivatives(&truth.frames[k], &truth.frames[k + 1])?;
                let sys = build_system(method, &d, cfg.sigma2)?;
                let (fits, summary) = sweep_alpha(&sys, grid, None, &opts)?;
                let mask = truth.pair_mask(k, sc.amplitude, cfg.mask_fraction)?;
                let mut reports = fits
                    .iter()
                    .map(|f| flow_errors(&f.flow, &truth.true_flow, &mask))
                    .collect::<dustflow::Result<Vec<_>>>()?;
                reports.push(flow_errors(&summary.mean, &truth.true_flow, &mask)?);
                Ok((summary.mean, reports))
            })
            .collect::<dustflow::Result<Vec<_>>>()?;
        for j in 0..=grid.len() {
            let (mut sa, mut sm, mut n) = (0.0, 0.0, 0usize);
            for (_, reports) in &per_pair {
                let r = &reports[j];
                sa += r.mean_abs_angular_error * r.evaluated as f64;
                sm += r.mean_abs_magnitude_error * r.evaluated as f64;
                n += r.evaluated;
            }
            rows.push(StudyRow {
                method,
                alpha: grid.get(j).copied(),
                mean_abs_angular_error: sa / n as f64,
                mean_abs_magnitude_error: sm / n as f64,
            });
        }
        let (mean, mut reports) = per_pair.into_iter().next().expect("at least one pair");
        first_pair.push((method, mean, reports.pop().expect("bayes report")));
    }
    Ok(StudyResult {
        rows,
        truth,
        first_pair,
    })
}
