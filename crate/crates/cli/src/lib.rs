//! Command-line front end for `dustflow`.
//!
//! Exit codes: 0 on success, 2 for usage and configuration errors, 3 for
//! data errors (unreadable or malformed inputs, failed numerics).

pub mod render;
pub mod simstudy;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dustflow::detect::{
    classify, load_samples, lsm_fit_with, lda_fit, threshold_detect, DetectorModel, Emissivity,
    LabeledSample, LsmConfig, ThresholdRule,
};
use dustflow::flow::{bayes_flow, build_system, default_alpha_grid, log_grid, FlowField, FlowMethod};
use dustflow::metrics::{class_report, grid_to_predictions};
use dustflow::raster::{channel, derivatives, format_f64, load_grid, save_grid, ChannelStack};
use dustflow::synth::{generate_labeled, generate_plume, labeled_frame_stack, PlumeScenario};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] dustflow::Error),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Write { .. } => 3,
        }
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Parser)]
#[command(name = "dustflow", version, about = "Dust detection and aerosol flow estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic plume sequence and, optionally, labeled pixels.
    Synth(SynthArgs),
    /// Run a dust detector on a channel stack directory.
    Detect(DetectArgs),
    /// Estimate flow between two frames.
    Flow(FlowArgs),
    /// Compare HS and ICE on a synthetic sequence across an alpha grid.
    Simstudy(SimstudyArgs),
    /// Render a grid as a PPM heatmap.
    Render(RenderArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorKind {
    Ash,
    #[value(name = "ash-no108")]
    AshNo108,
    Lda,
    Lsm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Hs,
    Ice,
}

impl From<MethodArg> for FlowMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Hs => FlowMethod::Hs,
            MethodArg::Ice => FlowMethod::Ice,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario file (key=value); defaults apply to missing keys.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Evaluation mask threshold as a fraction of the amplitude.
    #[arg(long, default_value_t = 0.01)]
    pub mask: f64,
    /// Also write labeled samples and per-frame stacks.
    #[arg(long)]
    pub labels: bool,
    /// Plume level above which a pixel is labeled dusty.
    #[arg(long, default_value_t = 0.5)]
    pub cutoff: f64,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Channel stack directory.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub detector: DetectorKind,
    /// Fitted model file (lda, lsm).
    #[arg(long, conflicts_with = "samples")]
    pub model: Option<PathBuf>,
    /// Labeled samples to fit the model from (lda, lsm).
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Where to save a model fitted from --samples.
    #[arg(long, requires = "samples")]
    pub model_out: Option<PathBuf>,
    /// LSM bins per axis.
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    /// Comma-separated LSM prior scales.
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    /// Probability above which a pixel is classified dusty.
    #[arg(long, default_value_t = 0.5)]
    pub cutoff: f64,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// The two frames, earlier first.
    #[arg(long, num_args = 1, required = true)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Ice)]
    pub method: MethodArg,
    /// Fixed smoothness value.
    #[arg(long, conflicts_with = "alpha_grid")]
    pub alpha: Option<f64>,
    /// Log-spaced grid `lo:hi:n` (optionally `lo:hi:n:log`) to average over.
    #[arg(long)]
    pub alpha_grid: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
}

#[derive(Debug, Args)]
pub struct SimstudyArgs {
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub alpha_grid: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0.01)]
    pub mask: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Grid file.
    #[arg(long)]
    pub input: PathBuf,
    /// PPM file.
    #[arg(long)]
    pub output: PathBuf,
    /// Flow directory holding `u.grid` and `v.grid` to draw as arrows.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub stride: usize,
    /// Colour range `lo:hi`; defaults to the grid's min and max.
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<String>,
}

/// Parses `lo:hi:n` or `lo:hi:n:log` into a log-spaced grid.
pub fn parse_alpha_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("bad --alpha-grid {spec:?}, expected lo:hi:n"));
    let parts: Vec<&str> = spec.split(':').collect();
    let parts = match parts.as_slice() {
        [a, b, n] | [a, b, n, "log"] => [*a, *b, *n],
        _ => return Err(bad()),
    };
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    log_grid(lo, hi, n).map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_range(spec: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Usage(format!("bad --range {spec:?}, expected lo:hi with lo < hi"));
    let (a, b) = spec.split_once(':').ok_or_else(bad)?;
    let (lo, hi): (f64, f64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{name} must be positive and finite, got {v}")))
    }
}

fn load_scenario(path: Option<&Path>) -> Result<PlumeScenario, CliError> {
    let sc = match path {
        Some(p) => PlumeScenario::load(p)?,
        None => PlumeScenario::default(),
    };
    sc.validate()?;
    Ok(sc)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Detect(a) => cmd_detect(&a),
        Command::Flow(a) => cmd_flow(&a),
        Command::Simstudy(a) => cmd_simstudy(&a),
        Command::Render(a) => cmd_render(&a),
    }
}

/// Parses `std::env::args`, runs, reports errors on stderr and returns the
/// process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<(), CliError> {
    if !(a.mask >= 0.0 && a.mask.is_finite()) {
        return Err(CliError::Usage(format!("--mask must be >= 0, got {}", a.mask)));
    }
    let sc = load_scenario(a.scenario.as_deref())?;
    let labeled = if a.labels {
        Some(generate_labeled(&sc, a.seed, a.cutoff)?)
    } else {
        None
    };
    let gt = generate_plume(&sc, a.seed)?;
    if gt.margin_warning {
        eprintln!("warning: plume comes within 3 sigma of the border");
    }
    create_dir(&a.output)?;
    write_file(&a.output.join("scenario.txt"), sc.to_text().as_bytes())?;
    for (k, f) in gt.frames.iter().enumerate() {
        save_grid(f, a.output.join(format!("frame_{k}.grid")))?;
    }
    for k in 0..sc.n_frames - 1 {
        save_grid(&gt.pair_mask(k, sc.amplitude, a.mask)?, a.output.join(format!("mask_{k}.grid")))?;
    }
    save_grid(&gt.true_flow.u, a.output.join("true_u.grid"))?;
    save_grid(&gt.true_flow.v, a.output.join("true_v.grid"))?;
    if let Some(samples) = labeled {
        dustflow::detect::save_samples(&samples, a.output.join("samples.txt"))?;
        for k in 0..sc.n_frames {
            labeled_frame_stack(&sc, &samples, k)?.save(a.output.join(format!("stack_{k}")))?;
        }
    }
    Ok(())
}

fn fit_model(a: &DetectArgs, samples: &[LabeledSample]) -> Result<DetectorModel, CliError> {
    Ok(match a.detector {
        DetectorKind::Lda => DetectorModel::Lda(lda_fit(samples)?),
        DetectorKind::Lsm => {
            let mut cfg = LsmConfig::with_bins(a.bins);
            if let Some(g) = &a.rho_grid {
                cfg.rho_grid.clone_from(g);
            }
            DetectorModel::Lsm(lsm_fit_with(samples, &cfg)?)
        }
        DetectorKind::Ash | DetectorKind::AshNo108 => unreachable!("threshold detectors have no model"),
    })
}

pub fn cmd_detect(a: &DetectArgs) -> Result<(), CliError> {
    let probabilistic = matches!(a.detector, DetectorKind::Lda | DetectorKind::Lsm);
    if probabilistic && a.model.is_none() && a.samples.is_none() {
        return Err(CliError::Usage("lda and lsm need --model or --samples".into()));
    }
    if !probabilistic && (a.model.is_some() || a.samples.is_some()) {
        return Err(CliError::Usage("threshold detectors take no model".into()));
    }
    if !(0.0..=1.0).contains(&a.cutoff) {
        return Err(CliError::Usage(format!("--cutoff must lie in [0, 1], got {}", a.cutoff)));
    }
    let stack = ChannelStack::load(&a.input)?;
    let mask = match a.detector {
        DetectorKind::Ash => threshold_detect(&stack, &ThresholdRule::default())?,
        DetectorKind::AshNo108 => threshold_detect(&stack, &ThresholdRule::without_bt108())?,
        DetectorKind::Lda | DetectorKind::Lsm => {
            let model = match (&a.model, &a.samples) {
                (Some(path), _) => {
                    let m = DetectorModel::load(path)?;
                    let kind_ok = matches!(
                        (&m, a.detector),
                        (DetectorModel::Lda(_), DetectorKind::Lda) | (DetectorModel::Lsm(_), DetectorKind::Lsm)
                    );
                    if !kind_ok {
                        return Err(CliError::Usage(format!(
                            "model in {} does not match --detector",
                            path.display()
                        )));
                    }
                    m
                }
                (None, Some(path)) => {
                    let m = fit_model(a, &load_samples(path)?)?;
                    if let Some(out) = &a.model_out {
                        m.save(out)?;
                    }
                    m
                }
                (None, None) => unreachable!("checked above"),
            };
            let prob = model.predict(&stack)?;
            create_dir(&a.output)?;
            save_grid(&prob, a.output.join("probability.grid"))?;
            classify(&prob, a.cutoff)
        }
    };
    create_dir(&a.output)?;
    save_grid(&mask, a.output.join("mask.grid"))?;
    if let Some(labels) = stack.get(channel::LABEL) {
        let hour = stack.hour_of_day.unwrap_or(0.0);
        let samples: Vec<LabeledSample> = grid_to_predictions(labels)?
            .into_iter()
            .enumerate()
            .map(|(pixel, label)| LabeledSample {
                pixel,
                intensity: [0.0; 3],
                emissivity: Emissivity::Scalar(0.0),
                label,
                hour,
            })
            .collect();
        let report = class_report(&grid_to_predictions(&mask)?, &samples, 1)?;
        write_file(&a.output.join("report.txt"), report.to_text().as_bytes())?;
    }
    Ok(())
}

fn flow_summary(method: FlowMethod, sigma2: f64, s: &dustflow::flow::PosteriorSummary) -> String {
    let join = |v: &[f64]| v.iter().map(|&x| format_f64(x)).collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    let _ = writeln!(out, "method {method}");
    let _ = writeln!(out, "sigma2 {}", format_f64(sigma2));
    let _ = writeln!(out, "alpha_grid {}", join(&s.alpha_grid));
    let _ = writeln!(out, "log_marginals {}", join(&s.log_marginals));
    let _ = writeln!(out, "alpha_weights {}", join(&s.alpha_weights));
    let _ = writeln!(out, "map_alpha {}", format_f64(s.map_alpha));
    let _ = writeln!(out, "jitter {}", join(&s.jitter));
    out
}

pub fn cmd_flow(a: &FlowArgs) -> Result<(), CliError> {
    if a.input.len() != 2 {
        return Err(CliError::Usage(format!("flow needs exactly two --input frames, got {}", a.input.len())));
    }
    positive("sigma2", a.sigma2)?;
    let grid = match (a.alpha, &a.alpha_grid) {
        (Some(alpha), _) => {
            positive("alpha", alpha)?;
            vec![alpha]
        }
        (None, Some(spec)) => parse_alpha_grid(spec)?,
        (None, None) => default_alpha_grid(),
    };
    let (f0, f1) = (load_grid(&a.input[0])?, load_grid(&a.input[1])?);
    let d = derivatives(&f0, &f1)?;
    let method = FlowMethod::from(a.method);
    let sys = build_system(method, &d, a.sigma2)?;
    let summary = bayes_flow(&sys, &sys.lattice(), &grid, None)?;
    create_dir(&a.output)?;
    let FlowField { u, v, var_u, var_v } = &summary.mean;
    save_grid(u, a.output.join("u.grid"))?;
    save_grid(v, a.output.join("v.grid"))?;
    if let (Some(vu), Some(vv)) = (var_u, var_v) {
        save_grid(vu, a.output.join("var_u.grid"))?;
        save_grid(vv, a.output.join("var_v.grid"))?;
    }
    write_file(&a.output.join("summary.txt"), flow_summary(method, a.sigma2, &summary).as_bytes())
}

pub fn cmd_simstudy(a: &SimstudyArgs) -> Result<(), CliError> {
    positive("sigma2", a.sigma2)?;
    if !(a.mask >= 0.0 && a.mask.is_finite()) {
        return Err(CliError::Usage(format!("--mask must be >= 0, got {}", a.mask)));
    }
    let grid = match &a.alpha_grid {
        Some(spec) => parse_alpha_grid(spec)?,
        None => default_alpha_grid(),
    };
    let sc = load_scenario(a.scenario.as_deref())?;
    let cfg = simstudy::StudyConfig {
        seed: a.seed,
        sigma2: a.sigma2,
        mask_fraction: a.mask,
    };
    let res = simstudy::run_study(&sc, &grid, &cfg)?;
    create_dir(&a.output)?;
    write_file(&a.output.join("simstudy.tsv"), res.to_tsv().as_bytes())?;
    render::heatmap(&res.truth.frames[0], None).write_ppm(&a.output.join("frame_0.ppm"))?;
    for (method, mean, report) in &res.first_pair {
        render::heatmap(&report.angular_error, Some((0.0, 90.0)))
            .write_ppm(&a.output.join(format!("{method}_bayes_angular_error.ppm")))?;
        let speed = mean.u.zip_map(&mean.v, f64::hypot)?;
        let mut img = render::heatmap(&speed, None);
        render::overlay_flow(&mut img, mean, 8)?;
        img.write_ppm(&a.output.join(format!("{method}_bayes_flow.ppm")))?;
    }
    Ok(())
}

pub fn cmd_render(a: &RenderArgs) -> Result<(), CliError> {
    let range = a.range.as_deref().map(parse_range).transpose()?;
    if a.stride == 0 {
        return Err(CliError::Usage("--stride must be positive".into()));
    }
    let g = load_grid(&a.input)?;
    let mut img = render::heatmap(&g, range);
    if let Some(dir) = &a.overlay {
        let flow = FlowField::new(load_grid(dir.join("u.grid"))?, load_grid(dir.join("v.grid"))?)?;
        render::overlay_flow(&mut img, &flow, a.stride)?;
    }
    img.write_ppm(&a.output)
}
