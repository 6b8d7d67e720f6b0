//! `lfalloc` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 unparsable or incomplete input,
//! 3 R-D model failure, 4 infeasible budget, 5 metric domain error.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::allocator::{allocate, solve_step1, AllocError, AllocationResult, SolverOptions};
use crate::encodesim::{run_to_convergence, Baseline, MockEncoder, MockScene, SimError, SimulationSettings};
use crate::formats::{
    read_curve, read_frame_measurements, read_samples, sibling_path, write_models, write_rates, write_trace,
    AllocationDiagnostics, FormatError, MetricsReport, ModelRow, ProblemFile, SceneFile, TraceSummary,
};
use crate::lightfield::{unify_weights, FrameCoord, FrameGrid, LightfieldError};
use crate::metrics::{bd_rate, cost, wpsnr, DistortionSet, MetricsError};
use crate::rdmodel::{fit_power_model, RdModelError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_MODEL: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;
pub const EXIT_METRIC: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "lfalloc", version, about = "Frame-level bit allocation for light-field pseudo-sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit per-frame power-law R-D models to sample CSV rows.
    Fit {
        samples: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Solve the allocation problem described by a problem file.
    Allocate {
        problem: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        min_rate: Option<f64>,
        /// Stop after the weighted-distortion step (ignores lambda).
        #[arg(long)]
        step1_only: bool,
        /// Iteration cap for the consistency step.
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        #[command(flatten)]
        out: Output,
    },
    /// Run the iterative encode/allocate loop on a mock encoder.
    Simulate(SimulateArgs),
    /// Cost breakdown and weighted PSNR for per-frame SSE values.
    Metrics {
        frames: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Pixels per frame; the PSNR normalisation uses all frames.
        #[arg(long, default_value_t = crate::encodesim::DEFAULT_FRAME_PIXELS)]
        frame_pixels: usize,
        #[command(flatten)]
        out: Output,
    },
    /// BD-rate of a test curve against an anchor curve.
    Bdrate {
        anchor: PathBuf,
        test: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Print the spiral coding order of a grid.
    Spiral {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineArg {
    Uniform,
    WeightSquared,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene file; a synthetic scene is generated when omitted.
    pub scene: Option<PathBuf>,
    /// Synthetic grid size as WIDTHxHEIGHT.
    #[arg(long, default_value = "5x5")]
    pub synthetic: String,
    /// Reference coupling strength of the synthetic scene.
    #[arg(long, default_value_t = 0.2)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Total bits; defaults to the anchor rate times the frame count.
    #[arg(long)]
    pub budget: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub lambda: f64,
    #[arg(long)]
    pub min_rate: Option<f64>,
    #[arg(long, default_value_t = 2)]
    pub k_sweep: u32,
    #[arg(long, default_value_t = 8)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value_t = BaselineArg::Uniform)]
    pub baseline: BaselineArg,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn parse_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::new(EXIT_PARSE, format!("{}: {e}", path.display()))
}

fn metrics_code(e: &MetricsError) -> i32 {
    match e {
        MetricsError::IncompleteInput { .. } | MetricsError::ShapeMismatch(..) => EXIT_PARSE,
        _ => EXIT_METRIC,
    }
}

fn alloc_err(e: AllocError<f64>) -> CliError {
    let code = match &e {
        AllocError::InfeasibleBudget { .. } => EXIT_INFEASIBLE,
        AllocError::Model(_) => EXIT_MODEL,
        AllocError::MissingFrame { .. } | AllocError::InvalidProblem(_) => EXIT_PARSE,
        AllocError::Metrics(m) => metrics_code(m),
        AllocError::NotConverged { .. } => EXIT_OTHER,
    };
    CliError::new(code, e.to_string())
}

fn sim_err(e: SimError) -> CliError {
    match e {
        SimError::Alloc(a) => alloc_err(a),
        SimError::Model { .. } => CliError::new(EXIT_MODEL, e.to_string()),
        SimError::Metrics(ref m) => CliError::new(metrics_code(m), e.to_string()),
        SimError::InvalidSettings(_) => CliError::new(EXIT_PARSE, e.to_string()),
        SimError::Encode(_) => CliError::new(EXIT_OTHER, e.to_string()),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::new(EXIT_OTHER, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::new(EXIT_OTHER, format!("{}: {e}", path.display())))
}

/// Writes `main` to the output path and each `(suffix, text)` next to it, or
/// everything to stdout.
fn emit(out: &Output, main: &str, siblings: &[(&str, String)]) -> Result<(), CliError> {
    match &out.output {
        Some(path) => {
            write(path, main)?;
            for (suffix, text) in siblings {
                write(&sibling_path(path, suffix), text)?;
            }
        }
        None => {
            print!("{main}");
            for (_, text) in siblings {
                print!("{text}");
            }
        }
    }
    Ok(())
}

/// Four significant digits, for human-facing summaries.
pub fn sig4(x: f64) -> String {
    if !x.is_finite() || x == 0.0 {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor();
    if (-3.0..5.0).contains(&mag) {
        format!("{:.*}", (3.0 - mag).max(0.0) as usize, x)
    } else {
        format!("{x:.3e}")
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { samples, out } => cmd_fit(&samples, &out),
        Command::Allocate { problem, lambda, budget, min_rate, step1_only, max_iters, out } => {
            cmd_allocate(&problem, lambda, budget, min_rate, step1_only, max_iters, &out)
        }
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Metrics { frames, lambda, frame_pixels, out } => cmd_metrics(&frames, lambda, frame_pixels, &out),
        Command::Bdrate { anchor, test, out } => cmd_bdrate(&anchor, &test, &out),
        Command::Spiral { width, height, out } => {
            let grid = FrameGrid::spiral(width, height).map_err(|e| CliError::new(EXIT_PARSE, e.to_string()))?;
            emit(&out, &grid.to_text(), &[])
        }
    }
}

fn cmd_fit(path: &Path, out: &Output) -> Result<(), CliError> {
    let groups = read_samples(&read(path)?).map_err(|e| parse_err(path, e))?;
    let rows = groups
        .iter()
        .map(|(label, samples)| {
            let m = fit_power_model(samples).map_err(|e: RdModelError| {
                CliError::new(EXIT_MODEL, format!("frame {label}: {e}"))
            })?;
            info!("frame {label}: alpha {} beta {} R2 {}", sig4(m.alpha()), sig4(m.beta()), sig4(m.r_squared()));
            Ok((label.clone(), m.alpha(), m.beta(), m.r_squared()))
        })
        .collect::<Result<Vec<ModelRow>, CliError>>()?;
    emit(out, &write_models(&rows), &[])
}

fn cmd_allocate(
    path: &Path,
    lambda: Option<f64>,
    budget: Option<f64>,
    min_rate: Option<f64>,
    step1_only: bool,
    max_iters: usize,
    out: &Output,
) -> Result<(), CliError> {
    let mut file = ProblemFile::parse(&read(path)?).map_err(|e| parse_err(path, e))?;
    if let Some(l) = lambda {
        file.lambda = l;
    }
    if let Some(b) = budget {
        file.budget = b;
    }
    if min_rate.is_some() {
        file.min_rate = min_rate;
    }
    if step1_only {
        file.lambda = 0.0;
    }
    let problem = file.to_problem().map_err(|e| parse_err(path, e))?.map_err(alloc_err)?;
    let options = SolverOptions { max_iterations: max_iters, ..SolverOptions::default() };
    let solved = if step1_only { solve_step1(&problem, &options) } else { allocate(&problem, &options) };
    let result: AllocationResult<f64> = match solved {
        Ok(r) => r,
        Err(AllocError::NotConverged { iterations, residual, best }) => {
            warn!("consistency step stopped after {iterations} iterations (residual {})", sig4(residual));
            *best
        }
        Err(e) => return Err(alloc_err(e)),
    };
    eprintln!(
        "cost {} (distortion {}, discontinuity {}), budget used {}, kkt residual {}",
        sig4(result.objective.total),
        sig4(result.objective.weighted_distortion),
        sig4(result.objective.discontinuity),
        sig4(result.budget_used),
        sig4(result.kkt_residual)
    );
    let diagnostics = AllocationDiagnostics::from_result(&result).to_text();
    emit(out, &write_rates(&result), &[("diagnostics.toml", diagnostics)])
}

fn parse_size(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::new(EXIT_PARSE, format!("expected WIDTHxHEIGHT, got {s:?}"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (scene, generated) = match &args.scene {
        Some(path) => {
            let file = SceneFile::parse(&read(path)?).map_err(|e| parse_err(path, e))?;
            (file.to_scene().map_err(|e| parse_err(path, e))?, None)
        }
        None => {
            let (w, h) = parse_size(&args.synthetic)?;
            if w == 0 || h == 0 || !(args.gamma >= 0.0) {
                return Err(CliError::new(EXIT_PARSE, "synthetic scene needs a non-empty grid and gamma >= 0"));
            }
            let scene = MockScene::synthetic(w, h, args.gamma, args.seed);
            let text = SceneFile::from_scene(&scene).to_text();
            (scene, Some(text))
        }
    };
    let encoder = MockEncoder::new(scene.encoder.clone()).map_err(|e| CliError::new(EXIT_PARSE, e))?;
    let budget = args.budget.unwrap_or(scene.encoder.rate_anchor * scene.grid.len() as f64);
    let mut settings = SimulationSettings::new(budget, args.lambda);
    settings.min_rate = args.min_rate;
    settings.k_sweep = args.k_sweep;
    settings.max_iters = args.max_iters;
    settings.frame_pixels = scene.frame_pixels;
    settings.baseline = match args.baseline {
        BaselineArg::Uniform => Baseline::Uniform,
        BaselineArg::WeightSquared => Baseline::WeightSquared,
    };
    let trace = run_to_convergence(&encoder, &scene.grid, &scene.weights, &settings).map_err(sim_err)?;
    for rec in &trace.records {
        eprintln!(
            "iteration {}: rate {} cost {} wPSNR {} dB",
            rec.iteration,
            sig4(rec.total_rate()),
            sig4(rec.cost.total),
            sig4(rec.wpsnr)
        );
    }
    eprintln!("converged: {}", trace.converged);
    let mut siblings = vec![("summary.toml", TraceSummary::from_trace(&trace).to_text())];
    if let Some(text) = generated {
        siblings.push(("scene.toml", text));
    }
    emit(&args.out, &write_trace(&trace), &siblings)
}

fn cmd_metrics(path: &Path, lambda: f64, frame_pixels: usize, out: &Output) -> Result<(), CliError> {
    let rows = read_frame_measurements(&read(path)?).map_err(|e| parse_err(path, e))?;
    let width = rows.iter().map(|(c, _, _)| c.u + 1).max().unwrap_or(0);
    let height = rows.iter().map(|(c, _, _)| c.v + 1).max().unwrap_or(0);
    let grid = FrameGrid::spiral(width, height).map_err(|e| parse_err(path, e))?;
    let lf = |e: LightfieldError| parse_err(path, e);
    let weights = unify_weights(rows.iter().map(|&(c, w, _)| (c, w)).collect()).map_err(lf)?;
    let sse = rows.iter().map(|&(c, _, d)| (c, d)).collect::<std::collections::BTreeMap<FrameCoord, f64>>();
    let me = |e: MetricsError| CliError::new(metrics_code(&e), format!("{}: {e}", path.display()));
    let distortions = DistortionSet::new(sse).map_err(me)?;
    let breakdown = cost(&grid, &weights, &distortions, lambda).map_err(me)?;
    let pixels = frame_pixels * grid.len();
    let quality = wpsnr(breakdown.total, pixels).map_err(me)?;
    eprintln!(
        "T {} = {} + {} * sqrt({}), wPSNR {} dB",
        sig4(breakdown.total),
        sig4(breakdown.weighted_distortion),
        sig4(lambda),
        sig4(breakdown.discontinuity),
        sig4(quality)
    );
    emit(out, &MetricsReport::new(&breakdown, pixels, quality).to_text(), &[])
}

fn cmd_bdrate(anchor: &Path, test: &Path, out: &Output) -> Result<(), CliError> {
    let a = read_curve(&read(anchor)?).map_err(|e: FormatError| parse_err(anchor, e))?;
    let t = read_curve(&read(test)?).map_err(|e: FormatError| parse_err(test, e))?;
    let pct = bd_rate(&a, &t).map_err(|e| CliError::new(EXIT_METRIC, e.to_string()))?;
    emit(out, &format!("{pct:.2}%\n"), &[])
}
