//! Iterative encode / refit / reallocate loop against an abstract encoder.
//!
//! Frames are coded in the grid's coding order as a low-delay chain: each frame
//! references the actual encode of the frame before it. Trial encodes read the
//! reference but never replace it.

pub mod mock;

use std::fmt;

use log::{debug, info, warn};

use crate::allocator::{allocate, AllocError, AllocationProblem, AllocationResult, SolverOptions};
use crate::lightfield::{FrameCoord, FrameGrid, WeightSet};
use crate::metrics::{cost, wpsnr, CostBreakdown, DistortionSet, MetricsError};
use crate::rdmodel::{fit_power_model, RdModelError, RdModelParams, RdSample};

pub use mock::{mock_encode, MockEncoder, MockEncoderConfig, MockFrame, MockScene, DEFAULT_FRAME_PIXELS};

pub type Qp = i32;
pub const QP_MIN: Qp = 0;
pub const QP_MAX: Qp = 51;

/// Outcome of one frame encode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameEncoding {
    pub rate: f64,
    pub sse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeError {
    pub coord: FrameCoord,
    pub message: String,
}

impl EncodeError {
    pub fn new(coord: FrameCoord, message: impl Into<String>) -> Self {
        Self { coord, message: message.into() }
    }
}

impl fmt::Display for EncodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "encoding frame {} failed: {}", self.coord, self.message)
    }
}

impl std::error::Error for EncodeError {}

/// Seam between the allocation loop and an actual codec.
///
/// `encode_frame` must be deterministic in `(coord, qp, reference)` and must not
/// mutate shared state; the loop decides which returned reference is kept.
pub trait EncoderAdapter {
    /// Whatever the next frame needs from this frame's reconstruction.
    type Reference: Clone;

    fn encode_frame(
        &self,
        coord: FrameCoord,
        qp: Qp,
        reference: Option<&Self::Reference>,
    ) -> Result<(FrameEncoding, Self::Reference), EncodeError>;
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("model fit for frame {coord} failed: {source}")]
    Model { coord: FrameCoord, source: RdModelError },
    #[error(transparent)]
    Alloc(#[from] AllocError<f64>),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}

/// How the first iteration spreads the budget before any model exists.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Baseline {
    /// Equal share per frame.
    #[default]
    Uniform,
    /// Share proportional to `w̃²`; falls back to uniform if every weight is zero.
    WeightSquared,
}

#[derive(Debug, Clone)]
pub struct SimulationSettings {
    pub budget: f64,
    pub lambda: f64,
    pub min_rate: Option<f64>,
    /// Half-width of the trial sweep.
    pub k_sweep: u32,
    /// Total number of iterations, baseline included.
    pub max_iters: usize,
    /// Largest relative per-frame rate change still counted as converged.
    pub tolerance: f64,
    pub baseline: Baseline,
    pub initial_qp: Qp,
    pub frame_pixels: usize,
    pub solver: SolverOptions,
}

impl SimulationSettings {
    pub fn new(budget: f64, lambda: f64) -> Self {
        Self {
            budget,
            lambda,
            min_rate: None,
            k_sweep: 2,
            max_iters: 8,
            tolerance: 0.01,
            baseline: Baseline::Uniform,
            initial_qp: 32,
            frame_pixels: DEFAULT_FRAME_PIXELS,
            solver: SolverOptions::default(),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSettings(m));
        if !(self.budget > 0.0) || !self.budget.is_finite() {
            return bad(format!("budget must be positive, got {}", self.budget));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if self.k_sweep < 1 {
            return bad("sweep half-width must be at least 1".into());
        }
        if self.max_iters < 1 {
            return bad("at least one iteration is required".into());
        }
        if !(self.tolerance > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tolerance));
        }
        if !(QP_MIN..=QP_MAX).contains(&self.initial_qp) {
            return bad(format!("initial qp {} outside [{QP_MIN}, {QP_MAX}]", self.initial_qp));
        }
        if self.frame_pixels == 0 {
            return bad("frame pixel count must be positive".into());
        }
        Ok(())
    }
}

/// One pass over all frames.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 1-based; iteration 1 is the baseline.
    pub iteration: usize,
    /// Coding order; every per-frame vector below follows it.
    pub coords: Vec<FrameCoord>,
    pub target_rates: Vec<f64>,
    pub qps: Vec<Qp>,
    pub rates: Vec<f64>,
    pub sses: Vec<f64>,
    pub models: Vec<RdModelParams<f64>>,
    pub cost: CostBreakdown<f64>,
    pub wpsnr: f64,
    /// Max relative per-frame rate change against the previous iteration.
    pub rate_change: Option<f64>,
}

impl IterationRecord {
    pub fn total_rate(&self) -> f64 {
        self.rates.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> &IterationRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &IterationRecord {
        self.records.last().expect("trace is never empty")
    }
}

/// Encodes `coord` at every QP in `[center-K, center+K] ∩ [0, 51]` against the same reference.
pub fn trial_sweep<E: EncoderAdapter>(
    adapter: &E,
    coord: FrameCoord,
    center_qp: Qp,
    k: u32,
    reference: Option<&E::Reference>,
) -> Result<Vec<RdSample<f64>>, EncodeError> {
    let k = k.max(1) as Qp;
    let lo = (center_qp - k).max(QP_MIN);
    let hi = (center_qp + k).min(QP_MAX);
    (lo..=hi)
        .map(|qp| {
            let (out, _) = adapter.encode_frame(coord, qp, reference)?;
            Ok(RdSample::new(qp, out.rate, out.sse))
        })
        .collect()
}

/// Picks the sampled QP whose modelled rate is nearest `target_rate`, preferring the
/// lower QP on ties. The model is a least-squares line of `ln rate` against QP.
pub fn select_qp(samples: &[RdSample<f64>], target_rate: f64) -> Qp {
    assert!(!samples.is_empty(), "select_qp needs at least one sample");
    let modelled = qp_rate_model(samples);
    let mut candidates: Vec<(Qp, f64)> = samples.iter().map(|s| (s.qp, (modelled(s.qp) - target_rate).abs())).collect();
    candidates.sort_by_key(|&(qp, _)| qp);
    let best = candidates.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
    let slack = 1e-9 * target_rate.abs().max(f64::MIN_POSITIVE);
    candidates
        .iter()
        .find(|&&(_, d)| d <= best + slack)
        .map(|&(qp, _)| qp)
        .expect("nonempty")
}

fn qp_rate_model(samples: &[RdSample<f64>]) -> impl Fn(Qp) -> f64 {
    let n = samples.len() as f64;
    let mq = samples.iter().map(|s| f64::from(s.qp)).sum::<f64>() / n;
    let ml = samples.iter().map(|s| s.rate.ln()).sum::<f64>() / n;
    let sqq: f64 = samples.iter().map(|s| (f64::from(s.qp) - mq).powi(2)).sum();
    let sql: f64 = samples.iter().map(|s| (f64::from(s.qp) - mq) * (s.rate.ln() - ml)).sum();
    let slope = if sqq > 0.0 { sql / sqq } else { 0.0 };
    move |qp| (ml + slope * (f64::from(qp) - mq)).exp()
}

/// Re-centres the sweep until the selected QP is its centre, so that targets far
/// from the starting QP are still reachable. Returns the QP and the final sweep.
pub fn search_qp<E: EncoderAdapter>(
    adapter: &E,
    coord: FrameCoord,
    start_qp: Qp,
    k: u32,
    target_rate: f64,
    reference: Option<&E::Reference>,
) -> Result<(Qp, Vec<RdSample<f64>>), EncodeError> {
    let mut center = start_qp.clamp(QP_MIN, QP_MAX);
    let mut visited = Vec::new();
    loop {
        let sweep = trial_sweep(adapter, coord, center, k, reference)?;
        let chosen = select_qp(&sweep, target_rate);
        visited.push(center);
        if chosen == center {
            return Ok((chosen, sweep));
        }
        if visited.contains(&chosen) {
            // two-cycle between centres; settle on the lower QP
            let qp = chosen.min(center);
            let sweep = if qp == center { sweep } else { trial_sweep(adapter, coord, qp, k, reference)? };
            return Ok((qp, sweep));
        }
        center = chosen;
    }
}

/// Encodes every frame at a forced QP without trial encodes.
pub fn encode_sequence<E: EncoderAdapter>(adapter: &E, grid: &FrameGrid, qps: &[Qp]) -> Result<Vec<FrameEncoding>, SimError> {
    if qps.len() != grid.len() {
        return Err(SimError::InvalidSettings(format!("{} QPs for {} frames", qps.len(), grid.len())));
    }
    let mut reference: Option<E::Reference> = None;
    let mut out = Vec::with_capacity(qps.len());
    for (&coord, &qp) in grid.coding_order().iter().zip(qps) {
        let (enc, next) = adapter.encode_frame(coord, qp, reference.as_ref())?;
        out.push(enc);
        reference = Some(next);
    }
    Ok(out)
}

fn baseline_targets(grid: &FrameGrid, weights: &WeightSet<f64>, settings: &SimulationSettings) -> Vec<f64> {
    let n = grid.len();
    let uniform = vec![settings.budget / n as f64; n];
    match settings.baseline {
        Baseline::Uniform => uniform,
        Baseline::WeightSquared => {
            let sq: Vec<f64> = grid
                .coding_order()
                .iter()
                .map(|&c| weights.unified_weight(c).unwrap_or(0.0).powi(2))
                .collect();
            let total: f64 = sq.iter().sum();
            if total > 0.0 {
                sq.iter().map(|s| settings.budget * s / total).collect()
            } else {
                uniform
            }
        }
    }
}

/// Baseline pass: budget spread per [`Baseline`], QPs searched from `initial_qp`.
pub fn run_first_iteration<E: EncoderAdapter>(
    adapter: &E,
    grid: &FrameGrid,
    weights: &WeightSet<f64>,
    settings: &SimulationSettings,
) -> Result<IterationRecord, SimError> {
    settings.validate()?;
    let targets = baseline_targets(grid, weights, settings);
    let starts = vec![settings.initial_qp; grid.len()];
    encode_pass(adapter, grid, weights, settings, 1, &starts, &targets, None)
}

/// One pass towards `allocation`, each frame's QP search starting at its previous QP.
pub fn run_iteration<E: EncoderAdapter>(
    adapter: &E,
    grid: &FrameGrid,
    weights: &WeightSet<f64>,
    previous: &IterationRecord,
    allocation: &AllocationResult<f64>,
    settings: &SimulationSettings,
) -> Result<IterationRecord, SimError> {
    if allocation.coords() != grid.coding_order() {
        return Err(SimError::InvalidSettings("allocation does not cover the grid in coding order".into()));
    }
    run_iteration_with_targets(adapter, grid, weights, previous, allocation.rates(), settings)
}

/// [`run_iteration`] with explicit per-frame targets in coding order.
pub fn run_iteration_with_targets<E: EncoderAdapter>(
    adapter: &E,
    grid: &FrameGrid,
    weights: &WeightSet<f64>,
    previous: &IterationRecord,
    targets: &[f64],
    settings: &SimulationSettings,
) -> Result<IterationRecord, SimError> {
    settings.validate()?;
    if targets.len() != grid.len() || previous.qps.len() != grid.len() {
        return Err(SimError::InvalidSettings(format!(
            "{} targets and {} previous QPs for {} frames",
            targets.len(),
            previous.qps.len(),
            grid.len()
        )));
    }
    encode_pass(adapter, grid, weights, settings, previous.iteration + 1, &previous.qps, targets, Some(&previous.rates))
}

#[allow(clippy::too_many_arguments)]
fn encode_pass<E: EncoderAdapter>(
    adapter: &E,
    grid: &FrameGrid,
    weights: &WeightSet<f64>,
    settings: &SimulationSettings,
    iteration: usize,
    start_qps: &[Qp],
    targets: &[f64],
    previous_rates: Option<&[f64]>,
) -> Result<IterationRecord, SimError> {
    let n = grid.len();
    let mut qps = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    let mut sses = Vec::with_capacity(n);
    let mut models = Vec::with_capacity(n);
    let mut reference: Option<E::Reference> = None;
    for (i, &coord) in grid.coding_order().iter().enumerate() {
        let (qp, sweep) = search_qp(adapter, coord, start_qps[i], settings.k_sweep, targets[i], reference.as_ref())?;
        let model = fit_power_model(&sweep).map_err(|source| SimError::Model { coord, source })?;
        let (enc, next) = adapter.encode_frame(coord, qp, reference.as_ref())?;
        debug!("iter {iteration} frame {coord}: target {:.0} qp {qp} rate {:.0}", targets[i], enc.rate);
        qps.push(qp);
        rates.push(enc.rate);
        sses.push(enc.sse);
        models.push(model);
        reference = Some(next);
    }
    let distortions = DistortionSet::from_ordered(grid, &sses)?;
    let breakdown = cost(grid, weights, &distortions, settings.lambda)?;
    let quality = wpsnr(breakdown.total, settings.frame_pixels * n)?;
    let rate_change = previous_rates.map(|prev| max_relative_change(prev, &rates));
    Ok(IterationRecord {
        iteration,
        coords: grid.coding_order().to_vec(),
        target_rates: targets.to_vec(),
        qps,
        rates,
        sses,
        models,
        cost: breakdown,
        wpsnr: quality,
        rate_change,
    })
}

fn max_relative_change(previous: &[f64], current: &[f64]) -> f64 {
    previous
        .iter()
        .zip(current)
        .map(|(p, c)| ((c - p) / p).abs())
        .fold(0.0, f64::max)
}

/// Allocation for the next pass from the models fitted in `record`.
pub fn allocate_from_record(
    grid: &FrameGrid,
    weights: &WeightSet<f64>,
    record: &IterationRecord,
    settings: &SimulationSettings,
) -> Result<AllocationResult<f64>, SimError> {
    let models = record.coords.iter().copied().zip(record.models.iter().copied()).collect();
    let problem =
        AllocationProblem::new(grid.clone(), weights.clone(), models, settings.budget, settings.lambda, settings.min_rate)?;
    match allocate(&problem, &settings.solver) {
        Ok(r) => Ok(r),
        Err(e) => match e.into_best() {
            Ok(best) => {
                warn!("allocator stopped early after {} iterations; using best iterate", best.iterations);
                Ok(best)
            }
            Err(e) => Err(e.into()),
        },
    }
}

/// Baseline pass, then allocate / re-encode until every frame's realized rate moves
/// by less than `tolerance` or `max_iters` passes have run. Hitting the cap is not an
/// error; the trace is returned with `converged == false`.
pub fn run_to_convergence<E: EncoderAdapter>(
    adapter: &E,
    grid: &FrameGrid,
    weights: &WeightSet<f64>,
    settings: &SimulationSettings,
) -> Result<IterationTrace, SimError> {
    let mut records = vec![run_first_iteration(adapter, grid, weights, settings)?];
    let mut converged = false;
    while records.len() < settings.max_iters {
        let last = records.last().expect("nonempty");
        let allocation = allocate_from_record(grid, weights, last, settings)?;
        let next = run_iteration(adapter, grid, weights, last, &allocation, settings)?;
        let change = next.rate_change.unwrap_or(f64::INFINITY);
        info!("iteration {}: T = {:.4e}, max rate change {:.3e}", next.iteration, next.cost.total, change);
        records.push(next);
        if change < settings.tolerance {
            converged = true;
            break;
        }
    }
    Ok(IterationTrace { records, converged })
}
