//! Text file formats read and written by the command-line tool.
//!
//! CSV numbers are written with Rust's shortest round-trip formatting, so every
//! writer here is a fixed point of read-then-write.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{AllocError, AllocationProblem, AllocationResult};
use crate::encodesim::{IterationTrace, MockEncoderConfig, MockFrame, MockScene, Qp, DEFAULT_FRAME_PIXELS};
use crate::lightfield::{unify_weights, FrameCoord, FrameGrid, LightfieldError, WeightSet};
use crate::metrics::{CostBreakdown, RdPoint};
use crate::rdmodel::{RdModelParams, RdSample};

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Line { line: u64, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("no data rows")]
    Empty,
}

impl From<LightfieldError> for FormatError {
    fn from(e: LightfieldError) -> Self {
        FormatError::Invalid(e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> FormatError {
    FormatError::Invalid(message.into())
}

/// Data rows of a headerless-or-headed CSV, each with its 1-based line number.
/// A first row whose first field equals `first_header` is skipped.
fn csv_rows(text: &str, first_header: &str, columns: usize) -> Result<Vec<(u64, Vec<String>)>, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            FormatError::Line { line, message: e.to_string() }
        })?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if k == 0 && record.get(0) == Some(first_header) {
            continue;
        }
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != columns {
            return Err(FormatError::Line { line, message: format!("expected {columns} fields, found {}", record.len()) });
        }
        rows.push((line, record.iter().map(str::to_owned).collect()));
    }
    if rows.is_empty() {
        return Err(FormatError::Empty);
    }
    Ok(rows)
}

fn field<V: std::str::FromStr>(line: u64, name: &str, raw: &str) -> Result<V, FormatError> {
    raw.parse()
        .map_err(|_| FormatError::Line { line, message: format!("cannot parse {name} from {raw:?}") })
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
}

/// `path` with its extension replaced by `suffix`, e.g. `out.csv` → `out.summary.toml`.
pub fn sibling_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

// ---- R-D samples and models ----

pub const SAMPLES_HEADER: [&str; 4] = ["frame_index", "qp", "rate_bits", "sse"];
pub const MODELS_HEADER: [&str; 4] = ["frame_index", "alpha", "beta", "r_squared"];

/// Samples grouped by frame label, in order of first appearance.
pub fn read_samples(text: &str) -> Result<Vec<(String, Vec<RdSample<f64>>)>, FormatError> {
    let mut groups: Vec<(String, Vec<RdSample<f64>>)> = Vec::new();
    for (line, row) in csv_rows(text, SAMPLES_HEADER[0], 4)? {
        let sample = RdSample::new(
            field(line, "qp", &row[1])?,
            field(line, "rate_bits", &row[2])?,
            field(line, "sse", &row[3])?,
        );
        match groups.iter_mut().find(|(label, _)| *label == row[0]) {
            Some((_, v)) => v.push(sample),
            None => groups.push((row[0].clone(), vec![sample])),
        }
    }
    Ok(groups)
}

pub fn write_samples(groups: &[(String, Vec<RdSample<f64>>)]) -> String {
    csv_text(
        &SAMPLES_HEADER,
        groups.iter().flat_map(|(label, samples)| {
            samples
                .iter()
                .map(move |s| vec![label.clone(), s.qp.to_string(), s.rate.to_string(), s.sse.to_string()])
        }),
    )
}

/// Fitted models as `(label, alpha, beta, r_squared)`.
pub type ModelRow = (String, f64, f64, f64);

pub fn write_models(rows: &[ModelRow]) -> String {
    csv_text(
        &MODELS_HEADER,
        rows.iter().map(|(l, a, b, r2)| vec![l.clone(), a.to_string(), b.to_string(), r2.to_string()]),
    )
}

pub fn read_models(text: &str) -> Result<Vec<ModelRow>, FormatError> {
    csv_rows(text, MODELS_HEADER[0], 4)?
        .into_iter()
        .map(|(line, row)| {
            Ok((
                row[0].clone(),
                field(line, "alpha", &row[1])?,
                field(line, "beta", &row[2])?,
                field(line, "r_squared", &row[3])?,
            ))
        })
        .collect()
}

// ---- R-D curves ----

pub const CURVE_HEADER: [&str; 2] = ["rate_bits", "quality_db"];

pub fn read_curve(text: &str) -> Result<Vec<RdPoint<f64>>, FormatError> {
    csv_rows(text, CURVE_HEADER[0], 2)?
        .into_iter()
        .map(|(line, row)| {
            Ok(RdPoint { rate: field(line, "rate_bits", &row[0])?, quality: field(line, "quality_db", &row[1])? })
        })
        .collect()
}

pub fn write_curve(points: &[RdPoint<f64>]) -> String {
    csv_text(&CURVE_HEADER, points.iter().map(|p| vec![p.rate.to_string(), p.quality.to_string()]))
}

// ---- per-frame measurements for the metrics command ----

pub const FRAMES_HEADER: [&str; 4] = ["u", "v", "weight", "sse"];

/// Per-frame `(coord, raw weight, sse)`.
pub fn read_frame_measurements(text: &str) -> Result<Vec<(FrameCoord, f64, f64)>, FormatError> {
    let rows = csv_rows(text, FRAMES_HEADER[0], 4)?;
    let mut seen = BTreeMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let c = FrameCoord::new(field(line, "u", &row[0])?, field(line, "v", &row[1])?);
        if seen.insert(c, line).is_some() {
            return Err(FormatError::Line { line, message: format!("frame {c} listed twice") });
        }
        out.push((c, field(line, "weight", &row[2])?, field(line, "sse", &row[3])?));
    }
    Ok(out)
}

pub fn write_frame_measurements(rows: &[(FrameCoord, f64, f64)]) -> String {
    csv_text(
        &FRAMES_HEADER,
        rows.iter().map(|(c, w, d)| vec![c.u.to_string(), c.v.to_string(), w.to_string(), d.to_string()]),
    )
}

// ---- grids ----

/// Explicit `order`, or the spiral scan when absent.
fn grid_from(width: usize, height: usize, order: Option<&[String]>) -> Result<FrameGrid, FormatError> {
    Ok(match order {
        Some(order) => {
            let coords = order.iter().map(|s| s.parse()).collect::<Result<Vec<FrameCoord>, _>>()?;
            FrameGrid::new(width, height, coords)?
        }
        None => FrameGrid::spiral(width, height)?,
    })
}

fn order_strings(grid: &FrameGrid) -> Vec<String> {
    grid.coding_order().iter().map(ToString::to_string).collect()
}

fn weights_for(grid: &FrameGrid, raw: BTreeMap<FrameCoord, f64>) -> Result<WeightSet<f64>, FormatError> {
    for &c in grid.coding_order() {
        if !raw.contains_key(&c) {
            return Err(invalid(format!("no entry for frame {c}")));
        }
    }
    if let Some(c) = raw.keys().find(|c| !grid.contains(**c)) {
        return Err(invalid(format!("frame {c} lies outside the grid")));
    }
    Ok(unify_weights(raw)?)
}

// ---- allocation problems ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFrame {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub width: usize,
    pub height: usize,
    pub budget: f64,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_rate: Option<f64>,
    /// Coding order as `"u,v"` strings; spiral scan when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<String>>,
    #[serde(rename = "frame")]
    pub frames: Vec<ProblemFrame>,
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("problem serializes")
    }

    /// Builds the problem, mapping model and budget errors through [`AllocError`].
    pub fn to_problem(&self) -> Result<Result<AllocationProblem<f64>, AllocError<f64>>, FormatError> {
        let grid = grid_from(self.width, self.height, self.order.as_deref())?;
        let mut raw = BTreeMap::new();
        let mut models = BTreeMap::new();
        for f in &self.frames {
            let c = FrameCoord::new(f.u, f.v);
            if raw.insert(c, f.weight).is_some() {
                return Err(invalid(format!("frame {c} listed twice")));
            }
            match RdModelParams::new(f.alpha, f.beta) {
                Ok(m) => {
                    models.insert(c, m);
                }
                Err(e) => return Ok(Err(AllocError::Model(e))),
            }
        }
        let weights = weights_for(&grid, raw)?;
        Ok(AllocationProblem::new(grid, weights, models, self.budget, self.lambda, self.min_rate))
    }
}

// ---- allocation results ----

pub const RATES_HEADER: [&str; 3] = ["u", "v", "rate_bits"];

pub fn write_rates(result: &AllocationResult<f64>) -> String {
    csv_text(
        &RATES_HEADER,
        result
            .coords()
            .iter()
            .zip(result.rates())
            .map(|(c, r)| vec![c.u.to_string(), c.v.to_string(), r.to_string()]),
    )
}

pub fn read_rates(text: &str) -> Result<Vec<(FrameCoord, f64)>, FormatError> {
    csv_rows(text, RATES_HEADER[0], 3)?
        .into_iter()
        .map(|(line, row)| {
            Ok((
                FrameCoord::new(field(line, "u", &row[0])?, field(line, "v", &row[1])?),
                field(line, "rate_bits", &row[2])?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDiagnostics {
    pub weighted_distortion: f64,
    pub discontinuity: f64,
    pub lambda: f64,
    pub total: f64,
    pub surrogate_objective: f64,
    pub kkt_residual: f64,
    pub multiplier: f64,
    pub iterations: usize,
    pub budget_used: f64,
    pub converged: bool,
}

impl AllocationDiagnostics {
    pub fn from_result(r: &AllocationResult<f64>) -> Self {
        Self {
            weighted_distortion: r.objective.weighted_distortion,
            discontinuity: r.objective.discontinuity,
            lambda: r.objective.lambda,
            total: r.objective.total,
            surrogate_objective: r.surrogate_objective,
            kkt_residual: r.kkt_residual,
            multiplier: r.multiplier,
            iterations: r.iterations,
            budget_used: r.budget_used,
            converged: r.converged,
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("diagnostics serialize")
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }
}

// ---- simulation scenes ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFrame {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
    pub a: f64,
    pub b: f64,
}

fn default_halving() -> f64 {
    6.0
}

fn default_frame_pixels() -> usize {
    DEFAULT_FRAME_PIXELS
}

/// Mock encoder configuration plus the light-field layout it encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<String>>,
    pub qp_anchor: Qp,
    pub rate_anchor: f64,
    pub gamma: f64,
    pub ref_norm: f64,
    #[serde(default = "default_halving")]
    pub rate_qp_halving: f64,
    #[serde(default = "default_frame_pixels")]
    pub frame_pixels: usize,
    #[serde(rename = "frame")]
    pub frames: Vec<SceneFrame>,
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn from_scene(scene: &MockScene) -> Self {
        let cfg = &scene.encoder;
        Self {
            width: scene.grid.width(),
            height: scene.grid.height(),
            order: Some(order_strings(&scene.grid)),
            qp_anchor: cfg.qp_anchor,
            rate_anchor: cfg.rate_anchor,
            gamma: cfg.dependency_gamma,
            ref_norm: cfg.ref_norm,
            rate_qp_halving: cfg.rate_qp_halving,
            frame_pixels: scene.frame_pixels,
            frames: scene
                .grid
                .coding_order()
                .iter()
                .map(|&c| {
                    let f = cfg.frames[&c];
                    SceneFrame { u: c.u, v: c.v, weight: scene.weights.raw()[&c], a: f.a, b: f.b }
                })
                .collect(),
        }
    }

    pub fn to_scene(&self) -> Result<MockScene, FormatError> {
        let grid = grid_from(self.width, self.height, self.order.as_deref())?;
        let mut raw = BTreeMap::new();
        let mut frames = BTreeMap::new();
        for f in &self.frames {
            let c = FrameCoord::new(f.u, f.v);
            if raw.insert(c, f.weight).is_some() {
                return Err(invalid(format!("frame {c} listed twice")));
            }
            frames.insert(c, MockFrame { a: f.a, b: f.b });
        }
        let weights = weights_for(&grid, raw)?;
        let encoder = MockEncoderConfig {
            frames,
            qp_anchor: self.qp_anchor,
            rate_anchor: self.rate_anchor,
            dependency_gamma: self.gamma,
            ref_norm: self.ref_norm,
            rate_qp_halving: self.rate_qp_halving,
        };
        encoder.validate().map_err(FormatError::Invalid)?;
        if self.frame_pixels == 0 {
            return Err(invalid("frame_pixels must be positive"));
        }
        Ok(MockScene { grid, weights, encoder, frame_pixels: self.frame_pixels })
    }
}

// ---- iteration traces ----

pub const TRACE_HEADER: [&str; 8] = ["iteration", "u", "v", "qp", "rate_bits", "sse", "alpha", "beta"];

pub fn write_trace(trace: &IterationTrace) -> String {
    csv_text(
        &TRACE_HEADER,
        trace.records.iter().flat_map(|rec| {
            (0..rec.coords.len()).map(move |i| {
                vec![
                    rec.iteration.to_string(),
                    rec.coords[i].u.to_string(),
                    rec.coords[i].v.to_string(),
                    rec.qps[i].to_string(),
                    rec.rates[i].to_string(),
                    rec.sses[i].to_string(),
                    rec.models[i].alpha().to_string(),
                    rec.models[i].beta().to_string(),
                ]
            })
        }),
    )
}

/// One trace row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub coord: FrameCoord,
    pub qp: Qp,
    pub rate: f64,
    pub sse: f64,
    pub alpha: f64,
    pub beta: f64,
}

pub fn read_trace(text: &str) -> Result<Vec<TraceRow>, FormatError> {
    csv_rows(text, TRACE_HEADER[0], 8)?
        .into_iter()
        .map(|(line, r)| {
            Ok(TraceRow {
                iteration: field(line, "iteration", &r[0])?,
                coord: FrameCoord::new(field(line, "u", &r[1])?, field(line, "v", &r[2])?),
                qp: field(line, "qp", &r[3])?,
                rate: field(line, "rate_bits", &r[4])?,
                sse: field(line, "sse", &r[5])?,
                alpha: field(line, "alpha", &r[6])?,
                beta: field(line, "beta", &r[7])?,
            })
        })
        .collect()
}

pub fn write_trace_rows(rows: &[TraceRow]) -> String {
    csv_text(
        &TRACE_HEADER,
        rows.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                r.coord.u.to_string(),
                r.coord.v.to_string(),
                r.qp.to_string(),
                r.rate.to_string(),
                r.sse.to_string(),
                r.alpha.to_string(),
                r.beta.to_string(),
            ]
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub total_rate_bits: f64,
    pub weighted_distortion: f64,
    pub discontinuity: f64,
    pub lambda: f64,
    pub total: f64,
    pub wpsnr_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rate_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub converged: bool,
    pub iterations: usize,
    #[serde(rename = "iteration")]
    pub per_iteration: Vec<IterationSummary>,
}

impl TraceSummary {
    pub fn from_trace(trace: &IterationTrace) -> Self {
        Self {
            converged: trace.converged,
            iterations: trace.len(),
            per_iteration: trace
                .records
                .iter()
                .map(|r| IterationSummary {
                    iteration: r.iteration,
                    total_rate_bits: r.total_rate(),
                    weighted_distortion: r.cost.weighted_distortion,
                    discontinuity: r.cost.discontinuity,
                    lambda: r.cost.lambda,
                    total: r.cost.total,
                    wpsnr_db: r.wpsnr,
                    max_rate_change: r.rate_change,
                })
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }
}

// ---- metrics report ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub weighted_distortion: f64,
    pub discontinuity: f64,
    pub lambda: f64,
    pub total: f64,
    pub pixel_count: usize,
    pub wpsnr_db: f64,
}

impl MetricsReport {
    pub fn new(cost: &CostBreakdown<f64>, pixel_count: usize, wpsnr_db: f64) -> Self {
        Self {
            weighted_distortion: cost.weighted_distortion,
            discontinuity: cost.discontinuity,
            lambda: cost.lambda,
            total: cost.total,
            pixel_count,
            wpsnr_db,
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_round_trip_with_and_without_header() {
        let text = "a,30,1e5,2.5e6\na,31,8.9e4,2.6e6\nb,30,1.2e5,3e6\n";
        let groups = read_samples(text).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].1.len(), 2);
        let written = write_samples(&groups);
        assert!(written.starts_with("frame_index,qp,rate_bits,sse\n"));
        assert_eq!(read_samples(&written).unwrap(), groups);
        assert_eq!(write_samples(&read_samples(&written).unwrap()), written);
    }

    #[test]
    fn sample_errors_carry_lines() {
        assert_eq!(read_samples(""), Err(FormatError::Empty));
        assert_eq!(read_samples("frame_index,qp,rate_bits,sse\n"), Err(FormatError::Empty));
        match read_samples("a,30,1e5,2e6\na,x,1e5,2e6\n") {
            Err(FormatError::Line { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(read_samples("a,30,1e5\n"), Err(FormatError::Line { line: 1, .. })));
    }

    #[test]
    fn models_round_trip() {
        let rows = vec![("a".to_string(), 4.46e7, -0.261, 1.0), ("7".to_string(), 1.5e-3, -0.1, 0.97)];
        let text = write_models(&rows);
        assert_eq!(read_models(&text).unwrap(), rows);
        assert!(text.contains("a,44600000,-0.261,1\n"));
    }

    #[test]
    fn curve_round_trip() {
        let pts = vec![RdPoint { rate: 1e5, quality: 33.25 }, RdPoint { rate: 2e5, quality: 35.5 }];
        let text = write_curve(&pts);
        assert_eq!(read_curve(&text).unwrap(), pts);
        assert_eq!(read_curve("100000,33.25\n200000,35.5\n").unwrap(), pts);
    }

    fn problem_text() -> &'static str {
        r#"
width = 2
height = 1
budget = 2e6
lambda = 5.0

[[frame]]
u = 0
v = 0
weight = 0.5
alpha = 4.46e7
beta = -0.261

[[frame]]
u = 1
v = 0
weight = 1.0
alpha = 1.96e8
beta = -0.383
"#
    }

    #[test]
    fn problem_file_builds_problem() {
        let file = ProblemFile::parse(problem_text()).unwrap();
        let p = file.to_problem().unwrap().unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.weights().unified_weight(FrameCoord::new(0, 0)), Some(0.5));
        assert_eq!(p.min_rate(), 1e3);
        assert_eq!(ProblemFile::parse(&file.to_text()).unwrap(), file);
    }

    #[test]
    fn problem_file_errors() {
        let missing = problem_text().replace("u = 1\n", "u = 0\n");
        assert!(ProblemFile::parse(&missing).unwrap().to_problem().is_err());
        let bad_beta = problem_text().replace("-0.383", "0.2");
        assert!(matches!(ProblemFile::parse(&bad_beta).unwrap().to_problem(), Ok(Err(AllocError::Model(_)))));
        let infeasible = problem_text().replace("lambda = 5.0", "lambda = 5.0\nmin_rate = 1.5e6");
        assert!(matches!(
            ProblemFile::parse(&infeasible).unwrap().to_problem(),
            Ok(Err(AllocError::InfeasibleBudget { .. }))
        ));
        assert!(ProblemFile::parse("width = 1").is_err());
    }

    #[test]
    fn scene_round_trip() {
        let scene = MockScene::synthetic(3, 2, 0.2, 4);
        let file = SceneFile::from_scene(&scene);
        let text = file.to_text();
        let back = SceneFile::parse(&text).unwrap();
        assert_eq!(back, file);
        let rebuilt = back.to_scene().unwrap();
        assert_eq!(rebuilt.encoder, scene.encoder);
        assert_eq!(rebuilt.grid, scene.grid);
        assert_eq!(rebuilt.weights, scene.weights);
    }

    #[test]
    fn frame_measurements_reject_duplicates() {
        assert!(read_frame_measurements("0,0,1,5\n0,0,1,6\n").is_err());
        let rows = read_frame_measurements("u,v,weight,sse\n0,0,1,5\n1,0,0.5,6\n").unwrap();
        assert_eq!(read_frame_measurements(&write_frame_measurements(&rows)).unwrap(), rows);
    }

    #[test]
    fn sibling_names() {
        assert_eq!(sibling_path(Path::new("/tmp/out.csv"), "summary.toml"), Path::new("/tmp/out.summary.toml"));
        assert_eq!(sibling_path(Path::new("rates"), "diagnostics.toml"), Path::new("rates.diagnostics.toml"));
    }
}
