//! Deterministic stand-in encoder with a power-law R-D response and a linear
//! reference-quality coupling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lightfield::{unify_weights, FrameCoord, FrameGrid, WeightSet};

use super::{EncodeError, EncoderAdapter, FrameEncoding, Qp, QP_MAX, QP_MIN};

/// Hidden per-frame truth `sse = a · rate^b` (before reference coupling).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockFrame {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockEncoderConfig {
    pub frames: BTreeMap<FrameCoord, MockFrame>,
    pub qp_anchor: Qp,
    pub rate_anchor: f64,
    /// Strength of the reference-quality coupling; 0 decouples frames.
    pub dependency_gamma: f64,
    pub ref_norm: f64,
    /// QP increase that halves the rate.
    pub rate_qp_halving: f64,
}

impl MockEncoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if let Some((c, f)) = self.frames.iter().find(|(_, f)| !(f.a > 0.0) || !(f.b < 0.0)) {
            return Err(format!("frame {c}: need a > 0 and b < 0, got a={} b={}", f.a, f.b));
        }
        if !(self.rate_anchor > 0.0) || !(self.ref_norm > 0.0) || !(self.rate_qp_halving > 0.0) {
            return Err("rate_anchor, ref_norm and rate_qp_halving must be positive".into());
        }
        if !(self.dependency_gamma >= 0.0) {
            return Err("dependency_gamma must be nonnegative".into());
        }
        if !(QP_MIN..=QP_MAX).contains(&self.qp_anchor) {
            return Err(format!("qp anchor {} outside [{QP_MIN}, {QP_MAX}]", self.qp_anchor));
        }
        Ok(())
    }
}

/// `rate = rate₀ · 2^(−(qp − qp₀)/h)`, `sse = a · rate^b · (1 + γ · ref_sse / ref_norm)`.
pub fn mock_encode(config: &MockEncoderConfig, frame: MockFrame, qp: Qp, ref_sse: f64) -> (f64, f64) {
    let rate = config.rate_anchor * (-f64::from(qp - config.qp_anchor) / config.rate_qp_halving).exp2();
    let coupling = 1.0 + config.dependency_gamma * ref_sse / config.ref_norm;
    (rate, frame.a * rate.powf(frame.b) * coupling)
}

#[derive(Debug, Clone)]
pub struct MockEncoder {
    config: MockEncoderConfig,
}

impl MockEncoder {
    pub fn new(config: MockEncoderConfig) -> Result<Self, String> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &MockEncoderConfig {
        &self.config
    }
}

impl EncoderAdapter for MockEncoder {
    /// SSE of the reference frame's actual encode.
    type Reference = f64;

    fn encode_frame(
        &self,
        coord: FrameCoord,
        qp: Qp,
        reference: Option<&f64>,
    ) -> Result<(FrameEncoding, f64), EncodeError> {
        if !(QP_MIN..=QP_MAX).contains(&qp) {
            return Err(EncodeError::new(coord, format!("qp {qp} out of range")));
        }
        let frame = *self
            .config
            .frames
            .get(&coord)
            .ok_or_else(|| EncodeError::new(coord, "frame not configured"))?;
        let (rate, sse) = mock_encode(&self.config, frame, qp, reference.copied().unwrap_or(0.0));
        Ok((FrameEncoding { rate, sse }, sse))
    }
}

/// A synthetic light-field scene: grid, weights, and mock encoder.
#[derive(Debug, Clone)]
pub struct MockScene {
    pub grid: FrameGrid,
    pub weights: WeightSet<f64>,
    pub encoder: MockEncoderConfig,
    pub frame_pixels: usize,
}

/// Perspective-image size of a common plenoptic dataset, used as the default frame size.
pub const DEFAULT_FRAME_PIXELS: usize = 625 * 434;

impl MockScene {
    /// Weights peak at the grid centre and fall off towards the border; R-D truth is
    /// drawn around the magnitudes typical of real perspective frames.
    pub fn synthetic(width: usize, height: usize, gamma: f64, seed: u64) -> Self {
        let grid = FrameGrid::spiral(width, height).expect("non-empty grid");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cu, cv) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let reach = (cu * cu + cv * cv).sqrt().max(1.0);
        let mut raw = BTreeMap::new();
        let mut frames = BTreeMap::new();
        // spiral order keeps the draw sequence independent of map iteration
        for &c in grid.coding_order() {
            let d = ((c.u as f64 - cu).powi(2) + (c.v as f64 - cv).powi(2)).sqrt() / reach;
            let weight = (1.0 - 0.85 * d * d) * rng.gen_range(0.9..1.0);
            raw.insert(c, weight.max(0.05));
            let a = 10f64.powf(rng.gen_range(7.6..8.3));
            let b = rng.gen_range(-0.40..-0.25);
            frames.insert(c, MockFrame { a, b });
        }
        let rate_anchor: f64 = 1.0e5;
        let mut at_anchor: Vec<f64> = frames.values().map(|f| f.a * rate_anchor.powf(f.b)).collect();
        at_anchor.sort_by(f64::total_cmp);
        let ref_norm = at_anchor[at_anchor.len() / 2];
        Self {
            grid,
            weights: unify_weights(raw).expect("positive weights"),
            encoder: MockEncoderConfig {
                frames,
                qp_anchor: 32,
                rate_anchor,
                dependency_gamma: gamma,
                ref_norm,
                rate_qp_halving: 6.0,
            },
            frame_pixels: DEFAULT_FRAME_PIXELS,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.frame_pixels * self.grid.len()
    }
}
