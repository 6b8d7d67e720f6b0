//! Distortion, consistency and quality metrics.
//!
//! The joint cost is `T = Σ w̃_f² D°_f + λ √C` where `C` sums, over every ordered
//! pair of frames, `δ(f, f') · (min(w̃_f, w̃_f') · (D°_f − D°_f'))²`.

mod bdrate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bdrate::{bd_rate, RdPoint};

use crate::lightfield::{proximity, FrameCoord, FrameGrid, PixelFrame, WeightSet};
use crate::scalar::{ordered_sum, Scalar};

/// Peak sample value for 8-bit content.
pub const PEAK: f64 = 255.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("no {what} entry for frame {coord}")]
    IncompleteInput { what: &'static str, coord: FrameCoord },
    #[error("invalid value: {0}")]
    Domain(String),
    #[error("BD-rate needs at least 4 points per curve, got {0}")]
    InsufficientPoints(usize),
    #[error("the two curves share no quality interval")]
    NoOverlap,
}

/// Per-frame ordinary SSE values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistortionSet<T> {
    sse: BTreeMap<FrameCoord, T>,
}

impl<T: Scalar> DistortionSet<T> {
    pub fn new(sse: BTreeMap<FrameCoord, T>) -> Result<Self, MetricsError> {
        if let Some((c, v)) = sse.iter().find(|(_, v)| !(**v >= T::zero()) || !v.is_finite()) {
            return Err(MetricsError::Domain(format!("SSE {v} for frame {c}")));
        }
        Ok(Self { sse })
    }

    /// Pairs values with the grid's coding order.
    pub fn from_ordered(grid: &FrameGrid, values: &[T]) -> Result<Self, MetricsError> {
        if values.len() != grid.len() {
            return Err(MetricsError::Domain(format!("{} values for {} frames", values.len(), grid.len())));
        }
        Self::new(grid.coding_order().iter().copied().zip(values.iter().copied()).collect())
    }

    pub fn get(&self, c: FrameCoord) -> Option<T> {
        self.sse.get(&c).copied()
    }

    pub fn as_map(&self) -> &BTreeMap<FrameCoord, T> {
        &self.sse
    }
}

/// Components of the joint cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown<T> {
    pub weighted_distortion: T,
    pub discontinuity: T,
    pub lambda: T,
    pub total: T,
}

impl<T: Scalar> CostBreakdown<T> {
    pub fn new(weighted_distortion: T, discontinuity: T, lambda: T) -> Self {
        let total = weighted_distortion + lambda * discontinuity.sqrt();
        Self { weighted_distortion, discontinuity, lambda, total }
    }

    pub fn to_f64(&self) -> CostBreakdown<f64> {
        CostBreakdown {
            weighted_distortion: self.weighted_distortion.to_f64_lossy(),
            discontinuity: self.discontinuity.to_f64_lossy(),
            lambda: self.lambda.to_f64_lossy(),
            total: self.total.to_f64_lossy(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CostRecord {
    weighted_distortion: f64,
    discontinuity: f64,
    lambda: f64,
    total: f64,
}

impl CostBreakdown<f64> {
    /// `key = value` text with the four named fields.
    pub fn to_text(&self) -> String {
        let rec = CostRecord {
            weighted_distortion: self.weighted_distortion,
            discontinuity: self.discontinuity,
            lambda: self.lambda,
            total: self.total,
        };
        toml::to_string(&rec).expect("cost serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, MetricsError> {
        let rec: CostRecord = toml::from_str(text).map_err(|e| MetricsError::Domain(e.to_string()))?;
        Ok(Self {
            weighted_distortion: rec.weighted_distortion,
            discontinuity: rec.discontinuity,
            lambda: rec.lambda,
            total: rec.total,
        })
    }
}

/// Sum of squared sample differences between two equally sized frames.
pub fn compute_sse<T: Scalar>(original: &PixelFrame<T>, decoded: &PixelFrame<T>) -> Result<T, MetricsError> {
    if original.width() != decoded.width() || original.height() != decoded.height() {
        return Err(MetricsError::ShapeMismatch(
            original.width(),
            original.height(),
            decoded.width(),
            decoded.height(),
        ));
    }
    Ok(ordered_sum(
        original.samples().iter().zip(decoded.samples()).map(|(&p, &q)| (q - p) * (q - p)),
    ))
}

/// `w̃² · sse`.
#[inline]
pub fn weighted_distortion<T: Scalar>(sse: T, unified_weight: T) -> T {
    unified_weight * unified_weight * sse
}

fn lookup<T: Scalar>(
    grid: &FrameGrid,
    weights: &WeightSet<T>,
    distortions: &DistortionSet<T>,
) -> Result<Vec<(T, T)>, MetricsError> {
    grid.coding_order()
        .iter()
        .map(|&c| {
            let w = weights
                .unified_weight(c)
                .ok_or(MetricsError::IncompleteInput { what: "weight", coord: c })?;
            let d = distortions
                .get(c)
                .ok_or(MetricsError::IncompleteInput { what: "distortion", coord: c })?;
            Ok((w, d))
        })
        .collect()
}

/// Discontinuity over ordered frame pairs; each unordered pair counts twice.
pub fn discontinuity<T: Scalar>(
    grid: &FrameGrid,
    weights: &WeightSet<T>,
    distortions: &DistortionSet<T>,
) -> Result<T, MetricsError> {
    let frames = lookup(grid, weights, distortions)?;
    Ok(discontinuity_ordered(grid, &frames))
}

fn discontinuity_ordered<T: Scalar>(grid: &FrameGrid, frames: &[(T, T)]) -> T {
    let order = grid.coding_order();
    let mut acc = T::zero();
    for (i, &(wi, di)) in frames.iter().enumerate() {
        for (j, &(wj, dj)) in frames.iter().enumerate() {
            let delta = proximity(order[i], order[j]);
            if i == j || delta == 0 {
                continue;
            }
            let term = wi.min(wj) * (di - dj);
            acc = acc + T::of(f64::from(delta)) * term * term;
        }
    }
    acc
}

/// Joint cost `Σ w̃² D° + λ √C`.
pub fn cost<T: Scalar>(
    grid: &FrameGrid,
    weights: &WeightSet<T>,
    distortions: &DistortionSet<T>,
    lambda: T,
) -> Result<CostBreakdown<T>, MetricsError> {
    if !(lambda >= T::zero()) {
        return Err(MetricsError::Domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    let frames = lookup(grid, weights, distortions)?;
    let wd = ordered_sum(frames.iter().map(|&(w, d)| weighted_distortion(d, w)));
    let c = discontinuity_ordered(grid, &frames);
    Ok(CostBreakdown::new(wd, c, lambda))
}

/// Weighted PSNR in dB: `20 log10(255 / sqrt(T / n))`. Returns `+inf` when `T == 0`.
pub fn wpsnr<T: Scalar>(total_cost: T, pixel_count: usize) -> Result<T, MetricsError> {
    if pixel_count == 0 {
        return Err(MetricsError::Domain("pixel count must be positive".into()));
    }
    if !(total_cost >= T::zero()) {
        return Err(MetricsError::Domain(format!("cost must be nonnegative, got {total_cost}")));
    }
    if total_cost == T::zero() {
        return Ok(T::infinity());
    }
    let mse = total_cost / T::of_usize(pixel_count);
    Ok(T::of(20.0) * (T::of(PEAK) / mse.sqrt()).log10())
}


#[cfg(test)]
mod props {
    use proptest::prelude::*;

    use super::*;
    use crate::lightfield::unify_weights;

    proptest! {
        #[test]
        fn discontinuity_ignores_common_offset(
            w in 1usize..4,
            h in 1usize..4,
            seed in prop::collection::vec((0.05f64..1.0, 0.0f64..1e4), 9),
            shift in -1e3f64..1e3,
        ) {
            let grid = FrameGrid::spiral(w, h).unwrap();
            let coords = grid.coding_order();
            let weights = unify_weights(coords.iter().zip(&seed).map(|(&c, s)| (c, s.0)).collect()).unwrap();
            let d: Vec<f64> = seed.iter().take(coords.len()).map(|s| s.1 + 2e3).collect();
            let shifted: Vec<f64> = d.iter().map(|x| x + shift).collect();
            let a = discontinuity(&grid, &weights, &DistortionSet::from_ordered(&grid, &d).unwrap()).unwrap();
            let b = discontinuity(&grid, &weights, &DistortionSet::from_ordered(&grid, &shifted).unwrap()).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn wpsnr_falls_as_cost_grows(t in 1e-3f64..1e12, factor in 1.0001f64..100.0, n in 1usize..1_000_000) {
            prop_assert!(wpsnr(t * factor, n).unwrap() < wpsnr(t, n).unwrap());
        }
    }
}
