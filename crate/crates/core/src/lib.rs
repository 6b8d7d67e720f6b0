//! Frame-level rate allocation for light-field images coded as pseudo-temporal
//! sequences of perspective views.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for callers that do not care.

pub mod allocator;
pub mod cli;
pub mod encodesim;
pub mod formats;
pub mod lightfield;
pub mod metrics;
pub mod rdmodel;
pub mod scalar;

pub use lightfield::{FrameCoord, FrameGrid};
pub use scalar::Scalar;

pub type AllocationProblem = allocator::AllocationProblem<f64>;
pub type AllocationResult = allocator::AllocationResult<f64>;
pub type AllocError = allocator::AllocError<f64>;
pub type RdModelParams = rdmodel::RdModelParams<f64>;
pub type RdSample = rdmodel::RdSample<f64>;
pub type WeightSet = lightfield::WeightSet<f64>;
pub type PixelFrame = lightfield::PixelFrame<f64>;
pub type CostBreakdown = metrics::CostBreakdown<f64>;
pub type DistortionSet = metrics::DistortionSet<f64>;

pub type AllocationProblemF32 = allocator::AllocationProblem<f32>;
pub type AllocationResultF32 = allocator::AllocationResult<f32>;
pub type RdModelParamsF32 = rdmodel::RdModelParams<f32>;
pub type WeightSetF32 = lightfield::WeightSet<f32>;
pub type PixelFrameF32 = lightfield::PixelFrame<f32>;
