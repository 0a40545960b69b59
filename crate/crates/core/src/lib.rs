//! Dynamic 2D bucketing for variable-length sequence-to-sequence batches.
//!
//! The core types are generic over the scalar used for durations; the
//! aliases at the crate root fix it to `f64` (no suffix) or `f32` (`F32`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bucketing;
pub mod cli;
pub mod datamodel;
pub mod error;
pub mod ingest;
pub mod oomptimizer;
pub mod recipes;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod sim;
pub mod stream;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Sample = datamodel::Sample<f64>;
pub type MiniBatch = datamodel::MiniBatch<f64>;
pub type PaddingStats = datamodel::PaddingStats<f64>;
pub type BucketSpec = bucketing::BucketSpec<f64>;
pub type MemoryModel = oomptimizer::MemoryModel<f64>;
pub type SamplerConfig = sampler::SamplerConfig<f64>;
pub type SamplerStats = sampler::SamplerStats<f64>;
pub type BatchingMode = sampler::BatchingMode<f64>;
pub type StepCostModel = sim::StepCostModel<f64>;
pub type InferenceCostModel = sim::InferenceCostModel<f64>;

pub type SampleF32 = datamodel::Sample<f32>;
pub type MiniBatchF32 = datamodel::MiniBatch<f32>;
pub type PaddingStatsF32 = datamodel::PaddingStats<f32>;
pub type BucketSpecF32 = bucketing::BucketSpec<f32>;
pub type MemoryModelF32 = oomptimizer::MemoryModel<f32>;
pub type SamplerConfigF32 = sampler::SamplerConfig<f32>;
pub type SamplerStatsF32 = sampler::SamplerStats<f32>;
pub type BatchingModeF32 = sampler::BatchingMode<f32>;
pub type StepCostModelF32 = sim::StepCostModel<f32>;
pub type InferenceCostModelF32 = sim::InferenceCostModel<f32>;
