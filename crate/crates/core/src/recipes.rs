//! Preset sampler configurations for the batching-scheme ladder.
//!
//! | scheme | buckets           | batching                 | TPS filter |
//! |--------|-------------------|--------------------------|------------|
//! | A      | `bins` x 1        | duration heuristic       | no         |
//! | B      | `bins` x 1        | duration heuristic       | yes        |
//! | C      | `bins` x 1        | calibrated per bucket    | yes        |
//! | D      | `bins` x `sub`    | calibrated per bucket    | yes        |
//! | Fixed  | none              | fixed size, padded       | no         |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bucketing::{estimate_duration_bins, estimate_token_subbins, BucketSpec};
use crate::datamodel::Sample;
use crate::error::{Error, Result};
use crate::ingest::{generate, SynthSpec};
use crate::oomptimizer::{oomptimize, MemoryModel};
use crate::sampler::{filter_tps, BatchingMode, SamplerConfig, TpsDecision};
use crate::scalar::Real;
use crate::sim::{DdpSimConfig, StepCostModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(alias = "a")]
    A,
    #[serde(alias = "b")]
    B,
    #[serde(alias = "c")]
    C,
    #[serde(alias = "d")]
    D,
    #[serde(alias = "fixed")]
    Fixed,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Scheme::A),
            "b" => Ok(Scheme::B),
            "c" => Ok(Scheme::C),
            "d" => Ok(Scheme::D),
            "fixed" => Ok(Scheme::Fixed),
            _ => Err(Error::invalid(format!(
                "unknown scheme {s:?} (expected A, B, C, D or fixed)"
            ))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::A => "A",
            Scheme::B => "B",
            Scheme::C => "C",
            Scheme::D => "D",
            Scheme::Fixed => "fixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeParams<T> {
    pub bins: usize,
    pub sub_bins: usize,
    pub threshold: T,
    pub tps_threshold: T,
    pub model: MemoryModel<T>,
    pub capacity: T,
    pub max_batch: usize,
    pub buffer_capacity: usize,
    pub fixed_size: usize,
    /// Padded input length for the fixed scheme; longer samples are dropped.
    pub fixed_pad_to: T,
    pub seed: u64,
}

impl<T: Real> Default for SchemeParams<T> {
    fn default() -> Self {
        Self {
            bins: 30,
            sub_bins: 2,
            threshold: T::lit(360.0),
            tps_threshold: T::lit(25.0),
            model: MemoryModel::transformer_like(),
            capacity: T::lit(80.0),
            max_batch: crate::oomptimizer::DEFAULT_MAX_BATCH,
            buffer_capacity: 20_000,
            fixed_size: 768,
            fixed_pad_to: T::lit(40.0),
            seed: 0,
        }
    }
}

/// Builds the sampler configuration for `scheme`, estimating buckets (and
/// calibrating batch sizes where needed) on `samples`.
pub fn scheme_config<T: Real>(
    scheme: Scheme,
    samples: &[Sample<T>],
    p: &SchemeParams<T>,
) -> Result<SamplerConfig<T>> {
    if samples.is_empty() {
        return Err(Error::invalid("scheme presets need a non-empty manifest"));
    }
    let kept: Vec<&Sample<T>> = samples
        .iter()
        .filter(|s| filter_tps(s, p.tps_threshold) == TpsDecision::Keep)
        .collect();
    let heuristic = BatchingMode::DurationHeuristic {
        threshold: p.threshold,
    };
    let mut cfg = match scheme {
        Scheme::A => SamplerConfig::new(estimate_duration_bins(samples, p.bins)?, heuristic),
        Scheme::B => {
            let mut cfg = SamplerConfig::new(estimate_duration_bins(samples, p.bins)?, heuristic);
            cfg.tps_threshold = Some(p.tps_threshold);
            cfg
        }
        Scheme::C | Scheme::D => {
            let sub = if scheme == Scheme::C { 1 } else { p.sub_bins };
            let one = estimate_duration_bins(kept.iter().copied(), p.bins)?;
            let spec = estimate_token_subbins(kept.iter().copied(), &one, sub)?;
            let sizes = oomptimize(&spec, &p.model, p.capacity, p.max_batch)?;
            let mut cfg = SamplerConfig::new(spec, BatchingMode::PerBucketSizes(sizes));
            cfg.tps_threshold = Some(p.tps_threshold);
            cfg
        }
        Scheme::Fixed => SamplerConfig::new(
            BucketSpec::one_d(vec![p.fixed_pad_to])?,
            BatchingMode::FixedBatch {
                size: p.fixed_size,
                pad_to_input: p.fixed_pad_to,
                pad_to_output: None,
            },
        ),
    };
    cfg.buffer_capacity = p.buffer_capacity;
    cfg.seed = p.seed;
    Ok(cfg)
}

/// Data-parallel simulation preset: duration-heuristic batches over an
/// estimated 1D spec with the TPS filter on, every rank reading its own
/// stream of `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpParams<T> {
    pub bins: usize,
    pub threshold: T,
    pub buffer_capacity: usize,
    pub tps_threshold: Option<T>,
    pub cost: StepCostModel<T>,
    /// Per-rank population; `count` must cover `steps` batches.
    pub data: SynthSpec,
    /// Samples drawn (with the run seed) to estimate the bucket spec.
    pub estimation_count: u64,
}

impl<T: Real> Default for DdpParams<T> {
    fn default() -> Self {
        Self {
            bins: 30,
            threshold: T::lit(360.0),
            buffer_capacity: 10_000,
            tps_threshold: Some(T::lit(25.0)),
            cost: StepCostModel::quadratic(),
            data: SynthSpec::default().with_count(80_000),
            estimation_count: 20_000,
        }
    }
}

pub fn ddp_config<T: Real>(
    world_size: usize,
    steps: usize,
    seed: u64,
    p: &DdpParams<T>,
) -> Result<DdpSimConfig<T>> {
    let population = p
        .data
        .clone()
        .with_count(p.estimation_count)
        .with_seed(seed);
    let spec = estimate_duration_bins(generate::<T>(&population)?, p.bins)?;
    let mut sampler = SamplerConfig::new(
        spec,
        BatchingMode::DurationHeuristic {
            threshold: p.threshold,
        },
    );
    sampler.buffer_capacity = p.buffer_capacity;
    sampler.tps_threshold = p.tps_threshold;
    Ok(DdpSimConfig {
        world_size,
        steps,
        sampler,
        cost: p.cost,
        data: p.data.clone(),
        seed,
    })
}
