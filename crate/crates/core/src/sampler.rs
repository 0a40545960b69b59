//! Dynamic bucketing mini-batch sampler.
//!
//! Samples are pulled from a stream, passed through an optional TPS filter,
//! allocated to a bucket and queued FIFO per bucket. The buffer holds at
//! most `buffer_capacity` queued samples across all buckets and is topped up
//! before every selection. A bucket is eligible when it holds a ready batch
//! (or the stream has ended and it is non-empty); one eligible bucket is
//! picked per step and its batch emitted.
//!
//! When the buffer is full and no bucket holds a ready batch, every
//! non-empty bucket becomes eligible and yields a partial batch, so a small
//! buffer can never stall the sampler.
//!
//! With a [`SyncConfig`] the choice is rank-synchronized: a target bucket is
//! drawn from `(shared_seed, step)` alone and the closest eligible bucket by
//! flat index is used when the target is not eligible. Without it, a bucket
//! is drawn uniformly (or by occupancy) among the eligible ones from
//! `(seed, step)`.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::Serialize;

use crate::bucketing::{Allocation, AllocationPolicy, BucketSpec, DiscardReason};
use crate::datamodel::{padding_stats, tps, MiniBatch, PaddingStats, Sample};
use crate::error::{Error, Result};
use crate::oomptimizer::BucketBatchSizes;
use crate::rng::{bounded, hash_step, unit_f64};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub enum BatchingMode<T> {
    /// Accumulate until the cumulative duration reaches the threshold
    /// (seconds); the crossing sample is included.
    DurationHeuristic {
        threshold: T,
    },
    /// Stream order, fixed size, padded to a fixed shape. `pad_to_output`
    /// of `None` pads tokens to the batch maximum.
    FixedBatch {
        size: usize,
        pad_to_input: T,
        pad_to_output: Option<u64>,
    },
    PerBucketSizes(BucketBatchSizes),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionWeighting {
    #[default]
    Uniform,
    /// Probability proportional to queued samples (unsynchronized mode only).
    Occupancy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncConfig {
    pub shared_seed: u64,
    pub rank: usize,
    pub world_size: usize,
}

impl SyncConfig {
    pub fn new(shared_seed: u64, rank: usize, world_size: usize) -> Result<Self> {
        if world_size == 0 || rank >= world_size {
            return Err(Error::invalid(format!(
                "rank {rank} outside world of size {world_size}"
            )));
        }
        Ok(Self {
            shared_seed,
            rank,
            world_size,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig<T> {
    pub spec: BucketSpec<T>,
    pub buffer_capacity: usize,
    pub batching: BatchingMode<T>,
    pub tps_threshold: Option<T>,
    pub allocation: AllocationPolicy,
    pub sync: Option<SyncConfig>,
    pub seed: u64,
    pub weighting: SelectionWeighting,
}

impl<T: Real> SamplerConfig<T> {
    pub fn new(spec: BucketSpec<T>, batching: BatchingMode<T>) -> Self {
        Self {
            spec,
            buffer_capacity: 10_000,
            batching,
            tps_threshold: None,
            allocation: AllocationPolicy::Strict,
            sync: None,
            seed: 0,
            weighting: SelectionWeighting::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.buffer_capacity == 0 {
            return Err(Error::invalid("buffer capacity must be at least 1"));
        }
        if let Some(th) = self.tps_threshold {
            if !(th > T::zero()) {
                return Err(Error::invalid("TPS threshold must be positive"));
            }
        }
        if let Some(sync) = &self.sync {
            SyncConfig::new(sync.shared_seed, sync.rank, sync.world_size)?;
        }
        match &self.batching {
            BatchingMode::DurationHeuristic { threshold } => {
                if !(*threshold > T::zero()) || !threshold.is_finite() {
                    return Err(Error::invalid("duration threshold must be positive"));
                }
            }
            BatchingMode::FixedBatch {
                size, pad_to_input, ..
            } => {
                if *size == 0 {
                    return Err(Error::invalid("fixed batch size must be at least 1"));
                }
                if !(*pad_to_input > T::zero()) {
                    return Err(Error::invalid("pad-to duration must be positive"));
                }
            }
            BatchingMode::PerBucketSizes(sizes) => {
                if sizes.len() != self.spec.num_buckets() {
                    return Err(Error::invalid(format!(
                        "{} batch sizes for {} buckets",
                        sizes.len(),
                        self.spec.num_buckets()
                    )));
                }
                if self.buffer_capacity < sizes.max() {
                    return Err(Error::invalid(format!(
                        "buffer capacity {} below largest bucket batch size {}",
                        self.buffer_capacity,
                        sizes.max()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TpsDecision {
    Keep,
    Drop,
}

/// Drops samples whose token rate is strictly above `threshold`.
#[inline]
pub fn filter_tps<T: Real>(sample: &Sample<T>, threshold: T) -> TpsDecision {
    if tps(sample) > threshold {
        TpsDecision::Drop
    } else {
        TpsDecision::Keep
    }
}

/// Target bucket for a synchronized step: a function of `(shared_seed, step)`
/// only, identical on every rank.
#[inline]
pub fn sync_target(shared_seed: u64, step: u64, total_buckets: usize) -> usize {
    bounded(hash_step(shared_seed, step), total_buckets)
}

/// Rank-synchronized bucket choice: the shared target if it is ready,
/// otherwise the ready bucket closest by flat index (lower index on ties).
pub fn select_bucket_synced(
    sync: &SyncConfig,
    step: u64,
    ready: &[usize],
    total_buckets: usize,
) -> Result<usize> {
    if ready.is_empty() {
        return Err(Error::invalid("no ready bucket to select from"));
    }
    if total_buckets == 0 || ready.iter().any(|&b| b >= total_buckets) {
        return Err(Error::invalid("ready bucket index out of range"));
    }
    let t = sync_target(sync.shared_seed, step, total_buckets);
    Ok(closest(t, ready))
}

fn closest(target: usize, ready: &[usize]) -> usize {
    *ready
        .iter()
        .min_by_key(|&&b| (b.abs_diff(target), b))
        .expect("non-empty ready set")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplerStats<T> {
    pub batches_emitted: u64,
    pub samples_emitted: u64,
    pub samples_filtered_tps: u64,
    pub samples_discarded_allocation: u64,
    pub mean_batch_size: T,
    pub padding: PaddingStats<T>,
    pub fallback_selections: u64,
}

impl<T: Real> Default for SamplerStats<T> {
    fn default() -> Self {
        Self {
            batches_emitted: 0,
            samples_emitted: 0,
            samples_filtered_tps: 0,
            samples_discarded_allocation: 0,
            mean_batch_size: T::zero(),
            padding: PaddingStats::default(),
            fallback_selections: 0,
        }
    }
}

impl<T: Real> SamplerStats<T> {
    fn record(&mut self, batch: &MiniBatch<T>, pad: &PaddingStats<T>) {
        self.batches_emitted += 1;
        self.samples_emitted += batch.len() as u64;
        self.mean_batch_size =
            T::from_count(self.samples_emitted) / T::from_count(self.batches_emitted);
        self.padding.accumulate(pad);
    }

    /// `key=value` lines in a fixed order.
    pub fn to_kv_text(&self) -> String {
        let p = &self.padding;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("batches_emitted", self.batches_emitted.to_string());
        kv("samples_emitted", self.samples_emitted.to_string());
        kv(
            "samples_filtered_tps",
            self.samples_filtered_tps.to_string(),
        );
        kv(
            "samples_discarded_allocation",
            self.samples_discarded_allocation.to_string(),
        );
        kv("mean_batch_size", format!("{:.6}", self.mean_batch_size));
        kv("input_pad_frac", format!("{:.6}", p.input_pad_frac));
        kv("output_pad_frac", format!("{:.6}", p.output_pad_frac));
        kv("total_input_cells", format!("{:.6}", p.total_input_cells));
        kv("padded_input_cells", format!("{:.6}", p.padded_input_cells));
        kv("total_output_cells", p.total_output_cells.to_string());
        kv("padded_output_cells", p.padded_output_cells.to_string());
        kv("fallback_selections", self.fallback_selections.to_string());
        out
    }
}

struct Bucket<T> {
    queue: VecDeque<Sample<T>>,
    duration: T,
}

impl<T: Real> Bucket<T> {
    fn push(&mut self, s: Sample<T>) {
        self.duration = self.duration + s.input_len;
        self.queue.push_back(s);
    }

    fn take(&mut self, n: usize) -> Vec<Sample<T>> {
        let out: Vec<_> = self.queue.drain(..n).collect();
        // Re-summing avoids drift from repeated subtraction.
        self.duration = self.queue.iter().map(|s| s.input_len).sum();
        out
    }
}

pub struct DynamicBucketSampler<T, I> {
    cfg: SamplerConfig<T>,
    source: I,
    exhausted: bool,
    buckets: Vec<Bucket<T>>,
    buffered: usize,
    step: u64,
    stats: SamplerStats<T>,
}

pub type SampleResultFn<T> = fn(Sample<T>) -> Result<Sample<T>>;

impl<T, J> DynamicBucketSampler<T, std::iter::Map<J, SampleResultFn<T>>>
where
    T: Real,
    J: Iterator<Item = Sample<T>>,
{
    /// Sampler over an infallible sample source.
    pub fn from_samples(
        cfg: SamplerConfig<T>,
        samples: impl IntoIterator<IntoIter = J>,
    ) -> Result<Self> {
        Self::new(cfg, samples.into_iter().map(Ok as SampleResultFn<T>))
    }
}

impl<T, I> DynamicBucketSampler<T, I>
where
    T: Real,
    I: Iterator<Item = Result<Sample<T>>>,
{
    pub fn new(cfg: SamplerConfig<T>, source: impl IntoIterator<IntoIter = I>) -> Result<Self> {
        cfg.validate()?;
        let n = match cfg.batching {
            BatchingMode::FixedBatch { .. } => 1,
            _ => cfg.spec.num_buckets(),
        };
        let buckets = (0..n)
            .map(|_| Bucket {
                queue: VecDeque::new(),
                duration: T::zero(),
            })
            .collect();
        Ok(Self {
            cfg,
            source: source.into_iter(),
            exhausted: false,
            buckets,
            buffered: 0,
            step: 0,
            stats: SamplerStats::default(),
        })
    }

    pub fn config(&self) -> &SamplerConfig<T> {
        &self.cfg
    }

    pub fn stats(&self) -> &SamplerStats<T> {
        &self.stats
    }

    pub fn into_stats(self) -> SamplerStats<T> {
        self.stats
    }

    /// Batches emitted so far; the step index used for bucket selection.
    pub fn step(&self) -> u64 {
        self.step
    }

    fn route(&self, s: &Sample<T>) -> Allocation {
        if let Some(th) = self.cfg.tps_threshold {
            if filter_tps(s, th) == TpsDecision::Drop {
                return Allocation::Discarded(DiscardReason::TpsFiltered);
            }
        }
        match &self.cfg.batching {
            BatchingMode::FixedBatch {
                pad_to_input,
                pad_to_output,
                ..
            } => {
                if s.input_len > *pad_to_input {
                    Allocation::Discarded(DiscardReason::ExceedsMaxDuration)
                } else if pad_to_output.is_some_and(|p| s.output_len > p) {
                    Allocation::Discarded(DiscardReason::ExceedsTokenBoundStrict)
                } else {
                    Allocation::Assigned(0)
                }
            }
            _ => self.cfg.allocation.allocate(s, &self.cfg.spec),
        }
    }

    fn refill(&mut self, want: usize) -> Result<()> {
        while !self.exhausted && self.buffered < want {
            match self.source.next() {
                None => self.exhausted = true,
                Some(Err(e)) => {
                    self.exhausted = true;
                    return Err(e);
                }
                Some(Ok(s)) => match self.route(&s) {
                    Allocation::Assigned(b) => {
                        self.buckets[b].push(s);
                        self.buffered += 1;
                    }
                    Allocation::Discarded(DiscardReason::TpsFiltered) => {
                        self.stats.samples_filtered_tps += 1
                    }
                    Allocation::Discarded(_) => self.stats.samples_discarded_allocation += 1,
                },
            }
        }
        Ok(())
    }

    fn is_ready(&self, b: usize) -> bool {
        let bucket = &self.buckets[b];
        match &self.cfg.batching {
            BatchingMode::DurationHeuristic { threshold } => bucket.duration >= *threshold,
            BatchingMode::PerBucketSizes(sizes) => {
                bucket.queue.len() >= sizes.get(b).expect("validated size table")
            }
            BatchingMode::FixedBatch { size, .. } => bucket.queue.len() >= *size,
        }
    }

    /// Length of the batch bucket `b` emits now: the mode's batch if ready,
    /// otherwise the whole queue.
    fn batch_len(&self, b: usize) -> usize {
        let queue = &self.buckets[b].queue;
        if !self.is_ready(b) {
            return queue.len();
        }
        match &self.cfg.batching {
            BatchingMode::DurationHeuristic { threshold } => {
                let mut acc = T::zero();
                for (k, s) in queue.iter().enumerate() {
                    acc = acc + s.input_len;
                    if acc >= *threshold {
                        return k + 1;
                    }
                }
                // Rounding in the running sum; the whole queue is one batch.
                queue.len()
            }
            BatchingMode::PerBucketSizes(sizes) => sizes.get(b).expect("validated size table"),
            BatchingMode::FixedBatch { size, .. } => *size,
        }
    }

    fn pick(&mut self, ids: &[usize]) -> usize {
        if let Some(sync) = &self.cfg.sync {
            let t = sync_target(sync.shared_seed, self.step, self.buckets.len());
            let chosen = closest(t, ids);
            if chosen != t {
                self.stats.fallback_selections += 1;
            }
            return chosen;
        }
        let h = hash_step(self.cfg.seed, self.step);
        match self.cfg.weighting {
            SelectionWeighting::Uniform => ids[bounded(h, ids.len())],
            SelectionWeighting::Occupancy => {
                let total: usize = ids.iter().map(|&b| self.buckets[b].queue.len()).sum();
                let mut r = (unit_f64(h) * total as f64) as usize;
                for &b in ids {
                    let w = self.buckets[b].queue.len();
                    if r < w {
                        return b;
                    }
                    r -= w;
                }
                *ids.last().unwrap()
            }
        }
    }

    pub fn next_batch(&mut self) -> Result<Option<MiniBatch<T>>> {
        let want = match self.cfg.batching {
            BatchingMode::FixedBatch { size, .. } => size,
            _ => self.cfg.buffer_capacity,
        };
        self.refill(want)?;

        let ready: Vec<usize> = (0..self.buckets.len())
            .filter(|&b| self.is_ready(b))
            .collect();
        let eligible = if self.exhausted || (ready.is_empty() && self.buffered >= want) {
            (0..self.buckets.len())
                .filter(|&b| !self.buckets[b].queue.is_empty())
                .collect()
        } else {
            ready
        };
        if eligible.is_empty() {
            return Ok(None);
        }

        let bucket = self.pick(&eligible);
        let n = self.batch_len(bucket);
        let samples = self.buckets[bucket].take(n);
        self.buffered -= samples.len();
        self.step += 1;

        let (batch, pad) = match &self.cfg.batching {
            BatchingMode::FixedBatch {
                pad_to_input,
                pad_to_output,
                ..
            } => {
                let batch = MiniBatch::new(samples, None)?;
                let out = pad_to_output.unwrap_or(batch.max_output());
                let pad = padding_stats(&batch, Some((*pad_to_input, out)))?;
                (batch, pad)
            }
            _ => {
                let batch = MiniBatch::new(samples, Some(bucket))?;
                let pad = padding_stats(&batch, None)?;
                (batch, pad)
            }
        };
        self.stats.record(&batch, &pad);
        Ok(Some(batch))
    }
}

impl<T, I> Iterator for DynamicBucketSampler<T, I>
where
    T: Real,
    I: Iterator<Item = Result<Sample<T>>>,
{
    type Item = Result<MiniBatch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_batch().transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bucketing::{allocate_strict, estimate_duration_bins, estimate_token_subbins};
    use crate::ingest::{generate, SynthSpec};
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn s(id: usize, d: f64, t: u64) -> Sample<f64> {
        Sample::new(format!("s{id}"), d, t).unwrap()
    }

    fn one_bucket() -> BucketSpec<f64> {
        BucketSpec::one_d(vec![100.0]).unwrap()
    }

    fn drain<I: Iterator<Item = Result<Sample<f64>>>>(
        sampler: DynamicBucketSampler<f64, I>,
    ) -> Vec<MiniBatch<f64>> {
        sampler.map(|b| b.unwrap()).collect()
    }

    #[test]
    fn tps_filter_boundary() {
        assert_eq!(filter_tps(&s(0, 10.0, 250), 25.0), TpsDecision::Keep);
        assert_eq!(filter_tps(&s(0, 10.0, 251), 25.0), TpsDecision::Drop);
        assert_eq!(filter_tps(&s(0, 10.0, 0), 25.0), TpsDecision::Keep);
    }

    #[test]
    fn duration_heuristic_first_batch_of_36() {
        let cfg = SamplerConfig::new(
            one_bucket(),
            BatchingMode::DurationHeuristic { threshold: 360.0 },
        );
        let samples: Vec<_> = (0..40).map(|i| s(i, 10.0, 5)).collect();
        let batches = drain(DynamicBucketSampler::from_samples(cfg, samples).unwrap());
        assert_eq!(batches[0].len(), 36);
        assert_eq!(batches[1].len(), 4);
        assert_eq!(batches.len(), 2);
    }

    #[test]
    fn per_bucket_sizes_chunks_fifo() {
        let cfg = SamplerConfig::new(
            one_bucket(),
            BatchingMode::PerBucketSizes(BucketBatchSizes::new(vec![4]).unwrap()),
        );
        let samples: Vec<_> = (0..6).map(|i| s(i, 1.0, 1)).collect();
        let batches = drain(DynamicBucketSampler::from_samples(cfg, samples).unwrap());
        let sizes: Vec<_> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, [4, 2]);
        let ids: Vec<_> = batches
            .iter()
            .flat_map(|b| b.samples().iter().map(|x| x.id.clone()))
            .collect();
        assert_eq!(ids, ["s0", "s1", "s2", "s3", "s4", "s5"]);
    }

    #[test]
    fn fixed_batch_pads_to_shape_and_keeps_order() {
        let mut cfg = SamplerConfig::new(
            one_bucket(),
            BatchingMode::FixedBatch {
                size: 2,
                pad_to_input: 40.0,
                pad_to_output: None,
            },
        );
        cfg.tps_threshold = Some(25.0);
        let samples = vec![
            s(0, 10.0, 5),
            s(1, 10.0, 5),
            s(2, 1.0, 100),
            s(3, 50.0, 1),
            s(4, 20.0, 10),
        ];
        let mut sampler = DynamicBucketSampler::from_samples(cfg, samples).unwrap();
        let b = sampler.next_batch().unwrap().unwrap();
        assert_eq!(b.bucket_id(), None);
        assert_eq!(sampler.stats().padding.input_pad_frac, 0.75);
        let b2 = sampler.next_batch().unwrap().unwrap();
        assert_eq!(b2.samples()[0].id, "s4");
        assert!(sampler.next_batch().unwrap().is_none());
        let st = sampler.stats();
        assert_eq!(st.samples_filtered_tps, 1);
        assert_eq!(st.samples_discarded_allocation, 1);
        assert_eq!(st.samples_emitted, 3);
        assert_eq!(st.mean_batch_size, 1.5);
    }

    #[test]
    fn config_validation() {
        let sizes = BucketBatchSizes::new(vec![40]).unwrap();
        let mut cfg = SamplerConfig::new(one_bucket(), BatchingMode::PerBucketSizes(sizes));
        cfg.buffer_capacity = 10;
        assert!(cfg.validate().is_err());
        let cfg = SamplerConfig::new(
            one_bucket(),
            BatchingMode::PerBucketSizes(BucketBatchSizes::new(vec![1, 2]).unwrap()),
        );
        assert!(cfg.validate().is_err());
        let cfg = SamplerConfig::new(
            one_bucket(),
            BatchingMode::DurationHeuristic { threshold: 0.0 },
        );
        assert!(cfg.validate().is_err());
        let mut cfg = SamplerConfig::new(
            one_bucket(),
            BatchingMode::DurationHeuristic { threshold: 1.0 },
        );
        cfg.sync = Some(SyncConfig {
            shared_seed: 1,
            rank: 4,
            world_size: 4,
        });
        assert!(cfg.validate().is_err());
        assert!(SyncConfig::new(0, 0, 0).is_err());
    }

    #[test]
    fn synced_selection_examples() {
        let all: Vec<usize> = (0..10).collect();
        let picks: Vec<usize> = (0..4)
            .map(|rank| {
                select_bucket_synced(&SyncConfig::new(99, rank, 4).unwrap(), 17, &all, 10).unwrap()
            })
            .collect();
        assert!(picks.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(picks[0], sync_target(99, 17, 10));

        assert_eq!(closest(5, &[3, 4, 6]), 4);
        assert_eq!(closest(5, &[6, 4, 3]), 4);
        assert_eq!(closest(0, &[7, 9]), 7);

        let one = SyncConfig::new(1, 0, 1).unwrap();
        for step in 0..50 {
            assert_eq!(select_bucket_synced(&one, step, &[0], 1).unwrap(), 0);
        }
        assert!(select_bucket_synced(&one, 0, &[], 1).is_err());
    }

    #[test]
    fn synced_selection_targets_cover_range() {
        let mut hits = vec![0usize; 8];
        for step in 0..8000 {
            hits[sync_target(5, step, 8)] += 1;
        }
        assert!(hits.iter().all(|&h| (800..1200).contains(&h)), "{hits:?}");
    }

    #[test]
    fn tiny_buffer_forces_partial_batches() {
        let mut cfg = SamplerConfig::new(
            BucketSpec::one_d(vec![1.0, 2.0, 3.0]).unwrap(),
            BatchingMode::DurationHeuristic { threshold: 1000.0 },
        );
        cfg.buffer_capacity = 3;
        let samples: Vec<_> = (0..30).map(|i| s(i, 0.5 + (i % 3) as f64, 1)).collect();
        let batches = drain(DynamicBucketSampler::from_samples(cfg, samples).unwrap());
        assert_eq!(batches.iter().map(|b| b.len()).sum::<usize>(), 30);
    }

    #[test]
    fn source_error_surfaces() {
        let cfg = SamplerConfig::new(
            one_bucket(),
            BatchingMode::DurationHeuristic { threshold: 5.0 },
        );
        let src = vec![
            Ok(s(0, 1.0, 1)),
            Err(Error::invalid("boom")),
            Ok(s(1, 1.0, 1)),
        ];
        let mut sampler = DynamicBucketSampler::new(cfg, src).unwrap();
        assert!(sampler.next_batch().is_err());
        assert_eq!(sampler.next_batch().unwrap().unwrap().len(), 1);
        assert!(sampler.next_batch().unwrap().is_none());
    }

    #[test]
    fn occupancy_weighting_emits_everything() {
        let mut cfg = SamplerConfig::new(
            BucketSpec::one_d(vec![1.0, 2.0, 3.0]).unwrap(),
            BatchingMode::PerBucketSizes(BucketBatchSizes::new(vec![3, 3, 3]).unwrap()),
        );
        cfg.weighting = SelectionWeighting::Occupancy;
        let samples: Vec<_> = (0..100).map(|i| s(i, 0.5 + (i % 3) as f64, 1)).collect();
        let batches = drain(DynamicBucketSampler::from_samples(cfg, samples).unwrap());
        assert_eq!(batches.iter().map(|b| b.len()).sum::<usize>(), 100);
    }

    #[test]
    fn kv_report_layout() {
        let st = SamplerStats::<f64>::default();
        let text = st.to_kv_text();
        assert!(text.starts_with("batches_emitted=0\nsamples_emitted=0\n"));
        assert!(text.ends_with("fallback_selections=0\n"));
    }

    fn stream_2d(n: u64, seed: u64) -> (Vec<Sample<f64>>, BucketSpec<f64>, BucketSpec<f64>) {
        let samples: Vec<Sample<f64>> =
            generate(&SynthSpec::default().with_count(n).with_seed(seed))
                .unwrap()
                .filter(|x| filter_tps(x, 25.0) == TpsDecision::Keep)
                .collect();
        let one = estimate_duration_bins(&samples, 30).unwrap();
        let d1 = estimate_token_subbins(&samples, &one, 1).unwrap();
        let d2 = estimate_token_subbins(&samples, &one, 2).unwrap();
        (samples, d1, d2)
    }

    #[test]
    fn two_d_padding_not_worse_than_one_d() {
        use crate::oomptimizer::{oomptimize, MemoryModel, DEFAULT_MAX_BATCH};
        let (samples, d1, d2) = stream_2d(60_000, 21);
        let model = MemoryModel::transformer_like();
        let run = |spec: &BucketSpec<f64>| {
            let sizes = oomptimize(spec, &model, 80.0, DEFAULT_MAX_BATCH).unwrap();
            let mut cfg = SamplerConfig::new(spec.clone(), BatchingMode::PerBucketSizes(sizes));
            cfg.buffer_capacity = 20_000;
            cfg.seed = 3;
            let mut sampler = DynamicBucketSampler::from_samples(cfg, samples.clone()).unwrap();
            while sampler.next_batch().unwrap().is_some() {}
            sampler.into_stats()
        };
        let a = run(&d1);
        let b = run(&d2);
        assert!(a.batches_emitted >= 100, "{}", a.batches_emitted);
        assert!(b.padding.output_pad_frac <= a.padding.output_pad_frac);
        assert!(b.padding.input_pad_frac <= a.padding.input_pad_frac + 0.01);
    }

    #[test]
    fn sync_property_with_different_data() {
        // Two ranks with different data but the same shared seed pick the
        // same buckets while every bucket always has a ready batch.
        let spec = BucketSpec::one_d(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mk = |rank: usize, seed: u64| {
            let mut cfg = SamplerConfig::new(
                spec.clone(),
                BatchingMode::PerBucketSizes(BucketBatchSizes::new(vec![2, 2, 2, 2]).unwrap()),
            );
            cfg.buffer_capacity = 400;
            cfg.seed = seed;
            cfg.sync = Some(SyncConfig::new(1234, rank, 2).unwrap());
            let samples: Vec<_> = (0..4000)
                .map(|i| s(i, 0.5 + ((i as u64 * seed) % 4) as f64, 1))
                .collect();
            DynamicBucketSampler::from_samples(cfg, samples).unwrap()
        };
        let mut a = mk(0, 7);
        let mut b = mk(1, 13);
        for _ in 0..150 {
            let x = a.next_batch().unwrap().unwrap();
            let y = b.next_batch().unwrap().unwrap();
            assert_eq!(x.bucket_id(), y.bucket_id());
        }
        assert_eq!(a.stats().fallback_selections, 0);
    }

    fn arb_stream() -> impl Strategy<Value = Vec<(f64, u64)>> {
        prop::collection::vec((0.1f64..12.0, 0u64..200), 0..300)
    }

    fn arb_mode() -> impl Strategy<Value = u8> {
        0u8..3
    }

    fn build(mode: u8, spec: &BucketSpec<f64>, seed: u64, flexible: bool) -> SamplerConfig<f64> {
        let batching = match mode {
            0 => BatchingMode::DurationHeuristic { threshold: 20.0 },
            1 => BatchingMode::PerBucketSizes(
                BucketBatchSizes::new(vec![3; spec.num_buckets()]).unwrap(),
            ),
            _ => BatchingMode::FixedBatch {
                size: 4,
                pad_to_input: 10.0,
                pad_to_output: Some(150),
            },
        };
        let mut cfg = SamplerConfig::new(spec.clone(), batching);
        cfg.buffer_capacity = 25;
        cfg.seed = seed;
        cfg.tps_threshold = Some(30.0);
        cfg.allocation = if flexible {
            AllocationPolicy::Flexible
        } else {
            AllocationPolicy::Strict
        };
        cfg
    }

    fn small_spec() -> BucketSpec<f64> {
        BucketSpec::new(
            vec![2.0, 5.0, 9.0],
            Some(vec![vec![20, 60], vec![50, 120], vec![90, 180]]),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn exactly_once_emission(v in arb_stream(), mode in arb_mode(), seed in any::<u64>(), flexible in any::<bool>()) {
            let samples: Vec<_> = v.iter().enumerate().map(|(i, &(d, t))| s(i, d, t)).collect();
            let spec = small_spec();
            let cfg = build(mode, &spec, seed, flexible);
            let mut sampler = DynamicBucketSampler::from_samples(cfg.clone(), samples.clone()).unwrap();
            let mut got: HashMap<String, usize> = HashMap::new();
            while let Some(b) = sampler.next_batch().unwrap() {
                for x in b.samples() {
                    *got.entry(x.id.clone()).or_default() += 1;
                    if let Some(bucket) = b.bucket_id() {
                        prop_assert!(spec.fits(x, bucket));
                    }
                }
            }
            let mut expected = 0;
            for x in &samples {
                let keep = filter_tps(x, 30.0) == TpsDecision::Keep && match mode {
                    2 => x.input_len <= 10.0 && x.output_len <= 150,
                    _ => matches!(cfg.allocation.allocate(x, &spec), Allocation::Assigned(_)),
                };
                if keep {
                    expected += 1;
                    prop_assert_eq!(got.get(&x.id).copied(), Some(1));
                } else {
                    prop_assert!(!got.contains_key(&x.id));
                }
            }
            let st = sampler.stats();
            prop_assert_eq!(st.samples_emitted as usize, expected);
            prop_assert_eq!(
                st.samples_emitted + st.samples_filtered_tps + st.samples_discarded_allocation,
                samples.len() as u64
            );
        }

        #[test]
        fn deterministic_batches(v in arb_stream(), mode in arb_mode(), seed in any::<u64>()) {
            let samples: Vec<_> = v.iter().enumerate().map(|(i, &(d, t))| s(i, d, t)).collect();
            let run = || {
                let cfg = build(mode, &small_spec(), seed, false);
                drain(DynamicBucketSampler::from_samples(cfg, samples.clone()).unwrap())
            };
            prop_assert_eq!(run(), run());
        }

        #[test]
        fn duration_heuristic_batch_window(v in prop::collection::vec((0.1f64..12.0, 0u64..50), 0..400), seed in any::<u64>()) {
            let samples: Vec<_> = v.iter().enumerate().map(|(i, &(d, t))| s(i, d, t)).collect();
            let spec = BucketSpec::one_d(vec![3.0, 6.0, 12.0]).unwrap();
            let mut cfg = SamplerConfig::new(spec, BatchingMode::DurationHeuristic { threshold: 20.0 });
            cfg.buffer_capacity = 10_000;
            cfg.seed = seed;
            let mut sampler = DynamicBucketSampler::from_samples(cfg, samples).unwrap();
            // With an unbounded buffer the whole stream is ingested first, so
            // only the last batch of each bucket may fall short.
            let mut last_of_bucket: HashMap<usize, usize> = HashMap::new();
            let mut batches = Vec::new();
            while let Some(b) = sampler.next_batch().unwrap() {
                last_of_bucket.insert(b.bucket_id().unwrap(), batches.len());
                batches.push(b);
            }
            for (k, b) in batches.iter().enumerate() {
                let total = b.total_input();
                let longest = b.max_input();
                prop_assert!(total < 20.0 + longest);
                if last_of_bucket[&b.bucket_id().unwrap()] != k {
                    prop_assert!(total >= 20.0);
                }
            }
        }

        #[test]
        fn strict_batches_respect_bucket_bounds(v in arb_stream(), seed in any::<u64>()) {
            let samples: Vec<_> = v.iter().enumerate().map(|(i, &(d, t))| s(i, d, t)).collect();
            let spec = small_spec();
            let cfg = build(1, &spec, seed, false);
            for b in drain(DynamicBucketSampler::from_samples(cfg, samples).unwrap()) {
                let bucket = b.bucket_id().unwrap();
                prop_assert!(b.max_input() <= spec.corner(bucket).0);
                for x in b.samples() {
                    prop_assert_eq!(allocate_strict(x, &spec), Allocation::Assigned(bucket));
                }
            }
        }
    }
}
