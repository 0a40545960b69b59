//! Sample records, mini-batches and padding accounting.
//!
//! A mini-batch is padded along two axes: the input axis to the longest
//! duration in the batch and the output axis to the longest token sequence.
//! Input cells are counted in seconds, output cells in token slots.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample<T> {
    pub id: String,
    /// Input duration in seconds; always positive.
    pub input_len: T,
    /// Output length in tokens.
    pub output_len: u64,
}

impl<T: Real> Sample<T> {
    pub fn new(id: impl Into<String>, input_len: T, output_len: u64) -> Result<Self> {
        if !(input_len > T::zero()) || !input_len.is_finite() {
            return Err(Error::invalid(format!(
                "sample duration must be positive and finite, got {input_len}"
            )));
        }
        Ok(Self {
            id: id.into(),
            input_len,
            output_len,
        })
    }

    /// Output tokens per input second.
    #[inline]
    pub fn tps(&self) -> T {
        tps(self)
    }
}

/// Tokens per second of a sample (`output_len / input_len`).
#[inline]
pub fn tps<T: Real>(sample: &Sample<T>) -> T {
    T::from_count(sample.output_len) / sample.input_len
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch<T> {
    samples: Vec<Sample<T>>,
    bucket_id: Option<usize>,
    max_input: T,
    max_output: u64,
}

impl<T: Real> MiniBatch<T> {
    pub fn new(samples: Vec<Sample<T>>, bucket_id: Option<usize>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("mini-batch must contain at least one sample"))?;
        let mut max_input = first.input_len;
        let mut max_output = first.output_len;
        for s in &samples[1..] {
            max_input = max_input.max(s.input_len);
            max_output = max_output.max(s.output_len);
        }
        Ok(Self {
            samples,
            bucket_id,
            max_input,
            max_output,
        })
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample<T>> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn bucket_id(&self) -> Option<usize> {
        self.bucket_id
    }

    pub fn max_input(&self) -> T {
        self.max_input
    }

    pub fn max_output(&self) -> u64 {
        self.max_output
    }

    pub fn total_input(&self) -> T {
        self.samples.iter().map(|s| s.input_len).sum()
    }

    pub fn total_output(&self) -> u64 {
        self.samples.iter().map(|s| s.output_len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PaddingStats<T> {
    pub input_pad_frac: T,
    pub output_pad_frac: T,
    /// Seconds x rows.
    pub total_input_cells: T,
    pub padded_input_cells: T,
    pub total_output_cells: u64,
    pub padded_output_cells: u64,
}

impl<T: Real> Default for PaddingStats<T> {
    fn default() -> Self {
        Self {
            input_pad_frac: T::zero(),
            output_pad_frac: T::zero(),
            total_input_cells: T::zero(),
            padded_input_cells: T::zero(),
            total_output_cells: 0,
            padded_output_cells: 0,
        }
    }
}

impl<T: Real> PaddingStats<T> {
    fn from_cells(total_in: T, padded_in: T, total_out: u64, padded_out: u64) -> Self {
        // Rounding in the duration sum can leave a tiny negative residue.
        let padded_in = padded_in.max(T::zero()).min(total_in);
        let input_pad_frac = if total_in > T::zero() {
            padded_in / total_in
        } else {
            T::zero()
        };
        let output_pad_frac = if total_out > 0 {
            T::from_count(padded_out) / T::from_count(total_out)
        } else {
            T::zero()
        };
        Self {
            input_pad_frac,
            output_pad_frac,
            total_input_cells: total_in,
            padded_input_cells: padded_in,
            total_output_cells: total_out,
            padded_output_cells: padded_out,
        }
    }

    /// Adds another batch's cell counts and recomputes the fractions.
    pub fn accumulate(&mut self, other: &PaddingStats<T>) {
        *self = Self::from_cells(
            self.total_input_cells + other.total_input_cells,
            self.padded_input_cells + other.padded_input_cells,
            self.total_output_cells + other.total_output_cells,
            self.padded_output_cells + other.padded_output_cells,
        );
    }
}

/// Padded-cell accounting for one batch, optionally against a fixed
/// `(input_seconds, output_tokens)` shape instead of the batch maxima.
pub fn padding_stats<T: Real>(
    batch: &MiniBatch<T>,
    pad_to: Option<(T, u64)>,
) -> Result<PaddingStats<T>> {
    let (pad_in, pad_out) = match pad_to {
        Some((pi, po)) => {
            if pi < batch.max_input() || po < batch.max_output() {
                return Err(Error::invalid(format!(
                    "pad_to ({pi}s, {po} tok) smaller than batch maxima ({}s, {} tok)",
                    batch.max_input(),
                    batch.max_output()
                )));
            }
            (pi, po)
        }
        None => (batch.max_input(), batch.max_output()),
    };
    let rows = batch.len() as u64;
    let total_in = T::from_count(rows) * pad_in;
    let total_out = rows * pad_out;
    let padded_in = batch.samples().iter().map(|s| pad_in - s.input_len).sum();
    Ok(PaddingStats::from_cells(
        total_in,
        padded_in,
        total_out,
        total_out - batch.total_output(),
    ))
}

/// Nearest-rank percentile of an ascending slice; `p` in `(0, 100]`.
pub fn nearest_rank<T: Copy>(sorted: &[T], p: f64) -> Option<T> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TpsSummary<T> {
    pub mean: T,
    pub p50: T,
    pub p90: T,
    pub p99: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TpsBin<T> {
    /// Bin covers `[lo, hi)`.
    pub lo: T,
    pub hi: T,
    pub count: usize,
    /// `None` for empty bins.
    pub summary: Option<TpsSummary<T>>,
}

/// TPS distribution grouped into equal-width duration bins starting at zero.
///
/// Bins run from zero up to the bin holding the longest sample; bins in
/// between with no members are reported with count 0.
pub fn tps_histogram<T, I>(samples: I, bin_width: T) -> Result<Vec<TpsBin<T>>>
where
    T: Real,
    I: IntoIterator<Item = Sample<T>>,
{
    if !(bin_width > T::zero()) {
        return Err(Error::invalid("duration bin width must be positive"));
    }
    let mut per_bin: Vec<Vec<T>> = Vec::new();
    for s in samples {
        let k = (s.input_len / bin_width)
            .floor()
            .to_usize()
            .ok_or_else(|| Error::invalid("duration out of histogram range"))?;
        if per_bin.len() <= k {
            per_bin.resize_with(k + 1, Vec::new);
        }
        per_bin[k].push(tps(&s));
    }
    Ok(per_bin
        .into_iter()
        .enumerate()
        .map(|(k, mut rates)| {
            let lo = T::from_count(k as u64) * bin_width;
            let summary = (!rates.is_empty()).then(|| {
                rates.sort_by(|a, b| a.partial_cmp(b).expect("finite tps"));
                let mean = rates.iter().copied().sum::<T>() / T::from_count(rates.len() as u64);
                TpsSummary {
                    mean,
                    p50: nearest_rank(&rates, 50.0).unwrap(),
                    p90: nearest_rank(&rates, 90.0).unwrap(),
                    p99: nearest_rank(&rates, 99.0).unwrap(),
                }
            });
            TpsBin {
                lo,
                hi: lo + bin_width,
                count: rates.len(),
                summary,
            }
        })
        .collect())
}
