//! Per-bucket batch-size calibration against an analytic memory model.
//!
//! For every bucket the batch size is searched at the bucket's upper-bound
//! corner `(duration bound, token bound)`: doubling from 1 until the model
//! exceeds capacity (or `max_batch` is hit), then bisection between the last
//! fitting and first failing size.
//!
//! `BucketBatchSizes` text format (tab separated, LF):
//!
//! ```text
//! bucket-batch-sizes v1
//! buckets 4
//! 0    10.0    50    131
//! 1    10.0    100    88
//! ...
//! ```
//!
//! Columns: flat index, duration bound, token bound (`-` for a 1D spec),
//! batch size. Readers use the first and last column.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bucketing::BucketSpec;
use crate::datamodel::MiniBatch;
use crate::error::{Error, Result};
use crate::ingest::format_real;
use crate::scalar::Real;

pub const DEFAULT_MAX_BATCH: usize = 1 << 16;

/// `m(B, Tin, Tout) = c0 + B * (c1 Tin + c2 Tin^2 + c3 Tout + c4 Tout^2 + c5 Tin Tout)`,
/// with `Tin` in seconds and `Tout` in tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel<T> {
    pub coeffs: [T; 6],
}

impl<T: Real> MemoryModel<T> {
    pub fn new(coeffs: [T; 6]) -> Result<Self> {
        if coeffs.iter().any(|c| !(*c >= T::zero()) || !c.is_finite()) {
            return Err(Error::invalid(
                "memory model coefficients must be finite and non-negative",
            ));
        }
        Ok(Self { coeffs })
    }

    /// `m = c1 * B * Tin`.
    pub fn linear(c1: T) -> Result<Self> {
        let z = T::zero();
        Self::new([z, c1, z, z, z, z])
    }

    /// Reference transformer-like model in GB-like units: fixed 10 for
    /// weights and optimizer state, a linear encoder term, quadratic
    /// self-attention in both axes and a cross-attention product term.
    /// Coefficients are an artifact choice.
    pub fn transformer_like() -> Self {
        Self {
            coeffs: [10.0, 0.004, 0.0012, 0.0005, 1.0e-6, 2.0e-5].map(T::lit),
        }
    }

    /// Per-sample cost at the given shape.
    #[inline]
    pub fn per_sample(&self, tin: T, tout: T) -> T {
        let [_, c1, c2, c3, c4, c5] = self.coeffs;
        c1 * tin + c2 * tin * tin + c3 * tout + c4 * tout * tout + c5 * tin * tout
    }

    #[inline]
    pub fn eval(&self, batch: usize, tin: T, tout: T) -> T {
        self.coeffs[0] + T::from_count(batch as u64) * self.per_sample(tin, tout)
    }

    pub fn eval_batch(&self, batch: &MiniBatch<T>) -> T {
        self.eval(
            batch.len(),
            batch.max_input(),
            T::from_count(batch.max_output()),
        )
    }

    fn uses_output(&self) -> bool {
        let c = &self.coeffs;
        c[3] > T::zero() || c[4] > T::zero() || c[5] > T::zero()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BucketBatchSizes {
    sizes: Vec<usize>,
}

impl BucketBatchSizes {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::invalid(
                "batch sizes must be positive for every bucket",
            ));
        }
        Ok(Self { sizes })
    }

    pub fn get(&self, flat: usize) -> Option<usize> {
        self.sizes.get(flat).copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn max(&self) -> usize {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    pub fn to_text<T: Real>(&self, spec: &BucketSpec<T>) -> Result<String> {
        if spec.num_buckets() != self.sizes.len() {
            return Err(Error::invalid("batch sizes do not match the bucket spec"));
        }
        let mut out = String::from("bucket-batch-sizes v1\n");
        let _ = writeln!(out, "buckets {}", self.sizes.len());
        for (flat, size) in self.sizes.iter().enumerate() {
            let (d, t) = spec.corner(flat);
            let t = t.map_or_else(|| "-".to_string(), |t| t.to_string());
            let _ = writeln!(out, "{flat}\t{}\t{t}\t{size}", format_real(d));
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |line: usize, message: &str| Error::Parse {
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines();
        if lines.next() != Some("bucket-batch-sizes v1") {
            return Err(perr(1, "expected header `bucket-batch-sizes v1`"));
        }
        let n = lines
            .next()
            .and_then(|l| l.strip_prefix("buckets "))
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| perr(2, "expected `buckets <N>`"))?;
        let mut sizes = Vec::with_capacity(n);
        for (k, line) in lines.enumerate() {
            let line_no = k + 3;
            if line.is_empty() && k >= n {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(perr(line_no, "expected 4 tab-separated columns"));
            }
            let flat: usize = cols[0]
                .parse()
                .map_err(|_| perr(line_no, "bad flat index"))?;
            if flat != k {
                return Err(perr(line_no, "flat indices must be consecutive from 0"));
            }
            sizes.push(
                cols[3]
                    .parse()
                    .map_err(|_| perr(line_no, "bad batch size"))?,
            );
        }
        if sizes.len() != n {
            return Err(perr(n + 2, "bucket count does not match header"));
        }
        Self::new(sizes)
    }
}

/// Largest `B <= max_batch` with `fits(B)`, assuming `fits` is monotone and
/// `fits(1)` holds. Returns the number of probes as well.
fn search_max(max_batch: usize, fits: impl Fn(usize) -> bool) -> (usize, usize) {
    let mut probes = 0;
    let mut probe = |b| {
        probes += 1;
        fits(b)
    };
    // Doubling: `lo` always fits, `hi` (if any) does not.
    let mut lo = 1;
    let mut hi = None;
    while lo < max_batch {
        let next = (lo * 2).min(max_batch);
        if probe(next) {
            lo = next;
        } else {
            hi = Some(next);
            break;
        }
    }
    let Some(mut hi) = hi else {
        return (lo, probes);
    };
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if probe(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, probes)
}

/// Maximal batch size per flat bucket such that the model at the bucket
/// corner stays within `capacity`.
pub fn oomptimize<T: Real>(
    spec: &BucketSpec<T>,
    model: &MemoryModel<T>,
    capacity: T,
    max_batch: usize,
) -> Result<BucketBatchSizes> {
    if !(capacity > T::zero()) {
        return Err(Error::invalid("capacity must be positive"));
    }
    if max_batch == 0 {
        return Err(Error::invalid("max_batch must be at least 1"));
    }
    if !spec.is_2d() && model.uses_output() {
        return Err(Error::invalid(
            "memory model depends on output length but the bucket spec has no token bounds",
        ));
    }
    let sizes = (0..spec.num_buckets())
        .map(|flat| {
            let (tin, tout) = spec.corner(flat);
            let tout = T::from_count(tout.unwrap_or(0));
            let first = model.eval(1, tin, tout);
            if first > capacity {
                return Err(Error::Calibration {
                    bucket: flat,
                    memory: first.as_f64(),
                    capacity: capacity.as_f64(),
                });
            }
            Ok(search_max(max_batch, |b| model.eval(b, tin, tout) <= capacity).0)
        })
        .collect::<Result<Vec<_>>>()?;
    BucketBatchSizes::new(sizes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryTrace<T> {
    pub values: Vec<T>,
    pub max: T,
    pub mean: T,
    /// Population standard deviation over the mean; zero for an empty trace.
    pub cv: T,
}

pub fn memory_trace<'a, T, I>(batches: I, model: &MemoryModel<T>) -> MemoryTrace<T>
where
    T: Real,
    I: IntoIterator<Item = &'a MiniBatch<T>>,
{
    let values: Vec<T> = batches.into_iter().map(|b| model.eval_batch(b)).collect();
    MemoryTrace::from_values(values)
}

impl<T: Real> MemoryTrace<T> {
    pub fn from_values(values: Vec<T>) -> Self {
        if values.is_empty() {
            return Self {
                values,
                max: T::zero(),
                mean: T::zero(),
                cv: T::zero(),
            };
        }
        let n = T::from_count(values.len() as u64);
        let max = values.iter().copied().fold(T::neg_infinity(), T::max);
        let mean = values.iter().copied().sum::<T>() / n;
        let var = values.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
        let cv = if mean > T::zero() {
            var.sqrt() / mean
        } else {
            T::zero()
        };
        Self {
            values,
            max,
            mean,
            cv,
        }
    }
}
