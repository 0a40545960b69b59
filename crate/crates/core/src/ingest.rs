//! JSONL sample manifests and the synthetic population generator.
//!
//! Manifest format: UTF-8, one JSON object per LF-terminated line with
//! exactly the keys `id` (string), `duration` (seconds) and `num_tokens`
//! (non-negative integer), written in that order:
//!
//! ```text
//! {"id":"syn-00000000","duration":6.211733215431843,"num_tokens":101}
//! ```
//!
//! Durations are written with the shortest representation that round-trips
//! the scalar type. Blank lines are ignored on read.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::Sample;
use crate::error::{Error, Result};
use crate::rng::DataRng;
use crate::scalar::Real;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    id: String,
    duration: serde_json::Number,
    num_tokens: u64,
}

/// Streaming manifest reader. Only the set of seen ids is retained.
pub struct ManifestReader<T, R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    seen: HashSet<String>,
    failed: bool,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Real, R: BufRead> ManifestReader<T, R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            seen: HashSet::new(),
            failed: false,
            _scalar: std::marker::PhantomData,
        }
    }

    fn parse(&mut self, line: &str) -> Result<Sample<T>> {
        let line_no = self.line_no;
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let rec: ManifestLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let duration = T::parse_decimal(&rec.duration.to_string())
            .ok_or_else(|| err(format!("unparseable duration {}", rec.duration)))?;
        let sample =
            Sample::new(rec.id, duration, rec.num_tokens).map_err(|e| err(e.to_string()))?;
        if !self.seen.insert(sample.id.clone()) {
            return Err(Error::DuplicateId {
                line: line_no,
                id: sample.id,
            });
        }
        Ok(sample)
    }
}

impl<T: Real, R: BufRead> Iterator for ManifestReader<T, R> {
    type Item = Result<Sample<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let r = self.parse(&line);
            self.failed = r.is_err();
            return Some(r);
        }
    }
}

pub fn read_manifest<T: Real>(
    path: impl AsRef<Path>,
) -> Result<ManifestReader<T, BufReader<File>>> {
    Ok(ManifestReader::new(BufReader::new(File::open(path)?)))
}

/// Reads a whole manifest into memory, stopping at the first error.
pub fn load_manifest<T: Real>(path: impl AsRef<Path>) -> Result<Vec<Sample<T>>> {
    read_manifest(path)?.collect()
}

#[derive(Serialize)]
struct ManifestLineOut<'a> {
    id: &'a str,
    duration: serde_json::Value,
    num_tokens: u64,
}

pub fn write_sample<T: Real, W: Write>(out: &mut W, s: &Sample<T>) -> Result<()> {
    // Format through the scalar's own Display so f32 values stay short.
    let duration: serde_json::Value = serde_json::from_str(&format_real(s.input_len))
        .map_err(|e| Error::invalid(format!("duration {} not representable: {e}", s.input_len)))?;
    let line = ManifestLineOut {
        id: &s.id,
        duration,
        num_tokens: s.output_len,
    };
    serde_json::to_writer(&mut *out, &line).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_manifest<'a, T, W, I>(out: &mut W, samples: I) -> Result<usize>
where
    T: Real,
    W: Write,
    I: IntoIterator<Item = &'a Sample<T>>,
{
    let mut n = 0;
    for s in samples {
        write_sample(out, s)?;
        n += 1;
    }
    Ok(n)
}

/// Shortest round-trip decimal for the scalar, always with a fractional part.
pub(crate) fn format_real<T: Real>(v: T) -> String {
    let s = format!("{v}");
    if s.contains(['.', 'e', 'E']) || !v.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DurationDist {
    LogNormal { mu: f64, sigma: f64 },
    Constant { seconds: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateDist {
    Gamma { shape: f64, scale: f64 },
    Constant { tps: f64 },
}

/// Parameters of a synthetic sample population.
///
/// For each sample `i` the generator draws, in this order and from one
/// xoshiro256++ stream seeded with `seed`:
///
/// 1. duration: `exp(mu + sigma * z)` with `z` from Box-Muller, clipped to
///    `[min_dur, max_dur]` (a constant distribution draws nothing);
/// 2. token rate: Gamma(shape, scale) by Marsaglia-Tsang (constant draws
///    nothing);
/// 3. one uniform `u`; the rate is multiplied by `outlier_factor` when
///    `u < outlier_frac`.
///
/// `output_len = max(0, round_half_away(prompt_tokens + rate * duration))`
/// and the id is `syn-{i:08}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub count: u64,
    pub duration: DurationDist,
    pub min_dur: f64,
    pub max_dur: f64,
    pub rate: RateDist,
    pub prompt_tokens: u64,
    pub outlier_frac: f64,
    pub outlier_factor: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Reference population: clipped log-normal durations with a 6 s median
    /// (sigma 0.7) on [0.5, 40] s, Gamma(4, 3) token rate (mean 12 tps),
    /// a 16-token prompt and 1% outliers at 4x rate. An artifact choice, not
    /// a property of any real corpus.
    fn default() -> Self {
        Self {
            count: 100_000,
            duration: DurationDist::LogNormal {
                mu: 6f64.ln(),
                sigma: 0.7,
            },
            min_dur: 0.5,
            max_dur: 40.0,
            rate: RateDist::Gamma {
                shape: 4.0,
                scale: 3.0,
            },
            prompt_tokens: 16,
            outlier_frac: 0.01,
            outlier_factor: 4.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.count == 0 {
            return bad("count must be at least 1");
        }
        if !(self.min_dur > 0.0) || !(self.max_dur >= self.min_dur) || !self.max_dur.is_finite() {
            return bad("require 0 < min_dur <= max_dur < inf");
        }
        if !(0.0..=1.0).contains(&self.outlier_frac) {
            return bad("outlier_frac must be in [0, 1]");
        }
        if self.outlier_frac > 0.0 && !(self.outlier_factor > 1.0) {
            return bad("outlier_factor must exceed 1");
        }
        match self.duration {
            DurationDist::LogNormal { mu, sigma } if !(mu.is_finite() && sigma >= 0.0) => {
                return bad("log-normal needs finite mu and sigma >= 0")
            }
            DurationDist::Constant { seconds } if !(seconds > 0.0) => {
                return bad("constant duration must be positive")
            }
            _ => {}
        }
        match self.rate {
            RateDist::Gamma { shape, scale } if !(shape > 0.0 && scale > 0.0) => {
                return bad("gamma needs positive shape and scale")
            }
            RateDist::Constant { tps } if !(tps >= 0.0) => {
                return bad("constant rate must be >= 0")
            }
            _ => {}
        }
        Ok(())
    }

    pub fn with_count(mut self, count: u64) -> Self {
        self.count = count;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

pub struct Generator<T> {
    spec: SynthSpec,
    rng: DataRng,
    next: u64,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Real> Generator<T> {
    fn draw(&mut self) -> Sample<T> {
        let spec = &self.spec;
        let raw = match spec.duration {
            DurationDist::LogNormal { mu, sigma } => (mu + sigma * self.rng.normal()).exp(),
            DurationDist::Constant { seconds } => seconds,
        };
        let duration = raw.clamp(spec.min_dur, spec.max_dur);
        let mut rate = match spec.rate {
            RateDist::Gamma { shape, scale } => self.rng.gamma(shape, scale),
            RateDist::Constant { tps } => tps,
        };
        if self.rng.uniform() < spec.outlier_frac {
            rate *= spec.outlier_factor;
        }
        let tokens = (spec.prompt_tokens as f64 + rate * duration)
            .round()
            .max(0.0) as u64;
        let id = format!("syn-{:08}", self.next);
        // Narrowing to f32 may round; keep the result inside the clip range.
        let mut input_len = T::lit(duration);
        if !(input_len > T::zero()) {
            input_len = T::min_positive_value();
        }
        Sample {
            id,
            input_len,
            output_len: tokens,
        }
    }
}

impl<T: Real> Iterator for Generator<T> {
    type Item = Sample<T>;

    fn next(&mut self) -> Option<Sample<T>> {
        if self.next >= self.spec.count {
            return None;
        }
        let s = self.draw();
        self.next += 1;
        Some(s)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.spec.count - self.next) as usize;
        (left, Some(left))
    }
}

pub fn generate<T: Real>(spec: &SynthSpec) -> Result<Generator<T>> {
    spec.validate()?;
    Ok(Generator {
        rng: DataRng::new(spec.seed),
        spec: spec.clone(),
        next: 0,
        _scalar: std::marker::PhantomData,
    })
}
