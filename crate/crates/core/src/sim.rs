//! Desk-scale simulators: data-parallel step time under synchronized and
//! unsynchronized bucket selection, and an analytic encoder/decoder
//! inference cost model.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datamodel::MiniBatch;
use crate::error::{Error, Result};
use crate::ingest::{generate, SynthSpec};
use crate::rng::derive_seed;
use crate::sampler::{DynamicBucketSampler, SamplerConfig, SyncConfig};
use crate::scalar::Real;

/// `t(B, Tin, Tout) = k0 + B * (k1 Tin + k2 Tin^2 + k3 Tout + k4 Tout^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCostModel<T> {
    pub coeffs: [T; 5],
}

impl<T: Real> StepCostModel<T> {
    pub fn new(coeffs: [T; 5]) -> Result<Self> {
        if coeffs.iter().any(|c| !(*c >= T::zero()) || !c.is_finite()) {
            return Err(Error::invalid(
                "step cost coefficients must be finite and non-negative",
            ));
        }
        Ok(Self { coeffs })
    }

    /// Reference super-linear model (artifact choice): fixed overhead, a
    /// linear term and attention-like quadratic terms in both lengths.
    pub fn quadratic() -> Self {
        Self {
            coeffs: [1.0, 0.01, 0.0005, 0.0002, 1.0e-7].map(T::lit),
        }
    }

    pub fn constant(k0: T) -> Result<Self> {
        let z = T::zero();
        Self::new([k0, z, z, z, z])
    }

    pub fn eval(&self, batch: usize, tin: T, tout: T) -> T {
        let [k0, k1, k2, k3, k4] = self.coeffs;
        k0 + T::from_count(batch as u64)
            * (k1 * tin + k2 * tin * tin + k3 * tout + k4 * tout * tout)
    }

    pub fn eval_batch(&self, b: &MiniBatch<T>) -> T {
        self.eval(b.len(), b.max_input(), T::from_count(b.max_output()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpSimConfig<T> {
    pub world_size: usize,
    pub steps: usize,
    /// Template for every rank; its `sync` and `seed` are overridden.
    pub sampler: SamplerConfig<T>,
    pub cost: StepCostModel<T>,
    /// Per-rank data population; `count` sizes each rank's stream and the
    /// seed is replaced by one derived from `seed` and the rank.
    pub data: SynthSpec,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DdpSimReport<T> {
    pub world_size: usize,
    pub steps: usize,
    pub mean_step_time_synced: T,
    pub mean_step_time_unsynced: T,
    pub speedup_percent: T,
    pub fallback_selections: u64,
}

const SELECTION_STREAM: u64 = 0x005E_1EC7;

fn rank_data_seed(seed: u64, rank: usize) -> u64 {
    derive_seed(seed, rank as u64)
}

fn selection_seed(seed: u64, rank: usize) -> u64 {
    derive_seed(seed ^ SELECTION_STREAM, rank as u64)
}

/// Mean global step time (max over ranks) and total sync fallbacks.
fn run_mode<T: Real>(cfg: &DdpSimConfig<T>, synced: bool) -> Result<(T, u64)> {
    let mut ranks = Vec::with_capacity(cfg.world_size);
    for rank in 0..cfg.world_size {
        let mut sc = cfg.sampler.clone();
        // Unsynchronized ranks run the same selection rule as a world of
        // one with their own seed; rank 0 shares the synchronized seed, so a
        // single-rank world is identical in both modes.
        sc.sync = Some(if synced {
            SyncConfig::new(selection_seed(cfg.seed, 0), rank, cfg.world_size)?
        } else {
            SyncConfig::new(selection_seed(cfg.seed, rank), 0, 1)?
        });
        sc.seed = selection_seed(cfg.seed, rank);
        let data = cfg.data.clone().with_seed(rank_data_seed(cfg.seed, rank));
        ranks.push(DynamicBucketSampler::from_samples(
            sc,
            generate::<T>(&data)?,
        )?);
    }
    let mut total = T::zero();
    for step in 0..cfg.steps {
        let mut slowest = T::zero();
        for (rank, sampler) in ranks.iter_mut().enumerate() {
            let batch = sampler.next_batch()?.ok_or_else(|| {
                Error::Simulation(format!("rank {rank} ran out of data at step {step}"))
            })?;
            slowest = slowest.max(cfg.cost.eval_batch(&batch));
        }
        total = total + slowest;
    }
    let fallbacks = ranks.iter().map(|r| r.stats().fallback_selections).sum();
    Ok((total / T::from_count(cfg.steps as u64), fallbacks))
}

/// Runs the same per-rank data once with synchronized and once with
/// independent bucket selection.
pub fn simulate_ddp<T: Real>(cfg: &DdpSimConfig<T>) -> Result<DdpSimReport<T>> {
    if cfg.world_size == 0 || cfg.steps == 0 {
        return Err(Error::invalid("world size and steps must be at least 1"));
    }
    let (synced, fallback_selections) = run_mode(cfg, true)?;
    let (unsynced, _) = run_mode(cfg, false)?;
    let speedup_percent = if unsynced > T::zero() {
        T::lit(100.0) * (unsynced - synced) / unsynced
    } else {
        T::zero()
    };
    Ok(DdpSimReport {
        world_size: cfg.world_size,
        steps: cfg.steps,
        mean_step_time_synced: synced,
        mean_step_time_unsynced: unsynced,
        speedup_percent,
        fallback_selections,
    })
}

/// Plain-text table: one row per world size.
pub fn ddp_table<T: Real>(reports: &[DdpSimReport<T>]) -> String {
    let mut out = String::from("ranks\tspeedup_percent\tstep_time_synced\tstep_time_unsynced\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{}\t{:.2}\t{:.6}\t{:.6}",
            r.world_size, r.speedup_percent, r.mean_step_time_synced, r.mean_step_time_unsynced
        );
    }
    out
}

/// Wall time per audio second:
/// `enc_layers * e + tokens_per_second_out * dec_layers * d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceCostModel<T> {
    pub enc_layer_cost: T,
    pub dec_layer_step_cost: T,
    pub enc_layers: u32,
    pub dec_layers: u32,
    pub tokens_per_second_out: T,
}

impl<T: Real> InferenceCostModel<T> {
    pub fn new(
        enc_layer_cost: T,
        dec_layer_step_cost: T,
        enc_layers: u32,
        dec_layers: u32,
        tokens_per_second_out: T,
    ) -> Result<Self> {
        if !(enc_layer_cost > T::zero() && dec_layer_step_cost > T::zero()) {
            return Err(Error::invalid("layer costs must be positive"));
        }
        if enc_layers == 0 || dec_layers == 0 {
            return Err(Error::invalid("layer counts must be at least 1"));
        }
        if !(tokens_per_second_out >= T::zero()) {
            return Err(Error::invalid("output token rate must be non-negative"));
        }
        Ok(Self {
            enc_layer_cost,
            dec_layer_step_cost,
            enc_layers,
            dec_layers,
            tokens_per_second_out,
        })
    }

    pub fn with_layers(mut self, enc_layers: u32, dec_layers: u32) -> Self {
        self.enc_layers = enc_layers;
        self.dec_layers = dec_layers;
        self
    }

    fn wall_per_second(&self) -> T {
        T::from_count(self.enc_layers as u64) * self.enc_layer_cost
            + self.tokens_per_second_out
                * T::from_count(self.dec_layers as u64)
                * self.dec_layer_step_cost
    }
}

pub fn predict_rtfx<T: Real>(model: &InferenceCostModel<T>, audio_seconds: T) -> T {
    let wall = audio_seconds * model.wall_per_second();
    audio_seconds / wall
}

/// A measured architecture: layer counts and observed RTFx.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtfxObservation<T> {
    pub enc_layers: u32,
    pub dec_layers: u32,
    pub rtfx: T,
}

/// Solves the two-row linear system `1 / rtfx = enc * e + dec * D` for the
/// per-encoder-layer cost `e` and the per-decoder-layer cost `D` (token rate
/// folded in, so the returned model has `tokens_per_second_out = 1`). The
/// model carries the first row's layer counts.
pub fn fit_inference_model<T: Real>(
    a: RtfxObservation<T>,
    b: RtfxObservation<T>,
) -> Result<InferenceCostModel<T>> {
    if !(a.rtfx > T::zero() && b.rtfx > T::zero()) {
        return Err(Error::invalid("observed RTFx must be positive"));
    }
    let (ea, da) = (
        T::from_count(a.enc_layers as u64),
        T::from_count(a.dec_layers as u64),
    );
    let (eb, db) = (
        T::from_count(b.enc_layers as u64),
        T::from_count(b.dec_layers as u64),
    );
    let (wa, wb) = (a.rtfx.recip(), b.rtfx.recip());
    let det = ea * db - eb * da;
    if det == T::zero() {
        return Err(Error::invalid(
            "observations do not determine both layer costs",
        ));
    }
    let enc = (wa * db - wb * da) / det;
    let dec = (ea * wb - eb * wa) / det;
    InferenceCostModel::new(enc, dec, a.enc_layers, a.dec_layers, T::one()).map_err(|_| {
        Error::invalid(format!(
            "fit gives non-positive layer costs (e = {enc}, D = {dec})"
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bucketing::BucketSpec;
    use crate::sampler::BatchingMode;

    fn reference_rows() -> (RtfxObservation<f64>, RtfxObservation<f64>) {
        (
            RtfxObservation {
                enc_layers: 24,
                dec_layers: 24,
                rtfx: 345.0,
            },
            RtfxObservation {
                enc_layers: 24,
                dec_layers: 4,
                rtfx: 1097.0,
            },
        )
    }

    #[test]
    fn fit_matches_hand_solve() {
        let (a, b) = reference_rows();
        let m = fit_inference_model(a, b).unwrap();
        // Hand solve: D = (1/345 - 1/1097) / 20, e = (1/1097 - 4 D) / 24.
        let d = (1.0 / 345.0 - 1.0 / 1097.0) / 20.0;
        let e = (1.0 / 1097.0 - 4.0 * d) / 24.0;
        assert!((m.dec_layer_step_cost - d).abs() < 1e-15);
        assert!((m.enc_layer_cost - e).abs() < 1e-15);
        assert!((d - 9.94e-5).abs() < 0.01e-5);
        assert!((e - 2.14e-5).abs() < 0.01e-5);
        assert!((predict_rtfx(&m, 1.0) - 345.0).abs() < 1e-9);
        assert!((predict_rtfx(&m.with_layers(24, 4), 1.0) - 1097.0).abs() < 1e-9);
        let row3 = predict_rtfx(&m.with_layers(32, 4), 1.0);
        assert!((row3 - 923.0).abs() < 1.0, "{row3}");
    }

    #[test]
    fn fit_rejects_degenerate_rows() {
        let (a, _) = reference_rows();
        assert!(fit_inference_model(a, a).is_err());
        let bad = RtfxObservation {
            enc_layers: 24,
            dec_layers: 4,
            rtfx: 100.0,
        };
        assert!(fit_inference_model(a, bad).is_err());
    }

    #[test]
    fn rtfx_scale_invariant_and_limits() {
        let m = InferenceCostModel::<f64>::new(2e-5, 1e-5, 24, 4, 10.0).unwrap();
        let r1 = predict_rtfx(&m, 1.0);
        for secs in [0.01, 3.5, 600.0, 1e6] {
            assert!((predict_rtfx(&m, secs) - r1).abs() / r1 < 1e-12);
        }
        let enc_only = m.with_layers(24, 0);
        assert!((predict_rtfx(&enc_only, 7.0) - 1.0 / (24.0 * 2e-5)).abs() < 1e-9);
        assert!(InferenceCostModel::new(0.0, 1.0, 1, 1, 1.0).is_err());
        assert!(InferenceCostModel::new(1.0, 1.0, 0, 1, 1.0).is_err());
    }

    #[test]
    fn cost_model_eval() {
        let c = StepCostModel::new([1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(c.eval(2, 1.0, 1.0), 1.0 + 2.0 * 14.0);
        assert!(StepCostModel::new([-1.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    fn small_cfg(world: usize, cost: StepCostModel<f64>) -> DdpSimConfig<f64> {
        let spec = BucketSpec::one_d(vec![2.0, 4.0, 8.0, 16.0, 40.0]).unwrap();
        let mut sampler =
            SamplerConfig::new(spec, BatchingMode::DurationHeuristic { threshold: 60.0 });
        sampler.buffer_capacity = 500;
        DdpSimConfig {
            world_size: world,
            steps: 100,
            sampler,
            cost,
            data: SynthSpec::default().with_count(3_000),
            seed: 5,
        }
    }

    #[test]
    fn single_rank_has_zero_speedup() {
        let r = simulate_ddp(&small_cfg(1, StepCostModel::quadratic())).unwrap();
        assert_eq!(r.speedup_percent, 0.0);
        assert_eq!(r.mean_step_time_synced, r.mean_step_time_unsynced);
    }

    #[test]
    fn constant_cost_has_zero_speedup() {
        let r = simulate_ddp(&small_cfg(8, StepCostModel::constant(3.0).unwrap())).unwrap();
        assert!(r.speedup_percent.abs() < 1e-9);
    }

    #[test]
    fn deterministic_and_errors_on_short_streams() {
        let cfg = small_cfg(4, StepCostModel::quadratic());
        assert_eq!(simulate_ddp(&cfg).unwrap(), simulate_ddp(&cfg).unwrap());
        let mut short = cfg.clone();
        short.data = short.data.with_count(50);
        assert!(matches!(simulate_ddp(&short), Err(Error::Simulation(_))));
        let mut zero = cfg;
        zero.world_size = 0;
        assert!(simulate_ddp(&zero).is_err());
    }

    #[test]
    fn mean_speedup_positive_over_seeds() {
        let mut total = 0.0;
        for seed in 0..10 {
            let mut cfg = small_cfg(16, StepCostModel::quadratic());
            cfg.seed = seed;
            cfg.steps = 60;
            total += simulate_ddp(&cfg).unwrap().speedup_percent;
        }
        assert!(total / 10.0 > 0.0);
    }

    #[test]
    fn table_layout() {
        let r = DdpSimReport {
            world_size: 2,
            steps: 10,
            mean_step_time_synced: 1.0,
            mean_step_time_unsynced: 1.25,
            speedup_percent: 20.0,
            fallback_selections: 0,
        };
        assert_eq!(
            ddp_table(&[r]),
            "ranks\tspeedup_percent\tstep_time_synced\tstep_time_unsynced\n2\t20.00\t1.000000\t1.250000\n"
        );
    }
}
