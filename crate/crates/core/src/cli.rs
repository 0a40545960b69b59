//! Command-line front end. Each subcommand wraps one pipeline stage and
//! writes a single artifact (to `--output` or stdout) in `--format`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bucketing::{
    estimate_duration_bins_counted, estimate_token_subbins, AllocationPolicy, BucketSpec,
};
use crate::datamodel::{nearest_rank, padding_stats, MiniBatch, Sample};
use crate::ingest::{
    format_real, generate, load_manifest, read_manifest, write_manifest, SynthSpec,
};
use crate::oomptimizer::{
    oomptimize, BucketBatchSizes, MemoryModel, MemoryTrace, DEFAULT_MAX_BATCH,
};
use crate::recipes::{ddp_config, scheme_config, DdpParams, Scheme, SchemeParams};
use crate::sampler::{
    filter_tps, BatchingMode, DynamicBucketSampler, SamplerConfig, SamplerStats,
    SelectionWeighting, SyncConfig, TpsDecision,
};
use crate::sim::{ddp_table, simulate_ddp, DdpSimReport, StepCostModel};
use crate::stream::{open_buffered, BufferedStreamConfig};

#[derive(Parser, Debug)]
#[command(
    name = "seqbatch",
    version,
    about = "Bucketed batching for variable-length sequence data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic JSONL manifest and print a summary.
    GenData(GenDataArgs),
    /// Estimate a bucket spec from a manifest.
    EstimateBuckets(EstimateArgs),
    /// Calibrate per-bucket batch sizes against a memory model.
    Oomptimize(OomptimizeArgs),
    /// List the batches a sampler emits.
    Sample(SampleArgs),
    /// Report padding, batch size and memory statistics for a sampler.
    Profile(ProfileArgs),
    /// Compare synchronized and independent bucket selection across ranks.
    SimulateDdp(SimulateArgs),
    /// Run a full experiment described by a TOML file.
    Run(RunArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Text,
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Destination file; stdout when absent.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: Option<u64>,
    /// TOML file with generator settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest destination. The summary goes to `--output`.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub buckets: usize,
    /// Token sub-buckets per duration bin; omit for a 1D spec.
    #[arg(long)]
    pub sub_buckets: Option<usize>,
    /// Estimate on samples at or below this token rate only.
    #[arg(long)]
    pub tps_filter: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Six comma-separated memory coefficients c0..c5.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 80.0)]
    pub capacity: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_BATCH)]
    pub max_batch: usize,
}

impl ModelArgs {
    fn memory_model(&self) -> anyhow::Result<MemoryModel<f64>> {
        match &self.model {
            None => Ok(MemoryModel::transformer_like()),
            Some(s) => Ok(MemoryModel::new(parse_coeffs::<6>(s, "--model")?)?),
        }
    }
}

#[derive(Args, Debug)]
pub struct OomptimizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AllocationArg {
    #[default]
    Strict,
    Flexible,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WeightingArg {
    #[default]
    Uniform,
    Occupancy,
}

#[derive(Args, Debug, Clone)]
pub struct SamplerArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Preset: A, B, C, D or fixed. Buckets are estimated on the manifest.
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long, conflicts_with = "scheme")]
    pub spec: Option<PathBuf>,
    #[arg(long, requires = "spec")]
    pub batch_sizes: Option<PathBuf>,
    /// Duration-heuristic threshold in seconds.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub fixed_size: Option<usize>,
    #[arg(long, default_value_t = 40.0)]
    pub pad_to: f64,
    #[arg(long)]
    pub tps_filter: Option<f64>,
    #[arg(long, value_enum, default_value_t)]
    pub allocation: AllocationArg,
    #[arg(long, value_enum, default_value_t)]
    pub weighting: WeightingArg,
    #[arg(long, default_value_t = 20_000)]
    pub buffer_capacity: usize,
    /// Capacity of the read-ahead queue between the manifest reader and the sampler.
    #[arg(long, default_value_t = 10_000)]
    pub prefetch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub start_fraction: f64,
    #[arg(long)]
    pub world_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub rank: usize,
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
    #[arg(long, default_value_t = 2)]
    pub sub_bins: usize,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub max_batches: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Per-step CSV series (batch size, padding, memory).
    #[arg(long)]
    pub series: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "1,2,16,128")]
    pub world_sizes: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Five comma-separated step cost coefficients k0..k4.
    #[arg(long)]
    pub cost: Option<String>,
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
    #[arg(long, default_value_t = 360.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 10_000)]
    pub buffer_capacity: usize,
    #[arg(long, default_value_t = 25.0)]
    pub tps_filter: f64,
    #[arg(long)]
    pub no_tps_filter: bool,
    #[arg(long, default_value_t = 80_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples_per_rank: u64,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// A complete experiment. Relative paths resolve against the working
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Existing manifest; mutually exclusive with `synth`.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    pub scheme: Scheme,
    #[serde(default = "defaults::bins")]
    pub bins: usize,
    #[serde(default = "defaults::sub_bins")]
    pub sub_bins: usize,
    #[serde(default = "defaults::threshold")]
    pub threshold: f64,
    #[serde(default = "defaults::tps_filter")]
    pub tps_filter: f64,
    #[serde(default = "defaults::buffer_capacity")]
    pub buffer_capacity: usize,
    #[serde(default = "defaults::prefetch")]
    pub prefetch: usize,
    #[serde(default = "defaults::start_fraction")]
    pub start_fraction: f64,
    #[serde(default = "defaults::pad_to")]
    pub pad_to: f64,
    #[serde(default)]
    pub memory_coeffs: Option<[f64; 6]>,
    #[serde(default = "defaults::capacity")]
    pub capacity: f64,
}

mod defaults {
    pub fn bins() -> usize {
        30
    }
    pub fn sub_bins() -> usize {
        2
    }
    pub fn threshold() -> f64 {
        360.0
    }
    pub fn tps_filter() -> f64 {
        25.0
    }
    pub fn buffer_capacity() -> usize {
        20_000
    }
    pub fn prefetch() -> usize {
        10_000
    }
    pub fn start_fraction() -> f64 {
        0.1
    }
    pub fn pad_to() -> f64 {
        40.0
    }
    pub fn capacity() -> f64 {
        80.0
    }
}

fn parse_coeffs<const N: usize>(s: &str, flag: &str) -> anyhow::Result<[f64; N]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("{flag}: expected {N} comma-separated numbers"))?;
    v.try_into()
        .map_err(|v: Vec<f64>| anyhow::anyhow!("{flag}: expected {N} numbers, got {}", v.len()))
}

enum Val {
    I(u64),
    F(f64),
    S(String),
}

impl Val {
    fn text(&self) -> String {
        match self {
            Val::I(v) => v.to_string(),
            Val::F(v) => format!("{v:.6}"),
            Val::S(v) => v.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Val::I(v) => Value::from(*v),
            Val::F(v) => Value::from(*v),
            Val::S(v) => Value::from(v.as_str()),
        }
    }
}

type Record = Vec<(&'static str, Val)>;

fn json_object(r: &Record) -> Value {
    Value::Object(
        r.iter()
            .map(|(k, v)| (k.to_string(), v.json()))
            .collect::<Map<_, _>>(),
    )
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One record: `key=value` lines, a JSON object or a two-line CSV.
fn render_one(r: &Record, format: Format) -> String {
    match format {
        Format::Text => r
            .iter()
            .map(|(k, v)| format!("{k}={}\n", v.text()))
            .collect(),
        Format::Json => format!("{}\n", json_object(r)),
        Format::Csv => render_table(std::slice::from_ref(r), Format::Csv),
    }
}

/// Many records: a tab- or comma-separated table with a header, or a JSON
/// array.
fn render_table(rows: &[Record], format: Format) -> String {
    if format == Format::Json {
        return format!("{}\n", Value::Array(rows.iter().map(json_object).collect()));
    }
    let sep = if format == Format::Csv { "," } else { "\t" };
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut out = first.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(sep);
    out.push('\n');
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .map(|(_, v)| {
                if format == Format::Csv {
                    csv_field(&v.text())
                } else {
                    v.text()
                }
            })
            .collect();
        out.push_str(&cells.join(sep));
        out.push('\n');
    }
    out
}

fn emit(path: Option<&Path>, content: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, content).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(content.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn summary_record(samples: &[Sample<f64>]) -> Record {
    let n = samples.len();
    let total_dur: f64 = samples.iter().map(|s| s.input_len).sum();
    let total_tok: u64 = samples.iter().map(|s| s.output_len).sum();
    let max_dur = samples.iter().map(|s| s.input_len).fold(0.0, f64::max);
    let mut rates: Vec<f64> = samples.iter().map(|s| s.tps()).collect();
    rates.sort_by(f64::total_cmp);
    let mean_tps = if n > 0 {
        rates.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let per = |x: f64| if n > 0 { x / n as f64 } else { 0.0 };
    vec![
        ("count", Val::I(n as u64)),
        ("total_hours", Val::F(total_dur / 3600.0)),
        ("mean_duration", Val::F(per(total_dur))),
        ("max_duration", Val::F(max_dur)),
        ("total_tokens", Val::I(total_tok)),
        ("mean_tokens", Val::F(per(total_tok as f64))),
        ("mean_tps", Val::F(mean_tps)),
        ("p50_tps", Val::F(nearest_rank(&rates, 50.0).unwrap_or(0.0))),
        ("p90_tps", Val::F(nearest_rank(&rates, 90.0).unwrap_or(0.0))),
        ("p99_tps", Val::F(nearest_rank(&rates, 99.0).unwrap_or(0.0))),
    ]
}

fn gen_data(a: &GenDataArgs) -> anyhow::Result<()> {
    let mut spec = match &a.config {
        Some(p) => toml::from_str::<SynthSpec>(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing {}", p.display()))?,
        None => SynthSpec::default(),
    };
    if let Some(c) = a.count {
        spec.count = c;
    }
    if let Some(s) = a.common.seed {
        spec.seed = s;
    }
    let samples: Vec<Sample<f64>> = generate(&spec)?.collect();
    let file =
        File::create(&a.manifest).with_context(|| format!("creating {}", a.manifest.display()))?;
    let mut out = BufWriter::new(file);
    write_manifest(&mut out, &samples)?;
    out.flush()?;
    emit(
        a.common.output.as_deref(),
        &render_one(&summary_record(&samples), a.common.format),
    )
}

fn spec_records(spec: &BucketSpec<f64>) -> Vec<Record> {
    (0..spec.num_buckets())
        .map(|flat| {
            let (bin, sub) = spec.split_index(flat);
            let (dur, tok) = spec.corner(flat);
            vec![
                ("flat", Val::I(flat as u64)),
                ("bin", Val::I(bin as u64)),
                ("sub_bin", Val::I(sub as u64)),
                ("max_duration", Val::S(format_real(dur))),
                (
                    "max_tokens",
                    Val::S(tok.map_or("-".into(), |t| t.to_string())),
                ),
            ]
        })
        .collect()
}

fn estimate(a: &EstimateArgs) -> anyhow::Result<()> {
    let mut samples: Vec<Sample<f64>> = load_manifest(&a.manifest)?;
    if let Some(t) = a.tps_filter {
        samples.retain(|s| filter_tps(s, t) == TpsDecision::Keep);
    }
    let (one, merged) = estimate_duration_bins_counted(&samples, a.buckets)?;
    if merged > 0 {
        eprintln!(
            "note: {merged} duration bins merged (requested {}, kept {})",
            a.buckets,
            one.num_bins()
        );
    }
    let spec = match a.sub_buckets {
        Some(s) => estimate_token_subbins(&samples, &one, s)?,
        None => one,
    };
    let content = match a.common.format {
        Format::Text => spec.to_text(),
        f => render_table(&spec_records(&spec), f),
    };
    emit(a.common.output.as_deref(), &content)
}

fn read_spec(path: &Path) -> anyhow::Result<BucketSpec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    BucketSpec::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn calibrate(a: &OomptimizeArgs) -> anyhow::Result<()> {
    let spec = read_spec(&a.spec)?;
    let model = a.model.memory_model()?;
    let sizes = oomptimize(&spec, &model, a.model.capacity, a.model.max_batch)?;
    let content = match a.common.format {
        Format::Text => sizes.to_text(&spec)?,
        f => {
            let rows: Vec<Record> = spec_records(&spec)
                .into_iter()
                .zip(sizes.as_slice())
                .enumerate()
                .map(|(flat, (mut r, &b))| {
                    let (dur, tok) = spec.corner(flat);
                    r.push(("batch_size", Val::I(b as u64)));
                    r.push((
                        "memory",
                        Val::F(model.eval(b, dur, tok.map_or(0.0, |t| t as f64))),
                    ));
                    r
                })
                .collect();
            render_table(&rows, f)
        }
    };
    emit(a.common.output.as_deref(), &content)
}

fn sampler_config(a: &SamplerArgs, seed: u64) -> anyhow::Result<SamplerConfig<f64>> {
    let model = a.model.memory_model()?;
    let mut cfg = if let Some(scheme) = a.scheme {
        let samples: Vec<Sample<f64>> = load_manifest(&a.manifest)?;
        let mut p = SchemeParams {
            bins: a.bins,
            sub_bins: a.sub_bins,
            model,
            capacity: a.model.capacity,
            max_batch: a.model.max_batch,
            buffer_capacity: a.buffer_capacity,
            fixed_pad_to: a.pad_to,
            seed,
            ..SchemeParams::default()
        };
        if let Some(t) = a.threshold {
            p.threshold = t;
        }
        if let Some(t) = a.tps_filter {
            p.tps_threshold = t;
        }
        if let Some(n) = a.fixed_size {
            p.fixed_size = n;
        }
        scheme_config(scheme, &samples, &p)?
    } else {
        let batching = if let Some(size) = a.fixed_size {
            BatchingMode::FixedBatch {
                size,
                pad_to_input: a.pad_to,
                pad_to_output: None,
            }
        } else if let Some(p) = &a.batch_sizes {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            BatchingMode::PerBucketSizes(BucketBatchSizes::from_text(&text)?)
        } else {
            BatchingMode::DurationHeuristic {
                threshold: a.threshold.unwrap_or(360.0),
            }
        };
        let spec = match (&a.spec, &batching) {
            (Some(p), _) => read_spec(p)?,
            (None, BatchingMode::FixedBatch { .. }) => BucketSpec::one_d(vec![a.pad_to])?,
            (None, _) => bail!("pass --scheme, --spec or --fixed-size"),
        };
        let mut cfg = SamplerConfig::new(spec, batching);
        cfg.tps_threshold = a.tps_filter;
        cfg.buffer_capacity = a.buffer_capacity;
        cfg
    };
    cfg.seed = seed;
    cfg.allocation = match a.allocation {
        AllocationArg::Strict => AllocationPolicy::Strict,
        AllocationArg::Flexible => AllocationPolicy::Flexible,
    };
    cfg.weighting = match a.weighting {
        WeightingArg::Uniform => SelectionWeighting::Uniform,
        WeightingArg::Occupancy => SelectionWeighting::Occupancy,
    };
    if let Some(w) = a.world_size {
        cfg.sync = Some(SyncConfig::new(seed, a.rank, w)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `cfg` over the manifest through the read-ahead queue, handing each
/// batch to `visit`.
fn drive(
    a: &SamplerArgs,
    cfg: SamplerConfig<f64>,
    limit: Option<usize>,
    mut visit: impl FnMut(&MiniBatch<f64>),
) -> anyhow::Result<SamplerStats<f64>> {
    let stream_cfg = BufferedStreamConfig::new(a.prefetch, a.start_fraction);
    let source = open_buffered(read_manifest::<f64>(&a.manifest)?, &stream_cfg)?;
    let mut sampler = DynamicBucketSampler::new(cfg, source)?;
    let mut n = 0;
    while limit.is_none_or(|l| n < l) {
        match sampler.next_batch()? {
            Some(b) => visit(&b),
            None => break,
        }
        n += 1;
    }
    Ok(sampler.into_stats())
}

fn sample(a: &SampleArgs) -> anyhow::Result<()> {
    let cfg = sampler_config(&a.sampler, a.common.seed.unwrap_or(0))?;
    let mut rows = Vec::new();
    drive(&a.sampler, cfg, a.max_batches, |b| {
        let ids: Vec<&str> = b.samples().iter().map(|s| s.id.as_str()).collect();
        rows.push(vec![
            ("step", Val::I(rows.len() as u64)),
            (
                "bucket",
                Val::S(b.bucket_id().map_or("-".into(), |x| x.to_string())),
            ),
            ("size", Val::I(b.len() as u64)),
            ("max_input", Val::S(format_real(b.max_input()))),
            ("max_output", Val::I(b.max_output())),
            ("ids", Val::S(ids.join(";"))),
        ]);
    })?;
    emit(
        a.common.output.as_deref(),
        &render_table(&rows, a.common.format),
    )
}

fn profile_record(stats: &SamplerStats<f64>, trace: &MemoryTrace<f64>) -> Record {
    let p = &stats.padding;
    vec![
        ("batches_emitted", Val::I(stats.batches_emitted)),
        ("samples_emitted", Val::I(stats.samples_emitted)),
        ("samples_filtered_tps", Val::I(stats.samples_filtered_tps)),
        (
            "samples_discarded_allocation",
            Val::I(stats.samples_discarded_allocation),
        ),
        ("mean_batch_size", Val::F(stats.mean_batch_size)),
        ("input_pad_frac", Val::F(p.input_pad_frac)),
        ("output_pad_frac", Val::F(p.output_pad_frac)),
        ("fallback_selections", Val::I(stats.fallback_selections)),
        ("memory_max", Val::F(trace.max)),
        ("memory_mean", Val::F(trace.mean)),
        ("memory_cv", Val::F(trace.cv)),
    ]
}

/// Profiles one sampler run; returns the report record and the CSV series.
fn profile_run(a: &SamplerArgs, cfg: SamplerConfig<f64>) -> anyhow::Result<(Record, String)> {
    let model = a.model.memory_model()?;
    let fixed = match cfg.batching {
        BatchingMode::FixedBatch { pad_to_input, .. } => Some(pad_to_input),
        _ => None,
    };
    let mut memory = Vec::new();
    let mut series = String::from(
        "step,bucket,batch_size,max_input,max_output,memory,input_pad_frac,output_pad_frac\n",
    );
    let stats = drive(a, cfg, None, |b| {
        let m = model.eval_batch(b);
        let pad = padding_stats(b, fixed.map(|p| (p, b.max_output()))).unwrap_or_default();
        series.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6}\n",
            memory.len(),
            b.bucket_id().map_or("-".into(), |x| x.to_string()),
            b.len(),
            format_real(b.max_input()),
            b.max_output(),
            m,
            pad.input_pad_frac,
            pad.output_pad_frac
        ));
        memory.push(m);
    })?;
    Ok((
        profile_record(&stats, &MemoryTrace::from_values(memory)),
        series,
    ))
}

fn profile(a: &ProfileArgs) -> anyhow::Result<()> {
    let cfg = sampler_config(&a.sampler, a.common.seed.unwrap_or(0))?;
    let (record, series) = profile_run(&a.sampler, cfg)?;
    if let Some(p) = &a.series {
        fs::write(p, series).with_context(|| format!("writing {}", p.display()))?;
    }
    emit(
        a.common.output.as_deref(),
        &render_one(&record, a.common.format),
    )
}

fn ddp_records(reports: &[DdpSimReport<f64>]) -> Vec<Record> {
    reports
        .iter()
        .map(|r| {
            vec![
                ("world_size", Val::I(r.world_size as u64)),
                ("steps", Val::I(r.steps as u64)),
                ("mean_step_time_synced", Val::F(r.mean_step_time_synced)),
                ("mean_step_time_unsynced", Val::F(r.mean_step_time_unsynced)),
                ("speedup_percent", Val::F(r.speedup_percent)),
                ("fallback_selections", Val::I(r.fallback_selections)),
            ]
        })
        .collect()
}

fn simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    let mut p = DdpParams::<f64> {
        bins: a.bins,
        threshold: a.threshold,
        buffer_capacity: a.buffer_capacity,
        tps_threshold: (!a.no_tps_filter).then_some(a.tps_filter),
        ..DdpParams::default()
    };
    p.data.count = a.samples_per_rank;
    if let Some(c) = &a.cost {
        p.cost = StepCostModel::new(parse_coeffs::<5>(c, "--cost")?)?;
    }
    let seed = a.common.seed.unwrap_or(0);
    let reports = a
        .world_sizes
        .iter()
        .map(|&w| simulate_ddp(&ddp_config(w, a.steps, seed, &p)?))
        .collect::<crate::Result<Vec<_>>>()?;
    let content = match a.common.format {
        Format::Text => ddp_table(&reports),
        f => render_table(&ddp_records(&reports), f),
    };
    emit(a.common.output.as_deref(), &content)
}

fn run_experiment(a: &RunArgs) -> anyhow::Result<()> {
    let text =
        fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let manifest = match (&cfg.manifest, &cfg.synth) {
        (Some(m), None) => m.clone(),
        (None, Some(spec)) => {
            let path = dir.join("manifest.jsonl");
            let mut out = BufWriter::new(File::create(&path)?);
            write_manifest(&mut out, &generate::<f64>(spec)?.collect::<Vec<_>>())?;
            out.flush()?;
            path
        }
        _ => bail!("set exactly one of `manifest` and `synth`"),
    };
    let args = SamplerArgs {
        manifest,
        scheme: Some(cfg.scheme),
        spec: None,
        batch_sizes: None,
        threshold: Some(cfg.threshold),
        fixed_size: None,
        pad_to: cfg.pad_to,
        tps_filter: Some(cfg.tps_filter),
        allocation: AllocationArg::Strict,
        weighting: WeightingArg::Uniform,
        buffer_capacity: cfg.buffer_capacity,
        prefetch: cfg.prefetch,
        start_fraction: cfg.start_fraction,
        world_size: None,
        rank: 0,
        bins: cfg.bins,
        sub_bins: cfg.sub_bins,
        model: ModelArgs {
            model: cfg
                .memory_coeffs
                .map(|c| c.map(|x| x.to_string()).join(",")),
            capacity: cfg.capacity,
            max_batch: DEFAULT_MAX_BATCH,
        },
    };
    let sampler_cfg = sampler_config(&args, cfg.seed)?;
    fs::write(dir.join("buckets.txt"), sampler_cfg.spec.to_text())?;
    if let BatchingMode::PerBucketSizes(sizes) = &sampler_cfg.batching {
        fs::write(
            dir.join("batch_sizes.txt"),
            sizes.to_text(&sampler_cfg.spec)?,
        )?;
    }
    let (record, series) = profile_run(&args, sampler_cfg)?;
    fs::write(dir.join("report.txt"), render_one(&record, Format::Text))?;
    fs::write(dir.join("series.csv"), series)?;
    Ok(())
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::EstimateBuckets(a) => estimate(a),
        Command::Oomptimize(a) => calibrate(a),
        Command::Sample(a) => sample(a),
        Command::Profile(a) => profile(a),
        Command::SimulateDdp(a) => simulate(a),
        Command::Run(a) => run_experiment(a),
    }
}
