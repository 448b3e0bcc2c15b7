//! Command-line front end: argument parsing and the five subcommands.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 I/O error,
//! 3 malformed input file.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench::{parse_sizes, run_bench, to_csv, BenchOptions};
use crate::config::{EngineConfig, PropagationMode, PyramidSchedule, RandomSearchConfig, SearchMode};
use crate::correlation::Strategy;
use crate::error::{FlowError, Result};
use crate::features::{Descriptor, FeatureConfig};
use crate::flowio::{flow_to_color, load_flow, load_image, save_flow, save_gray, write_flo, write_kitti_png};
use crate::metrics::EvalReport;
use crate::patchmatch::{OpCounters, PropagationOps};
use crate::pyramid::{adaptive_levels, run_pyramid_with_schedule, PyramidOutput};
use crate::rng::RNG_ALGORITHM;
use crate::synth::{synthesize, Motion};
use crate::tensor::{crop_flow, upsample_flow, FlowField, SeedSet};

pub const THREADS_ENV: &str = "PATCHFLOW_THREADS";

#[derive(Debug, Parser)]
#[command(name = "patchflow", version, about = "Patchmatch optical flow toolkit")]
pub struct Cli {
    /// Worker threads (falls back to PATCHFLOW_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the flow between two images.
    Estimate(Box<EstimateArgs>),
    /// Compare correlation strategies; prints CSV.
    Bench(BenchArgs),
    /// Render a synthetic image pair with ground truth.
    Synth(SynthArgs),
    /// Endpoint error and outlier rate of an estimate.
    Eval(EvalArgs),
    /// Colour-code a flow file.
    Viz(VizArgs),
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    pub img1: PathBuf,
    pub img2: PathBuf,
    /// Output flow file.
    #[arg(short, long, default_value = "flow.flo")]
    pub out: PathBuf,
    /// flo or kitti
    #[arg(long, default_value = "flo")]
    pub format: String,
    /// Write a colour-coded PNG of the result here.
    #[arg(long)]
    pub viz: Option<PathBuf>,
    /// Write every half-round as <out>_iterNN.flo.
    #[arg(long)]
    pub trace: bool,
    /// Run manifest path (default: output path with .json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub iters: usize,
    #[arg(long, default_value_t = 2)]
    pub radius: usize,
    /// diag4, plus4 or 8
    #[arg(long, default_value = "diag4")]
    pub seeds: String,
    /// inverse-approx, inverse-exact or propagate
    #[arg(long, default_value = "inverse-approx")]
    pub mode: String,
    /// Pooling factors, coarse to fine.
    #[arg(long, default_value = "4,1")]
    pub schedule: String,
    /// Initial flow, e.g. a warm start from the previous frame.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Choose the number of levels from the initial flow magnitude.
    #[arg(long)]
    pub adaptive: bool,
    /// flow2d or stereo1d
    #[arg(long, default_value = "flow2d")]
    pub search: String,
    #[arg(long, default_value_t = 0)]
    pub seed_rng: u64,
    /// Random initialization range, in pixels of the coarsest level.
    #[arg(long, default_value_t = 8.0)]
    pub init_range: f32,
    /// census7, gradients or census7+gradients
    #[arg(long, default_value = "census7+gradients")]
    pub descriptor: String,
    /// 3x3 median filter after every iteration.
    #[arg(long)]
    pub median: bool,
    /// Enable random search with its default schedule.
    #[arg(long)]
    pub random_search: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Sizes, e.g. 64,128 or 64x48 (width x height).
    #[arg(long, default_value = "64")]
    pub sizes: String,
    /// Comma-separated: local, global, patchmatch.
    #[arg(long, default_value = "local,global,patchmatch")]
    pub strategies: String,
    #[arg(long, default_value_t = 4)]
    pub d_max: usize,
    #[arg(long, default_value_t = 1)]
    pub levels: usize,
    #[arg(long, default_value = "diag4")]
    pub seeds: String,
    #[arg(long, default_value_t = 2)]
    pub radius: usize,
    /// Skip building volumes larger than this many bytes.
    #[arg(long, default_value_t = 1 << 30)]
    pub byte_cap: u64,
    #[arg(long, default_value_t = 0)]
    pub seed_rng: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// N or WxH.
    #[arg(long, default_value = "128")]
    pub size: String,
    /// translate:U,V | rotate:DEG | layers:BU,BV,FU,FV,X0,Y0,X1,Y1
    #[arg(long, default_value = "translate:3,-2")]
    pub motion: String,
    /// Output directory for frame1.png, frame2.png and gt.flo.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed_rng: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub est: PathBuf,
    pub gt: PathBuf,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    pub flow: PathBuf,
    pub out: PathBuf,
    /// Fixed saturation scale instead of the largest magnitude.
    #[arg(long)]
    pub max_norm: Option<f32>,
}

/// Per-level entry of the run manifest.
#[derive(Clone, Debug, Serialize)]
pub struct LevelManifest {
    pub factor: usize,
    pub iterations: usize,
    pub height: usize,
    pub width: usize,
    pub counters: OpCounters,
    pub predicted: PropagationOps,
    pub counters_match: bool,
    pub trace_length: usize,
    pub peak_stack_entries: u64,
    pub feature_bytes: usize,
    pub millis: f64,
}

/// JSON record written next to every estimate.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub version: &'static str,
    pub rng_algorithm: &'static str,
    pub rng_seed: u64,
    pub config: EngineConfig,
    /// Schedule actually run (differs from the configured one with `--adaptive`).
    pub schedule: Vec<usize>,
    pub image: (usize, usize),
    pub padded: (usize, usize),
    pub levels: Vec<LevelManifest>,
    pub total_counters: OpCounters,
    pub millis: f64,
}

impl RunManifest {
    pub fn new(cfg: &EngineConfig, image: (usize, usize), out: &PyramidOutput) -> Self {
        let d = &out.diagnostics;
        let levels = d
            .levels
            .iter()
            .map(|l| {
                let predicted = PropagationOps::predict(cfg.propagation, cfg.seeds.len(), l.iterations);
                LevelManifest {
                    factor: l.factor,
                    iterations: l.iterations,
                    height: l.height,
                    width: l.width,
                    counters: l.counters,
                    predicted,
                    counters_match: predicted == PropagationOps::observed(&l.counters),
                    trace_length: l.trace.len(),
                    peak_stack_entries: l.counters.peak_stack_entries,
                    feature_bytes: l.feature_bytes,
                    millis: l.millis,
                }
            })
            .collect();
        Self {
            version: env!("CARGO_PKG_VERSION"),
            rng_algorithm: RNG_ALGORITHM,
            rng_seed: cfg.rng_seed,
            config: cfg.clone(),
            schedule: d.schedule.factors(),
            image,
            padded: d.padded,
            levels,
            total_counters: d.total_counters(),
            millis: d.millis,
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(s) if !s.trim().is_empty() => Some(
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| FlowError::param(format!("{THREADS_ENV}='{s}' is not a thread count")))?,
            ),
            _ => None,
        },
    };
    if n == Some(0) {
        return Err(FlowError::param("thread count must be >= 1"));
    }
    Ok(n)
}

impl EstimateArgs {
    pub fn engine_config(&self) -> Result<EngineConfig> {
        Ok(EngineConfig {
            seeds: SeedSet::from_name(&self.seeds)?,
            radius: self.radius,
            iterations: self.iters,
            propagation: PropagationMode::parse(&self.mode)?,
            search: SearchMode::parse(&self.search)?,
            median_filter: self.median,
            random_search: self.random_search.then(RandomSearchConfig::default),
            init_range: self.init_range,
            rng_seed: self.seed_rng,
            schedule: PyramidSchedule::parse(&self.schedule, self.iters)?,
            features: FeatureConfig {
                descriptor: Descriptor::parse(&self.descriptor)?,
                ..FeatureConfig::default()
            },
            ..EngineConfig::default()
        })
    }
}

fn with_suffix(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn write_flow_as(path: &Path, flow: &FlowField, format: &str) -> Result<()> {
    let bytes = match format {
        "flo" => write_flo(flow)?,
        "kitti" => write_kitti_png(flow)?,
        other => return Err(FlowError::param(format!("unknown flow format '{other}'"))),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Runs `estimate` and returns the manifest.
pub fn cmd_estimate(args: &EstimateArgs) -> Result<RunManifest> {
    let cfg = args.engine_config()?;
    if !matches!(args.format.as_str(), "flo" | "kitti") {
        return Err(FlowError::param(format!("unknown flow format '{}'", args.format)));
    }
    let img1 = load_image(&args.img1)?;
    let img2 = load_image(&args.img2)?;
    let init = args.init.as_deref().map(load_flow).transpose()?;
    let schedule = if args.adaptive {
        let given = init
            .as_ref()
            .ok_or_else(|| FlowError::param("--adaptive needs --init"))?;
        adaptive_levels(given, cfg.schedule.finest_factor(), cfg.radius, cfg.iterations)?
    } else {
        cfg.schedule.clone()
    };
    let out = run_pyramid_with_schedule(&img1, &img2, &cfg, &schedule, init.as_ref())?;
    write_flow_as(&args.out, &out.flow, &args.format)?;
    if let Some(viz) = &args.viz {
        std::fs::write(viz, flow_to_color(&out.flow, None).encode_png()?)?;
    }
    if args.trace {
        let mut idx = 0;
        for level in &out.diagnostics.levels {
            for f in &level.trace {
                let full = if level.factor == 1 {
                    f.clone()
                } else {
                    upsample_flow(f, level.factor)?
                };
                let full = crop_flow(&full, img1.height, img1.width)?;
                save_flow(&with_suffix(&args.out, &format!("_iter{idx:02}"), "flo"), &full)?;
                idx += 1;
            }
        }
    }
    let manifest = RunManifest::new(&cfg, (img1.height, img1.width), &out);
    let path = args.manifest.clone().unwrap_or_else(|| args.out.with_extension("json"));
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| FlowError::format(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(manifest)
}

pub fn cmd_bench(args: &BenchArgs) -> Result<String> {
    let sizes = parse_sizes(&args.sizes)?;
    let strategies = args
        .strategies
        .split(',')
        .map(|s| Strategy::parse(s.trim()))
        .collect::<Result<Vec<_>>>()?;
    let opts = BenchOptions {
        d_max: args.d_max,
        levels: args.levels,
        seeds: SeedSet::from_name(&args.seeds)?,
        radius: args.radius,
        byte_cap: args.byte_cap,
        rng_seed: args.seed_rng,
        ..BenchOptions::default()
    };
    Ok(to_csv(&run_bench(&sizes, &strategies, &opts)?))
}

/// Writes `frame1.png`, `frame2.png` and `gt.flo` into `args.out`.
pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>> {
    let (h, w) = parse_sizes(&args.size)?
        .into_iter()
        .next()
        .ok_or_else(|| FlowError::param("missing size"))?;
    let motion = Motion::parse(&args.motion)?;
    let pair = synthesize(h, w, motion, args.seed_rng)?;
    std::fs::create_dir_all(&args.out)?;
    let paths = ["frame1.png", "frame2.png", "gt.flo"].map(|n| args.out.join(n));
    save_gray(&paths[0], &pair.frame1)?;
    save_gray(&paths[1], &pair.frame2)?;
    save_flow(&paths[2], &pair.flow)?;
    Ok(paths.to_vec())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    EvalReport::compute(&load_flow(&args.est)?, &load_flow(&args.gt)?)
}

pub fn cmd_viz(args: &VizArgs) -> Result<()> {
    if let Some(m) = args.max_norm {
        if !(m > 0.0 && m.is_finite()) {
            return Err(FlowError::param("--max-norm must be positive"));
        }
    }
    let flow = load_flow(&args.flow)?;
    std::fs::write(&args.out, flow_to_color(&flow, args.max_norm).encode_png()?)?;
    Ok(())
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let io = |e: std::io::Error| FlowError::Io(e);
    match &cli.command {
        Command::Estimate(a) => {
            let m = cmd_estimate(a)?;
            writeln!(
                stdout,
                "wrote {} ({} levels, {:.1} ms)",
                a.out.display(),
                m.levels.len(),
                m.millis
            )
            .map_err(io)?;
        }
        Command::Bench(a) => write!(stdout, "{}", cmd_bench(a)?).map_err(io)?,
        Command::Synth(a) => {
            for p in cmd_synth(a)? {
                writeln!(stdout, "{}", p.display()).map_err(io)?;
            }
        }
        Command::Eval(a) => writeln!(stdout, "{}", cmd_eval(a)?).map_err(io)?,
        Command::Viz(a) => cmd_viz(a)?,
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = resolve_threads(cli.threads).and_then(|threads| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n);
        }
        let pool = b
            .build()
            .map_err(|e| FlowError::param(format!("cannot start thread pool: {e}")))?;
        pool.install(|| dispatch(&cli, &mut std::io::stdout().lock()))
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("patchflow: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_defaults() {
        let cli = Cli::try_parse_from(["patchflow", "estimate", "a.png", "b.png"]).unwrap();
        let Command::Estimate(a) = cli.command else {
            panic!("wrong subcommand")
        };
        let cfg = a.engine_config().unwrap();
        assert_eq!(cfg.iterations, 6);
        assert_eq!(cfg.radius, 2);
        assert_eq!(cfg.propagation, PropagationMode::InverseApprox);
        assert_eq!(cfg.seeds, SeedSet::diag4());
        assert_eq!(cfg.schedule.factors(), vec![4, 1]);
    }

    #[test]
    fn bad_flags_are_usage_errors() {
        let cli = Cli::try_parse_from(["patchflow", "estimate", "a", "b", "--mode", "sideways"]).unwrap();
        let Command::Estimate(a) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(a.engine_config().unwrap_err().exit_code(), 1);
        assert_eq!(run(["patchflow", "estimate"]), 1);
        assert_eq!(
            run(["patchflow", "eval", "/nonexistent/a.flo", "/nonexistent/b.flo"]),
            2
        );
    }

    #[test]
    fn suffix_paths() {
        assert_eq!(
            with_suffix(Path::new("out/flow.flo"), "_iter03", "flo"),
            PathBuf::from("out/flow_iter03.flo")
        );
    }
}
