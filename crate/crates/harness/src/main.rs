use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use serde::Serialize;
use speckle_core::calibration::recover_signal;
use speckle_core::medium::gen_transmission_matrix;
use speckle_core::retrieval::{solve, Algorithm, SolverConfig};
use speckle_core::{io, SlmMode};
use speckle_net::checkpoint::load_checkpoint;
use speckle_net::train::TrainConfig;
use speckle_net::NetworkConfig;

use speckle_harness::bench::{image_to_signal, run_bench, write_bench, BenchConfig, Method};
use speckle_harness::dataset::{gen_dataset, load_dataset, parse_slm, write_dataset, DatasetSpec, Split, SplitCounts};
use speckle_harness::images::ImageKind;
use speckle_harness::injectivity::{empirical_injectivity, Field, SignalSpace, DEFAULT_TOLERANCE};
use speckle_harness::metrics::quality;
use speckle_harness::pipeline::{calibrate, load_estimate, train_stage};
use speckle_harness::report::{read_curves, write_report};
use speckle_harness::{HarnessError, Result};

/// Imaging through scattering media: simulation, phase retrieval,
/// calibration, a learned inverse and benchmarks.
#[derive(Debug, Parser)]
#[command(name = "speckle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a complex Gaussian transmission matrix and write it as SPKLTM01.
    GenMedium(GenMedium),
    /// Synthesize, sift and split images measured through a medium.
    GenDataset(GenDataset),
    /// Check injectivity of the intensity map over a finite signal space.
    Injectivity(Injectivity),
    /// Recover one test image by phase retrieval.
    Solve(Solve),
    /// Estimate the medium column by column from the calibration pairs.
    Calibrate(Calibrate),
    /// Train the network on a dataset's train split.
    Train(Train),
    /// Run a trained network over a split.
    Infer(Infer),
    /// Time and score recovery methods on the test split.
    Bench(Bench),
    /// Summarize a training curves CSV.
    Report(Report),
}

#[derive(Debug, Args)]
struct GenMedium {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenDataset {
    /// Medium file (SPKLTM01); its n must equal side^2.
    #[arg(long)]
    medium: PathBuf,
    #[arg(long, default_value_t = 8)]
    side: usize,
    /// amplitude or phase
    #[arg(long, default_value = "amplitude", value_parser = parse_slm_arg)]
    mode: SlmMode,
    #[arg(long, default_value_t = 3000)]
    train: usize,
    #[arg(long, default_value_t = 50)]
    val: usize,
    #[arg(long, default_value_t = 50)]
    test: usize,
    /// binary or glyphs
    #[arg(long, default_value = "binary")]
    images: ImageKind,
    /// Standard deviation of additive Gaussian intensity noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Gaussian calibration pairs to generate (0 for none).
    #[arg(long, default_value_t = 0)]
    calibration: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_slm_arg(s: &str) -> std::result::Result<SlmMode, String> {
    parse_slm(s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct Injectivity {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    /// real or complex
    #[arg(long, default_value = "real")]
    field: Field,
    /// binary, signs, qpsk or zero
    #[arg(long, default_value = "binary")]
    space: SignalSpace,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sup-norm distance at or below which two intensity vectors collide.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tol: f64,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// gs or wf
    #[arg(long, default_value = "wf")]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 330.0)]
    wf_t0: f64,
    #[arg(long, default_value_t = 0.4)]
    wf_mu_max: f64,
    /// Keep iterates real (for real signals).
    #[arg(long)]
    real: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        let base = match self.algorithm {
            Algorithm::Gs => SolverConfig::gs(self.iters),
            Algorithm::Wf => SolverConfig::wf(self.iters),
        };
        base.with_tol(self.tol)
            .with_wf_step(self.wf_t0, self.wf_mu_max)
            .with_real_projection(self.real)
            .with_seed(self.seed)
    }
}

#[derive(Debug, Args)]
struct Solve {
    #[arg(long)]
    data: PathBuf,
    /// train, val or test
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Solve through the calibrated estimate in this directory instead of the true medium.
    #[arg(long)]
    estimate: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split `{other}` (train, val or test)")),
    }
}

#[derive(Debug, Args)]
struct Calibrate {
    /// Dataset directory holding calibration.set.
    #[arg(long)]
    data: PathBuf,
    /// Where estimate.tm and calibration.json go (defaults to --data).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Where model.ckpt, curves.csv and training.json go (defaults to --data).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.85)]
    lr_decay: f64,
    #[arg(long, default_value_t = 2)]
    flows: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Seeds both the weight initialization and the batch order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct Infer {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// CSV of per-image scores and predicted pixels.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct Bench {
    #[arg(long)]
    data: PathBuf,
    /// Directory with estimate.tm / model.ckpt (defaults to --data).
    #[arg(long)]
    artifacts: Option<PathBuf>,
    /// Where bench.csv and bench.json go (defaults to --data).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated subset of gs, wf, double-pr, learned.
    #[arg(long, value_delimiter = ',', default_value = "gs,wf,double-pr,learned")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 500)]
    gs_iters: usize,
    #[arg(long, default_value_t = 100)]
    wf_iters: usize,
    /// Solver used through the calibrated estimate: gs or wf.
    #[arg(long, default_value = "gs")]
    dpr_algorithm: Algorithm,
    #[arg(long, default_value_t = 500)]
    dpr_iters: usize,
    /// Keep iterates real (for real signals).
    #[arg(long)]
    real: bool,
    /// Benchmark only the first N test images.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct Report {
    #[arg(long)]
    curves: PathBuf,
    /// Where summary.json and curves_smoothed.csv go.
    #[arg(long)]
    out: PathBuf,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

#[derive(Serialize)]
struct SolveOutput {
    rel_error: f64,
    pixel_acc: f64,
    iterations: usize,
    final_residual: f64,
    time_s: f64,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenMedium(a) => {
            let tm = gen_transmission_matrix(a.n, a.m, a.seed)?;
            io::save_tm(&a.out, &tm)?;
        }
        Command::GenDataset(a) => {
            let medium = io::load_tm(&a.medium)?;
            let spec = DatasetSpec {
                side: a.side,
                mode: a.mode,
                counts: SplitCounts {
                    train: a.train,
                    val: a.val,
                    test: a.test,
                },
                images: a.images,
                noise_sigma: a.noise,
                calibration: a.calibration,
                seed: a.seed,
            };
            let data = gen_dataset(&medium, &spec)?;
            write_dataset(&a.out, &medium, &data)?;
            print_json(&data.manifest)?;
        }
        Command::Injectivity(a) => {
            print_json(&empirical_injectivity(a.n, a.m, a.field, a.space, a.seed, a.tol)?)?;
        }
        Command::Solve(a) => {
            let data = load_dataset(&a.data)?;
            let mode = data.mode()?;
            let samples = data.split(a.split);
            let sample = samples.get(a.index).ok_or_else(|| {
                HarnessError::Invalid(format!("{:?} split has {} images, index {} asked", a.split, samples.len(), a.index))
            })?;
            let cfg = a.solver.config();
            let sol = match &a.estimate {
                Some(dir) => recover_signal(&load_estimate(dir)?, &sample.intensity, &cfg)?,
                None => solve(&speckle_harness::dataset::load_medium(&a.data)?, &sample.intensity, &cfg)?,
            };
            let q = quality(&sol.x_hat, &sample.signal, &sample.image, mode)?;
            print_json(&SolveOutput {
                rel_error: q.rel_error,
                pixel_acc: q.pixel_acc,
                iterations: sol.iterations_run,
                final_residual: sol.final_residual(),
                time_s: sol.wall_time_seconds,
            })?;
        }
        Command::Calibrate(a) => {
            let out = a.out.unwrap_or_else(|| a.data.clone());
            let (_, outcome) = calibrate(&a.data, &out, &a.solver.config())?;
            if !outcome.failed_columns.is_empty() {
                warn!("{} of {} columns failed calibration", outcome.failed_columns.len(), outcome.m);
            }
            println!(
                "estimated {} columns from {} pairs in {:.2} s; {} failed",
                outcome.m,
                outcome.k,
                outcome.wall_time_s,
                outcome.failed_columns.len()
            );
        }
        Command::Train(a) => {
            let out = a.out.unwrap_or_else(|| a.data.clone());
            let net = NetworkConfig {
                num_flows: a.flows,
                residue_blocks_per_flow: a.blocks,
                base_channels: a.channels,
                kernel_size: a.kernel,
                dropout_rate: a.dropout,
                seed: a.seed,
                ..NetworkConfig::default()
            };
            let cfg = TrainConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                seed: a.seed,
                initial_lr: a.lr,
                lr_decay: a.lr_decay,
            };
            let trained = train_stage(&a.data, &out, net, &cfg)?;
            print_json(&trained.outcome)?;
        }
        Command::Infer(a) => {
            let mut net = load_checkpoint(&a.checkpoint)?;
            let data = load_dataset(&a.data)?;
            let mode = data.mode()?;
            let mut w = std::io::BufWriter::new(File::create(&a.out)?);
            writeln!(w, "image_id,mse,pixel_acc,pixels")?;
            for (id, s) in data.split(a.split).iter().enumerate() {
                let grid = speckle_net::data::speckle_grid(&speckle_net::data::normalize_speckle(s.intensity.as_slice()))?;
                let pixels: Vec<f64> = net.predict(&grid)?.iter().copied().collect();
                let mse = pixels.iter().zip(s.image.pixels()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pixels.len() as f64;
                let q = quality(&image_to_signal(&pixels, mode)?, &s.signal, &s.image, mode)?;
                let joined: Vec<String> = pixels.iter().map(|p| p.to_string()).collect();
                writeln!(w, "{id},{mse},{},{}", q.pixel_acc, joined.join(" "))?;
            }
            w.flush()?;
        }
        Command::Bench(a) => {
            let artifacts = a.artifacts.unwrap_or_else(|| a.data.clone());
            let out = a.out.unwrap_or_else(|| a.data.clone());
            let dpr = match a.dpr_algorithm {
                Algorithm::Gs => SolverConfig::gs(a.dpr_iters),
                Algorithm::Wf => SolverConfig::wf(a.dpr_iters),
            };
            let cfg = BenchConfig {
                methods: a.methods.iter().copied().collect::<BTreeSet<_>>(),
                gs: SolverConfig::gs(a.gs_iters).with_real_projection(a.real).with_seed(a.seed),
                wf: SolverConfig::wf(a.wf_iters).with_real_projection(a.real).with_seed(a.seed),
                double_pr: dpr.with_real_projection(a.real).with_seed(a.seed),
                limit: a.limit,
            };
            let (rows, report) = run_bench(&a.data, &artifacts, &cfg)?;
            write_bench(&out, &rows, &report)?;
            print_json(&report)?;
        }
        Command::Report(a) => {
            let rows = read_curves(&a.curves)?;
            fs::create_dir_all(&a.out)?;
            print_json(&write_report(&rows, &a.out)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
