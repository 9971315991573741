//! Pipeline stages over a dataset directory, and the scripted end-to-end run.
//!
//! Stage artifacts: `estimate.tm` plus `calibration.json` from calibration,
//! `model.ckpt`, `curves.csv` and `training.json` from training.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use speckle_core::calibration::{estimate_tm, TmEstimate};
use speckle_core::medium::gen_transmission_matrix;
use speckle_core::retrieval::SolverConfig;
use speckle_core::io;
use speckle_net::checkpoint::save_checkpoint;
use speckle_net::train::{train, write_curves, EpochRecord, TrainConfig};
use speckle_net::{Network, NetworkConfig};

use crate::bench::{run_bench, write_bench, BenchConfig, BenchReport, BenchRow, Method};
use crate::dataset::{gen_dataset, load_dataset, load_manifest, to_net_dataset, write_dataset, DatasetSpec, CALIBRATION_FILE};
use crate::error::{require, HarnessError, Result};

pub const ESTIMATE_FILE: &str = "estimate.tm";
pub const CALIBRATION_JSON: &str = "calibration.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CURVES_FILE: &str = "curves.csv";
pub const TRAINING_JSON: &str = "training.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub algorithm: String,
    pub max_iters: usize,
    pub seed: u64,
    pub failed_columns: Vec<usize>,
    pub per_column_residuals: Vec<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub parameters: usize,
    pub final_training_error: Option<f64>,
    pub final_validation_error: Option<f64>,
    pub wall_time_s: f64,
}

/// Reads a stage's JSON record; `None` if the stage never ran.
pub fn load_outcome<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Estimates the medium from `calibration.set` in `data_dir`.
pub fn calibrate(data_dir: &Path, out_dir: &Path, cfg: &SolverConfig) -> Result<(TmEstimate, CalibrationOutcome)> {
    let cal = io::load_set(require(data_dir.join(CALIBRATION_FILE), "calibration set")?)?;
    let start = Instant::now();
    let est = estimate_tm(&cal, cfg)?;
    let wall_time_s = start.elapsed().as_secs_f64();
    info!(
        "calibrated {} columns from {} pairs in {:.1} s, {} failed",
        cal.m(),
        cal.k(),
        wall_time_s,
        est.failed_columns.len()
    );
    let outcome = CalibrationOutcome {
        k: cal.k(),
        n: cal.n(),
        m: cal.m(),
        algorithm: format!("{:?}", cfg.algorithm).to_lowercase(),
        max_iters: cfg.max_iters,
        seed: cfg.seed,
        failed_columns: est.failed_columns.iter().copied().collect(),
        per_column_residuals: est.per_column_residuals.clone(),
        wall_time_s,
    };
    fs::create_dir_all(out_dir)?;
    io::save_tm(out_dir.join(ESTIMATE_FILE), &est.a_hat)?;
    write_json(&out_dir.join(CALIBRATION_JSON), &outcome)?;
    Ok((est, outcome))
}

pub fn load_estimate(dir: &Path) -> Result<TmEstimate> {
    let a_hat = io::load_tm(require(dir.join(ESTIMATE_FILE), "calibrated medium estimate")?)?;
    let outcome: CalibrationOutcome = load_outcome(&require(dir.join(CALIBRATION_JSON), "calibration record")?)?
        .expect("checked to exist");
    if outcome.m != a_hat.m() || outcome.per_column_residuals.len() != a_hat.m() {
        return Err(HarnessError::Invalid("calibration record does not match the estimate".into()));
    }
    Ok(TmEstimate {
        a_hat,
        per_column_residuals: outcome.per_column_residuals,
        failed_columns: outcome.failed_columns.into_iter().collect(),
    })
}

/// Speckle side fed to the network: `m` must be a perfect square.
pub fn speckle_side(m: usize) -> Result<usize> {
    let side = (m as f64).sqrt().round() as usize;
    if side * side != m {
        return Err(HarnessError::Invalid(format!("m = {m} is not a perfect square")));
    }
    Ok(side)
}

pub struct Trained {
    pub network: Network,
    pub curves: Vec<EpochRecord>,
    pub outcome: TrainingOutcome,
}

/// Trains on the train split, validating on the val split. The network's
/// sides are taken from the dataset.
pub fn train_stage(data_dir: &Path, out_dir: &Path, net_cfg: NetworkConfig, train_cfg: &TrainConfig) -> Result<Trained> {
    let data = load_dataset(data_dir)?;
    let cfg = NetworkConfig {
        input_side: speckle_side(data.manifest.m)?,
        output_side: data.manifest.side,
        ..net_cfg
    };
    if data.train.is_empty() || data.val.is_empty() {
        return Err(HarnessError::Invalid("training needs non-empty train and val splits".into()));
    }
    let train_set = to_net_dataset(&data.train)?;
    let val_set = to_net_dataset(&data.val)?;
    let mut network = Network::new(cfg)?;
    let start = Instant::now();
    let state = train(&mut network, &train_set, &val_set, train_cfg, |_| {})?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let outcome = TrainingOutcome {
        epochs: train_cfg.epochs,
        batch_size: train_cfg.batch_size,
        seed: train_cfg.seed,
        train_pairs: train_set.len(),
        val_pairs: val_set.len(),
        parameters: network.parameter_count(),
        final_training_error: state.curves.last().map(|r| r.training_error),
        final_validation_error: state.curves.last().map(|r| r.validation_error),
        wall_time_s,
    };
    fs::create_dir_all(out_dir)?;
    save_checkpoint(out_dir.join(CHECKPOINT_FILE), &mut network)?;
    write_curves(BufWriter::new(File::create(out_dir.join(CURVES_FILE))?), &state.curves)?;
    write_json(&out_dir.join(TRAINING_JSON), &outcome)?;
    Ok(Trained {
        network,
        curves: state.curves,
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub m: usize,
    pub medium_seed: u64,
    pub dataset: DatasetSpec,
    pub calibration_solver: SolverConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub bench: BenchConfig,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let methods: &BTreeSet<Method> = &self.bench.methods;
        if methods.contains(&Method::Learned) {
            speckle_side(self.m)?;
        }
        if methods.contains(&Method::DoublePr) && self.dataset.calibration == 0 {
            return Err(HarnessError::Invalid("double-pr needs calibration pairs".into()));
        }
        Ok(())
    }
}

/// gen medium -> gen dataset -> calibrate -> train -> bench, all inside
/// `spec.out_dir`. Stages a method does not need are skipped.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<(Vec<BenchRow>, BenchReport)> {
    spec.validate()?;
    let dir = spec.out_dir.as_path();
    let n = spec.dataset.side * spec.dataset.side;
    let medium = gen_transmission_matrix(n, spec.m, spec.medium_seed)?;
    let data = gen_dataset(&medium, &spec.dataset)?;
    write_dataset(dir, &medium, &data)?;
    load_manifest(dir)?;
    if spec.bench.methods.contains(&Method::DoublePr) {
        calibrate(dir, dir, &spec.calibration_solver)?;
    }
    if spec.bench.methods.contains(&Method::Learned) {
        train_stage(dir, dir, spec.network, &spec.training)?;
    }
    let (rows, report) = run_bench(dir, dir, &spec.bench)?;
    write_bench(dir, &rows, &report)?;
    Ok((rows, report))
}
