//! Per-image recovery benchmark over a dataset's test split.
//!
//! Only the recovery call is timed: solver set-up, calibration and training
//! are one-time costs and are reported separately in `bench.json`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use speckle_core::calibration::TmEstimate;
use speckle_core::retrieval::{Retriever, SolverConfig};
use speckle_core::{SignalVector, SlmMode, TransmissionMatrix};
use speckle_net::checkpoint::load_checkpoint;
use speckle_net::data::{normalize_speckle, speckle_grid};
use speckle_net::Network;

use crate::dataset::{load_dataset, load_medium, Sample};
use crate::error::{require, HarnessError, Result};
use crate::metrics::{mean, quality};
use crate::pipeline::{load_estimate, load_outcome, CalibrationOutcome, TrainingOutcome, CALIBRATION_JSON, CHECKPOINT_FILE, ESTIMATE_FILE, TRAINING_JSON};

pub const BENCH_CSV: &str = "bench.csv";
pub const BENCH_JSON: &str = "bench.json";

/// Below this many test images the summary says its statistics are loose.
pub const MIN_TEST_IMAGES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Gerchberg-Saxton through the true medium.
    Gs,
    /// Wirtinger Flow through the true medium.
    Wf,
    /// Recovery through the calibrated estimate of the medium.
    DoublePr,
    /// The trained network.
    Learned,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Gs, Method::Wf, Method::DoublePr, Method::Learned];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gs => "gs",
            Method::Wf => "wf",
            Method::DoublePr => "double-pr",
            Method::Learned => "learned",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (gs, wf, double-pr or learned)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub methods: BTreeSet<Method>,
    pub gs: SolverConfig,
    pub wf: SolverConfig,
    /// Solver run through the estimated medium.
    pub double_pr: SolverConfig,
    /// Use only the first `limit` test images.
    pub limit: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.into_iter().collect(),
            gs: SolverConfig::gs(500),
            wf: SolverConfig::wf(100),
            double_pr: SolverConfig::gs(500),
            limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub image_id: usize,
    pub rel_error: f64,
    pub pixel_acc: f64,
    pub time_s: f64,
    pub iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub images: usize,
    pub mean_rel_error: f64,
    pub mean_pixel_acc: f64,
    pub mean_time_s: f64,
    pub mean_iters: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OneTimeCosts {
    pub calibration_s: Option<f64>,
    pub training_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub test_images: usize,
    pub methods: Vec<MethodSummary>,
    pub one_time_costs: OneTimeCosts,
    pub note: String,
}

/// Per-method means recomputed from rows, in `methods` order.
pub fn summarize(rows: &[BenchRow], methods: &BTreeSet<Method>) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|m| {
            let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.method == m.name()).collect();
            let col = |f: fn(&BenchRow) -> f64| mean(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            let iters: Vec<f64> = mine.iter().filter_map(|r| r.iters.map(|i| i as f64)).collect();
            MethodSummary {
                method: m.name().to_string(),
                images: mine.len(),
                mean_rel_error: col(|r| r.rel_error),
                mean_pixel_acc: col(|r| r.pixel_acc),
                mean_time_s: col(|r| r.time_s),
                mean_iters: (!iters.is_empty()).then(|| mean(&iters)),
            }
        })
        .collect()
}

fn note(test_images: usize) -> String {
    if test_images >= MIN_TEST_IMAGES {
        format!("{test_images} test images; times cover the recovery call only")
    } else {
        format!(
            "only {test_images} test images (default is {MIN_TEST_IMAGES}); means are loose; times cover the recovery call only"
        )
    }
}

/// Network output image as a signal on the modulator alphabet's scale.
pub fn image_to_signal(pixels: &[f64], mode: SlmMode) -> Result<SignalVector> {
    let values: Vec<f64> = match mode {
        SlmMode::Amplitude => pixels.to_vec(),
        SlmMode::Phase => pixels.iter().map(|p| 1.0 - 2.0 * p).collect(),
    };
    Ok(SignalVector::real(&values)?)
}

struct Solver<'a> {
    retriever: Retriever<'a>,
    keep: Option<Vec<usize>>,
}

fn seeded_solve(
    solver: &Solver<'_>,
    sample: &Sample,
    seed: u64,
    id: usize,
    mode: SlmMode,
    method: Method,
) -> Result<BenchRow> {
    let b = match &solver.keep {
        Some(keep) => sample.intensity.select(keep),
        None => sample.intensity.clone(),
    };
    let start = Instant::now();
    let sol = solver.retriever.solve_seeded(&b, seed ^ id as u64)?;
    let time_s = start.elapsed().as_secs_f64();
    let q = quality(&sol.x_hat, &sample.signal, &sample.image, mode)?;
    Ok(BenchRow {
        method: method.name().to_string(),
        image_id: id,
        rel_error: q.rel_error,
        pixel_acc: q.pixel_acc,
        time_s,
        iters: Some(sol.iterations_run),
    })
}

fn learned_row(net: &mut Network, sample: &Sample, id: usize, mode: SlmMode) -> Result<BenchRow> {
    let start = Instant::now();
    let grid = speckle_grid(&normalize_speckle(sample.intensity.as_slice()))?;
    let out = net.predict(&grid)?;
    let time_s = start.elapsed().as_secs_f64();
    let pixels: Vec<f64> = out.iter().copied().collect();
    let x_hat = image_to_signal(&pixels, mode)?;
    let q = quality(&x_hat, &sample.signal, &sample.image, mode)?;
    Ok(BenchRow {
        method: Method::Learned.name().to_string(),
        image_id: id,
        rel_error: q.rel_error,
        pixel_acc: q.pixel_acc,
        time_s,
        iters: None,
    })
}

fn estimate_solver<'a>(est: &'a TmEstimate, reduced: &'a Option<TransmissionMatrix>, cfg: SolverConfig) -> Result<Solver<'a>> {
    let m = est.a_hat.m();
    if est.failed_columns.len() >= m {
        return Err(HarnessError::Invalid("every column of the estimate failed calibration".into()));
    }
    Ok(match reduced {
        Some(a) => Solver {
            retriever: Retriever::new(a, cfg)?,
            keep: Some((0..m).filter(|j| !est.failed_columns.contains(j)).collect()),
        },
        None => Solver {
            retriever: Retriever::new(&est.a_hat, cfg)?,
            keep: None,
        },
    })
}

/// Benchmarks every requested method on the test split of `data_dir`,
/// reading the estimate and checkpoint from `artifacts_dir`.
pub fn run_bench(data_dir: &Path, artifacts_dir: &Path, cfg: &BenchConfig) -> Result<(Vec<BenchRow>, BenchReport)> {
    if cfg.methods.is_empty() {
        return Err(HarnessError::Invalid("no methods requested".into()));
    }
    // fail on missing artifacts before any work
    if cfg.methods.contains(&Method::DoublePr) {
        require(artifacts_dir.join(ESTIMATE_FILE), "calibrated medium estimate")?;
    }
    if cfg.methods.contains(&Method::Learned) {
        require(artifacts_dir.join(CHECKPOINT_FILE), "network checkpoint")?;
    }
    let data = load_dataset(data_dir)?;
    let mode = data.mode()?;
    let mut test: &[Sample] = &data.test;
    if let Some(limit) = cfg.limit {
        test = &test[..limit.min(test.len())];
    }
    if test.is_empty() {
        return Err(HarnessError::Invalid(format!("{} has no test images", data_dir.display())));
    }

    let mut rows = Vec::new();
    let medium = if cfg.methods.contains(&Method::Gs) || cfg.methods.contains(&Method::Wf) {
        Some(load_medium(data_dir)?)
    } else {
        None
    };
    for (method, solver_cfg) in [(Method::Gs, cfg.gs), (Method::Wf, cfg.wf)] {
        if !cfg.methods.contains(&method) {
            continue;
        }
        let solver = Solver {
            retriever: Retriever::new(medium.as_ref().expect("loaded above"), solver_cfg)?,
            keep: None,
        };
        for (id, sample) in test.iter().enumerate() {
            rows.push(seeded_solve(&solver, sample, solver_cfg.seed, id, mode, method)?);
        }
    }
    if cfg.methods.contains(&Method::DoublePr) {
        let est = load_estimate(artifacts_dir)?;
        let reduced = if est.failed_columns.is_empty() || est.failed_columns.len() >= est.a_hat.m() {
            None
        } else {
            let keep: Vec<usize> = (0..est.a_hat.m()).filter(|j| !est.failed_columns.contains(j)).collect();
            Some(est.a_hat.select_columns(&keep)?)
        };
        let solver = estimate_solver(&est, &reduced, cfg.double_pr)?;
        for (id, sample) in test.iter().enumerate() {
            rows.push(seeded_solve(&solver, sample, cfg.double_pr.seed, id, mode, Method::DoublePr)?);
        }
    }
    if cfg.methods.contains(&Method::Learned) {
        let mut net = load_checkpoint(artifacts_dir.join(CHECKPOINT_FILE))?;
        for (id, sample) in test.iter().enumerate() {
            rows.push(learned_row(&mut net, sample, id, mode)?);
        }
    }

    let one_time_costs = OneTimeCosts {
        calibration_s: load_outcome::<CalibrationOutcome>(&artifacts_dir.join(CALIBRATION_JSON))?.map(|o| o.wall_time_s),
        training_s: load_outcome::<TrainingOutcome>(&artifacts_dir.join(TRAINING_JSON))?.map(|o| o.wall_time_s),
    };
    let report = BenchReport {
        test_images: test.len(),
        methods: summarize(&rows, &cfg.methods),
        one_time_costs,
        note: note(test.len()),
    };
    Ok((rows, report))
}

pub fn write_bench(out_dir: &Path, rows: &[BenchRow], report: &BenchReport) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join(BENCH_CSV))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    fs::write(out_dir.join(BENCH_JSON), serde_json::to_string_pretty(report)? + "\n")?;
    Ok(())
}

pub fn read_bench_csv(path: &Path) -> Result<Vec<BenchRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}
