//! Synthetic datasets: images through a medium, sifted and split, on disk.
//!
//! A dataset directory holds `medium.tm` (SPKLTM01), one SPKLSET1 file per
//! non-empty split, an optional `calibration.set` of Gaussian calibration
//! pairs and `dataset.json` describing how it was made.

use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use speckle_core::calibration::{CalibrationSet, CalibrationSignals, Sifter};
use speckle_core::medium::{add_noise, decode_slm, encode_slm, measure};
use speckle_core::{io, rng, ImageGrid, IntensityVector, NoiseModel, SignalVector, SlmMode, TransmissionMatrix};
use speckle_net::data::Dataset;

use crate::error::{require, HarnessError, Result};
use crate::images::{random_image, ImageKind};

pub const MEDIUM_FILE: &str = "medium.tm";
pub const CALIBRATION_FILE: &str = "calibration.set";
pub const MANIFEST_FILE: &str = "dataset.json";

const SPLIT_SALT: u64 = 0x5b11_7000;
const NOISE_SALT: u64 = 0x0015_e000;
const CALIBRATION_SALT: u64 = 0xca11_b000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.set",
            Split::Val => "val.set",
            Split::Test => "test.set",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

pub fn slm_name(mode: SlmMode) -> &'static str {
    match mode {
        SlmMode::Amplitude => "amplitude",
        SlmMode::Phase => "phase",
    }
}

pub fn parse_slm(s: &str) -> Result<SlmMode> {
    match s {
        "amplitude" => Ok(SlmMode::Amplitude),
        "phase" => Ok(SlmMode::Phase),
        other => Err(HarnessError::Invalid(format!("unknown SLM mode `{other}`"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    /// Object images are `side x side`, so `n = side^2`.
    pub side: usize,
    pub mode: SlmMode,
    pub counts: SplitCounts,
    pub images: ImageKind,
    /// Standard deviation of additive Gaussian intensity noise; 0 disables it.
    pub noise_sigma: f64,
    /// Number of Gaussian calibration pairs to store alongside the splits.
    pub calibration: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(side: usize, counts: SplitCounts, seed: u64) -> Self {
        Self {
            side,
            mode: SlmMode::Amplitude,
            counts,
            images: ImageKind::Binary,
            noise_sigma: 0.0,
            calibration: 0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n: usize,
    pub m: usize,
    pub side: usize,
    pub mode: String,
    pub images: ImageKind,
    pub noise_sigma: f64,
    pub seed: u64,
    pub medium_seed: u64,
    pub requested: SplitCounts,
    pub achieved: SplitCounts,
    pub calibration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageGrid,
    pub signal: SignalVector,
    pub intensity: IntensityVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub manifest: Manifest,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub calibration: Option<CalibrationSet>,
}

impl GeneratedDataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn mode(&self) -> Result<SlmMode> {
        parse_slm(&self.manifest.mode)
    }
}

fn noisy(b: IntensityVector, sigma: f64, seed: u64) -> Result<IntensityVector> {
    if sigma > 0.0 {
        Ok(add_noise(&b, &NoiseModel::gaussian(sigma, seed))?)
    } else {
        Ok(b)
    }
}

/// Draws images, measures them through `medium`, sifts duplicates across all
/// splits and deals the survivors into train/val/test by a seeded shuffle.
///
/// If the image alphabet runs out first, every split keeps what it got (train
/// first) and a warning names the shortfall.
pub fn gen_dataset(medium: &TransmissionMatrix, spec: &DatasetSpec) -> Result<GeneratedDataset> {
    let n = spec.side * spec.side;
    if spec.side == 0 || n != medium.n() {
        return Err(HarnessError::Invalid(format!(
            "{0}x{0} images need n = {1}, medium has n = {2}",
            spec.side,
            n,
            medium.n()
        )));
    }
    let total = spec.counts.total();
    let mut draw_rng = rng::seeded(spec.seed);
    let mut sifter = Sifter::new();
    let mut pool = Vec::with_capacity(total);
    let max_draws = 20 * total + 1000;
    for draw in 0..max_draws {
        if pool.len() == total {
            break;
        }
        let image = random_image(spec.images, spec.side, &mut draw_rng)?;
        let signal = encode_slm(&image, spec.mode)?;
        let clean = measure(medium, &signal)?;
        let intensity = noisy(clean, spec.noise_sigma, spec.seed ^ NOISE_SALT ^ (draw as u64).wrapping_mul(0x9e37_79b9))?;
        if sifter.admit(&image, &intensity) {
            pool.push(Sample { image, signal, intensity });
        }
    }
    pool.shuffle(&mut rng::seeded(spec.seed ^ SPLIT_SALT));

    let mut rest = pool.into_iter();
    let mut take = |split: Split| -> Vec<Sample> {
        let want = spec.counts.get(split);
        let got: Vec<Sample> = rest.by_ref().take(want).collect();
        if got.len() < want {
            warn!(
                "{:?} split: requested {want} pairs, sifting left {} distinct ones",
                split,
                got.len()
            );
        }
        got
    };
    let (train, val, test) = (take(Split::Train), take(Split::Val), take(Split::Test));

    let calibration = if spec.calibration > 0 {
        let cal = CalibrationSet::generate(medium, spec.calibration, CalibrationSignals::Gaussian, spec.seed ^ CALIBRATION_SALT)?;
        Some(if spec.noise_sigma > 0.0 {
            let pairs = (0..cal.k())
                .map(|i| {
                    let b = noisy(cal.intensity(i), spec.noise_sigma, spec.seed ^ CALIBRATION_SALT ^ (i as u64 + 1))?;
                    Ok((cal.signal(i), b))
                })
                .collect::<Result<Vec<_>>>()?;
            CalibrationSet::from_pairs(&pairs)?
        } else {
            cal
        })
    } else {
        None
    };

    let manifest = Manifest {
        n,
        m: medium.m(),
        side: spec.side,
        mode: slm_name(spec.mode).to_string(),
        images: spec.images,
        noise_sigma: spec.noise_sigma,
        seed: spec.seed,
        medium_seed: medium.seed(),
        requested: spec.counts,
        achieved: SplitCounts {
            train: train.len(),
            val: val.len(),
            test: test.len(),
        },
        calibration: spec.calibration,
    };
    Ok(GeneratedDataset {
        manifest,
        train,
        val,
        test,
        calibration,
    })
}

fn to_set(samples: &[Sample]) -> Result<CalibrationSet> {
    let pairs: Vec<_> = samples.iter().map(|s| (s.signal.clone(), s.intensity.clone())).collect();
    Ok(CalibrationSet::from_pairs(&pairs)?)
}

fn from_set(set: &CalibrationSet, side: usize) -> Result<Vec<Sample>> {
    (0..set.k())
        .map(|i| {
            let signal = set.signal(i);
            Ok(Sample {
                image: decode_slm(&signal, side, side)?,
                signal,
                intensity: set.intensity(i),
            })
        })
        .collect()
}

pub fn write_dataset(dir: impl AsRef<Path>, medium: &TransmissionMatrix, data: &GeneratedDataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    io::save_tm(dir.join(MEDIUM_FILE), medium)?;
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        let samples = data.split(split);
        if samples.is_empty() {
            if path.exists() {
                fs::remove_file(&path)?;
            }
        } else {
            io::save_set(&path, &to_set(samples)?)?;
        }
    }
    if let Some(cal) = &data.calibration {
        io::save_set(dir.join(CALIBRATION_FILE), cal)?;
    }
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&data.manifest)? + "\n")?;
    Ok(())
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = require(dir.as_ref().join(MANIFEST_FILE), "dataset manifest")?;
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn load_medium(dir: impl AsRef<Path>) -> Result<TransmissionMatrix> {
    let path = require(dir.as_ref().join(MEDIUM_FILE), "medium file")?;
    Ok(io::load_tm(path)?)
}

/// Samples of one split; an absent file is an empty split.
pub fn load_split(dir: impl AsRef<Path>, split: Split, side: usize) -> Result<Vec<Sample>> {
    let path = dir.as_ref().join(split.file_name());
    if !path.exists() {
        return Ok(Vec::new());
    }
    from_set(&io::load_set(path)?, side)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<GeneratedDataset> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let cal_path = dir.join(CALIBRATION_FILE);
    let calibration = if cal_path.exists() {
        Some(io::load_set(cal_path)?)
    } else {
        None
    };
    Ok(GeneratedDataset {
        train: load_split(dir, Split::Train, manifest.side)?,
        val: load_split(dir, Split::Val, manifest.side)?,
        test: load_split(dir, Split::Test, manifest.side)?,
        calibration,
        manifest,
    })
}

/// Network view of samples: normalized speckle grids against target images.
pub fn to_net_dataset(samples: &[Sample]) -> Result<Dataset> {
    let side = samples
        .first()
        .map(|s| s.image.height())
        .ok_or_else(|| HarnessError::Invalid("no samples".into()))?;
    let speckles: Vec<Vec<f64>> = samples.iter().map(|s| s.intensity.as_slice().to_vec()).collect();
    let images: Vec<Vec<f64>> = samples.iter().map(|s| s.image.pixels().to_vec()).collect();
    Ok(Dataset::from_pairs(&speckles, &images, side)?)
}
