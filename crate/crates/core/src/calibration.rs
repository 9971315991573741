//! Double phase retrieval.
//!
//! Step one estimates every column `a_j` of the medium from calibration pairs
//! `(x^(i), b^(i))`: with `X = [x^(1) .. x^(k)]`, column `j` solves the phase
//! retrieval problem `|X^* a_j|^2 = (row j of B)` with `X` as the measurement
//! frame. Step two recovers an unknown signal through the estimated medium.
//!
//! Columns come back with an arbitrary unit-modulus factor each. That is
//! harmless for recovery since `|(A D)^* x| = |A^* x|` for diagonal unitary `D`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::image::ImageGrid;
use crate::linalg::AdjointPinv;
use crate::medium::{
    encode_slm, measure, IntensityVector, SignalMode, SignalVector, SlmMode, TransmissionMatrix,
};
use crate::retrieval::{Retriever, Solution, SolverConfig};
use crate::rng;

/// Relative elementwise gap under which two intensity vectors count as equal.
pub const INTENSITY_MATCH_TOL: f64 = 1e-9;

/// Incremental de-duplication of (image, speckle) pairs.
///
/// A pair is admitted only if neither its image nor its intensity vector
/// matches one already admitted. Intensities are bucketed by their sum (for
/// nonnegative vectors equal within a relative gap the sums are too), so
/// each check only scans a narrow window.
#[derive(Debug, Default)]
pub struct Sifter {
    images: HashSet<(usize, usize, Vec<u64>)>,
    by_sum: BTreeMap<u64, Vec<usize>>,
    intensities: Vec<Vec<f64>>,
}

impl Sifter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn admit(&mut self, image: &ImageGrid, intensity: &IntensityVector) -> bool {
        let key = image_key(image);
        if self.images.contains(&key) || self.has_intensity(intensity.as_slice()) {
            return false;
        }
        self.images.insert(key);
        let sum: f64 = intensity.as_slice().iter().sum();
        self.by_sum
            .entry(sum.to_bits())
            .or_default()
            .push(self.intensities.len());
        self.intensities.push(intensity.as_slice().to_vec());
        true
    }

    fn has_intensity(&self, values: &[f64]) -> bool {
        let sum: f64 = values.iter().sum();
        let lo = sum * (1.0 - 3.0 * INTENSITY_MATCH_TOL);
        let hi = sum * (1.0 + 3.0 * INTENSITY_MATCH_TOL);
        // nonnegative f64 bit patterns order like the values
        self.by_sum
            .range(lo.to_bits()..=hi.to_bits())
            .flat_map(|(_, ids)| ids)
            .any(|&id| intensities_match(&self.intensities[id], values))
    }
}

fn image_key(image: &ImageGrid) -> (usize, usize, Vec<u64>) {
    (
        image.height(),
        image.width(),
        image.pixels().iter().map(|p| (p + 0.0).to_bits()).collect(),
    )
}

pub fn intensities_match(u: &[f64], v: &[f64]) -> bool {
    u.len() == v.len()
        && u
            .iter()
            .zip(v)
            .all(|(a, b)| (a - b).abs() <= INTENSITY_MATCH_TOL * a.abs().max(b.abs()))
}

/// Keeps the first occurrence of every distinct image and every distinct
/// intensity vector, preserving order.
pub fn sift_dataset(pairs: Vec<(ImageGrid, IntensityVector)>) -> Vec<(ImageGrid, IntensityVector)> {
    let mut sifter = Sifter::new();
    pairs
        .into_iter()
        .filter(|(img, b)| sifter.admit(img, b))
        .collect()
}

/// Calibration signals `X` (`n x k`) and their intensities `B` (`m x k`).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    signals: DMatrix<Complex64>,
    intensities: DMatrix<f64>,
    mode: SignalMode,
}

/// How synthetic calibration signals are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationSignals {
    /// i.i.d. circular complex Gaussian entries of unit variance.
    Gaussian,
    /// Fair random binary images in the given modulator alphabet.
    Binary(SlmMode),
}

impl CalibrationSet {
    pub fn new(signals: DMatrix<Complex64>, intensities: DMatrix<f64>, mode: SignalMode) -> Result<Self> {
        let k = signals.ncols();
        if k == 0 {
            return Err(CoreError::EmptyCalibration);
        }
        if intensities.ncols() != k {
            return Err(CoreError::Dimension(format!(
                "{k} calibration signals but {} intensity vectors",
                intensities.ncols()
            )));
        }
        if signals.nrows() == 0 || intensities.nrows() == 0 {
            return Err(CoreError::Dimension("calibration vectors must be non-empty".into()));
        }
        for (index, &value) in intensities.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CoreError::InvalidIntensity { index, value });
            }
        }
        Ok(Self {
            signals,
            intensities,
            mode,
        })
    }

    pub fn from_pairs(pairs: &[(SignalVector, IntensityVector)]) -> Result<Self> {
        let (first_x, first_b) = pairs.first().ok_or(CoreError::EmptyCalibration)?;
        let (n, m) = (first_x.len(), first_b.len());
        if pairs.iter().any(|(x, b)| x.len() != n || b.len() != m) {
            return Err(CoreError::Dimension("calibration pairs have mixed lengths".into()));
        }
        let mode = if pairs.iter().all(|(x, _)| x.mode() == first_x.mode()) {
            first_x.mode()
        } else if pairs.iter().all(|(x, _)| x.mode().is_real()) {
            SignalMode::FreeReal
        } else {
            SignalMode::FreeComplex
        };
        let signals = DMatrix::from_fn(n, pairs.len(), |i, c| pairs[c].0.values()[i]);
        let intensities = DMatrix::from_fn(m, pairs.len(), |j, c| pairs[c].1.as_slice()[j]);
        Self::new(signals, intensities, mode)
    }

    /// Draws `k` calibration signals and measures them through `medium`.
    pub fn generate(
        medium: &TransmissionMatrix,
        k: usize,
        kind: CalibrationSignals,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(CoreError::EmptyCalibration);
        }
        let n = medium.n();
        let mut g = rng::seeded(seed);
        let pairs = (0..k)
            .map(|_| {
                let x = match kind {
                    CalibrationSignals::Gaussian => SignalVector::complex(DVector::from_fn(n, |_, _| {
                        rng::complex_normal(&mut g, 1.0)
                    }))?,
                    CalibrationSignals::Binary(mode) => {
                        let side_img = ImageGrid::new(
                            1,
                            n,
                            (0..n)
                                .map(|_| if rand::Rng::random_bool(&mut g, 0.5) { 1.0 } else { 0.0 })
                                .collect(),
                        )?;
                        encode_slm(&side_img, mode)?
                    }
                };
                let b = measure(medium, &x)?;
                Ok((x, b))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(&pairs)
    }

    pub fn k(&self) -> usize {
        self.signals.ncols()
    }

    pub fn n(&self) -> usize {
        self.signals.nrows()
    }

    pub fn m(&self) -> usize {
        self.intensities.nrows()
    }

    pub fn mode(&self) -> SignalMode {
        self.mode
    }

    pub fn signals(&self) -> &DMatrix<Complex64> {
        &self.signals
    }

    pub fn intensities(&self) -> &DMatrix<f64> {
        &self.intensities
    }

    pub fn signal(&self, i: usize) -> SignalVector {
        SignalVector::from_raw(self.signals.column(i).into_owned(), self.mode)
    }

    pub fn intensity(&self, i: usize) -> IntensityVector {
        IntensityVector::new(self.intensities.column(i).into_owned())
            .expect("validated at construction")
    }

    /// `X` viewed as an `n x k` measurement frame.
    pub fn frame(&self) -> TransmissionMatrix {
        TransmissionMatrix::from_entries(self.signals.clone()).expect("validated at construction")
    }

    /// Data of the `j`-th column problem: row `j` of `B`.
    pub fn column_data(&self, j: usize) -> IntensityVector {
        IntensityVector::new(self.intensities.row(j).transpose()).expect("validated at construction")
    }
}

#[derive(Debug, Clone)]
pub struct TmEstimate {
    pub a_hat: TransmissionMatrix,
    pub per_column_residuals: Vec<f64>,
    pub failed_columns: BTreeSet<usize>,
}

impl TmEstimate {
    /// Wraps a known medium as a perfect estimate.
    pub fn exact(a: TransmissionMatrix) -> Self {
        Self {
            per_column_residuals: vec![0.0; a.m()],
            failed_columns: BTreeSet::new(),
            a_hat: a,
        }
    }
}

/// Seed of column `j`'s solve, independent of scheduling.
pub fn column_seed(master: u64, j: usize) -> u64 {
    master ^ j as u64
}

/// Estimates every column of the medium from the calibration pairs.
///
/// Column `j` is marked failed when its final residual exceeds `10 * tol`,
/// or when the calibration frame has rank below `n` (the column is then not
/// identifiable, whatever the residual).
pub fn estimate_tm(cal: &CalibrationSet, cfg: &SolverConfig) -> Result<TmEstimate> {
    let frame = cal.frame();
    let retriever = Retriever::new(&frame, *cfg)?;
    let rank = match retriever.frame_rank() {
        Some(r) => r,
        None => AdjointPinv::new(frame.entries())?.rank(),
    };
    let identifiable = rank >= cal.n();
    let columns: Vec<(DVector<Complex64>, f64)> = (0..cal.m())
        .into_par_iter()
        .map(|j| {
            let sol = retriever.solve_seeded(&cal.column_data(j), column_seed(cfg.seed, j))?;
            let res = sol.final_residual();
            Ok((sol.x_hat.into_values(), res))
        })
        .collect::<Result<_>>()?;
    assemble(cal, columns, identifiable, cfg.tol)
}

/// Solves a single column problem (what [`estimate_tm`] runs for column `j`).
pub fn estimate_column(cal: &CalibrationSet, j: usize, cfg: &SolverConfig) -> Result<Solution> {
    if j >= cal.m() {
        return Err(CoreError::Dimension(format!("column {j} out of range for m = {}", cal.m())));
    }
    let frame = cal.frame();
    Retriever::new(&frame, *cfg)?.solve_seeded(&cal.column_data(j), column_seed(cfg.seed, j))
}

fn assemble(
    cal: &CalibrationSet,
    columns: Vec<(DVector<Complex64>, f64)>,
    identifiable: bool,
    tol: f64,
) -> Result<TmEstimate> {
    let n = cal.n();
    let mut entries = DMatrix::<Complex64>::zeros(n, cal.m());
    let mut residuals = Vec::with_capacity(cal.m());
    let mut failed = BTreeSet::new();
    for (j, (col, res)) in columns.into_iter().enumerate() {
        entries.set_column(j, &col);
        if !identifiable || !(res <= 10.0 * tol) {
            failed.insert(j);
        }
        residuals.push(res);
    }
    Ok(TmEstimate {
        a_hat: TransmissionMatrix::from_entries(entries)?,
        per_column_residuals: residuals,
        failed_columns: failed,
    })
}

/// Recovers a signal from one speckle through the estimated medium, leaving
/// out columns that failed calibration.
pub fn recover_signal(est: &TmEstimate, b: &IntensityVector, cfg: &SolverConfig) -> Result<Solution> {
    let m = est.a_hat.m();
    if b.len() != m {
        return Err(CoreError::Dimension(format!(
            "intensity vector has length {} but the estimate has m = {m}",
            b.len()
        )));
    }
    if est.failed_columns.len() >= m {
        return Err(CoreError::Unrecoverable);
    }
    if est.failed_columns.is_empty() {
        return Retriever::new(&est.a_hat, *cfg)?.solve(b);
    }
    let keep: Vec<usize> = (0..m).filter(|j| !est.failed_columns.contains(j)).collect();
    let reduced = est.a_hat.select_columns(&keep)?;
    Retriever::new(&reduced, *cfg)?.solve(&b.select(&keep))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binarization {
    pub image: ImageGrid,
    /// Pixels whose imaginary part exceeded `0.3 * max |x|`.
    pub flagged_pixels: usize,
    /// Two-means clustering did not converge; the median was used instead.
    pub used_median_fallback: bool,
}

/// Snaps a phase-aligned estimate back onto the modulator alphabet.
pub fn binarize(x_hat: &SignalVector, mode: SlmMode, height: usize, width: usize) -> Result<Binarization> {
    if height * width != x_hat.len() {
        return Err(CoreError::Dimension(format!(
            "{} values cannot fill a {height}x{width} image",
            x_hat.len()
        )));
    }
    let max_abs = x_hat.values().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let flagged_pixels = x_hat
        .values()
        .iter()
        .filter(|z| z.im.abs() > 0.3 * max_abs)
        .count();
    let re = x_hat.real_parts();
    let (pixels, used_median_fallback) = match mode {
        SlmMode::Phase => (re.iter().map(|&v| if v >= 0.0 { 0.0 } else { 1.0 }).collect(), false),
        SlmMode::Amplitude => {
            let (threshold, fallback) = match two_means_threshold(&re) {
                Some(t) => (t, false),
                None => (median(&re), true),
            };
            (re.iter().map(|&v| if v > threshold { 1.0 } else { 0.0 }).collect(), fallback)
        }
    };
    Ok(Binarization {
        image: ImageGrid::new(height, width, pixels)?,
        flagged_pixels,
        used_median_fallback,
    })
}

/// Midpoint between the two cluster means of 1-D two-means, or `None` if a
/// cluster empties or it fails to settle.
fn two_means_threshold(values: &[f64]) -> Option<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut t = 0.5 * (lo + hi);
    let eps = 1e-12 * (hi - lo).abs().max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let (mut s0, mut c0, mut s1, mut c1) = (0.0, 0usize, 0.0, 0usize);
        for &v in values {
            if v > t {
                s1 += v;
                c1 += 1;
            } else {
                s0 += v;
                c0 += 1;
            }
        }
        if c0 == 0 || c1 == 0 {
            return None;
        }
        let next = 0.5 * (s0 / c0 as f64 + s1 / c1 as f64);
        if (next - t).abs() <= eps {
            return Some(next);
        }
        t = next;
    }
    None
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    }
}
