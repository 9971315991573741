//! Synthetic multiple-scattering medium and phaseless measurement.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::image::ImageGrid;
use crate::linalg;
use crate::rng;

/// Value alphabet of a spatial light modulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlmMode {
    /// Pixels fully off or on: values `{0, 1}`.
    Amplitude,
    /// Phases `{0, pi}` written as real signs `{+1, -1}`.
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalMode {
    AmplitudeSlm,
    PhaseSlm,
    FreeComplex,
    FreeReal,
}

impl SignalMode {
    pub fn is_real(self) -> bool {
        !matches!(self, SignalMode::FreeComplex)
    }
}

impl From<SlmMode> for SignalMode {
    fn from(mode: SlmMode) -> Self {
        match mode {
            SlmMode::Amplitude => SignalMode::AmplitudeSlm,
            SlmMode::Phase => SignalMode::PhaseSlm,
        }
    }
}

/// The object `x`: a complex n-vector tagged with the alphabet it lives in.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalVector {
    values: DVector<Complex64>,
    mode: SignalMode,
}

impl SignalVector {
    pub fn new(values: DVector<Complex64>, mode: SignalMode) -> Result<Self> {
        if values.is_empty() {
            return Err(CoreError::InvalidSignal("signal must have n > 0".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(CoreError::InvalidSignal(format!("entry {i} is not finite")));
            }
            let ok = match mode {
                SignalMode::AmplitudeSlm => v.im == 0.0 && (v.re == 0.0 || v.re == 1.0),
                SignalMode::PhaseSlm => v.im == 0.0 && (v.re == 1.0 || v.re == -1.0),
                SignalMode::FreeReal => v.im == 0.0,
                SignalMode::FreeComplex => true,
            };
            if !ok {
                return Err(CoreError::InvalidSignal(format!(
                    "entry {i} = {v} is outside the {mode:?} alphabet"
                )));
            }
        }
        Ok(Self { values, mode })
    }

    pub fn complex(values: DVector<Complex64>) -> Result<Self> {
        Self::new(values, SignalMode::FreeComplex)
    }

    pub fn real(values: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_iterator(values.len(), values.iter().map(|&v| Complex64::new(v, 0.0))),
            SignalMode::FreeReal,
        )
    }

    /// Skips alphabet validation; callers guarantee the mode holds.
    pub(crate) fn from_raw(values: DVector<Complex64>, mode: SignalMode) -> Self {
        Self { values, mode }
    }

    pub fn zeros(n: usize, mode: SignalMode) -> Self {
        Self {
            values: DVector::zeros(n),
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mode(&self) -> SignalMode {
        self.mode
    }

    pub fn values(&self) -> &DVector<Complex64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<Complex64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.values)
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    /// `c * x`, demoted to `FreeComplex` unless the result stays in the alphabet.
    pub fn scaled(&self, c: Complex64) -> SignalVector {
        let values = self.values.map(|v| v * c);
        let mode = if c.im == 0.0 && self.mode.is_real() {
            SignalMode::FreeReal
        } else {
            SignalMode::FreeComplex
        };
        SignalVector { values, mode }
    }
}

/// Complex `n x m` matrix whose columns `a_j` are per-sensor-pixel sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMatrix {
    entries: DMatrix<Complex64>,
    seed: u64,
}

impl TransmissionMatrix {
    pub fn new(entries: DMatrix<Complex64>, seed: u64) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(CoreError::Dimension(format!(
                "transmission matrix must be at least 1x1, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(CoreError::Dimension("transmission matrix has non-finite entries".into()));
        }
        Ok(Self { entries, seed })
    }

    /// Wraps an externally supplied matrix (seed recorded as 0).
    pub fn from_entries(entries: DMatrix<Complex64>) -> Result<Self> {
        Self::new(entries, 0)
    }

    /// Signal dimension.
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of sensor pixels.
    pub fn m(&self) -> usize {
        self.entries.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn column(&self, j: usize) -> DVector<Complex64> {
        self.entries.column(j).into_owned()
    }

    /// Mean `|a_ij|^2` over all entries.
    pub fn mean_entry_power(&self) -> f64 {
        self.entries.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.entries.len() as f64
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<TransmissionMatrix> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.m()) {
            return Err(CoreError::Dimension(format!(
                "column {bad} out of range for m = {}",
                self.m()
            )));
        }
        TransmissionMatrix::new(self.entries.select_columns(columns), self.seed)
    }
}

/// Nonnegative speckle intensities `b`, one per sensor pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityVector {
    values: DVector<f64>,
}

impl IntensityVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        for (index, &value) in values.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CoreError::InvalidIntensity { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn norm(&self) -> f64 {
        self.values.norm()
    }

    pub fn select(&self, indices: &[usize]) -> IntensityVector {
        IntensityVector {
            values: DVector::from_iterator(indices.len(), indices.iter().map(|&j| self.values[j])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    AdditiveGaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            sigma: 0.0,
            seed: 0,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::AdditiveGaussian,
            sigma,
            seed,
        }
    }
}

/// Draws an `n x m` medium with i.i.d. circular complex Gaussian entries of variance `1/n`.
pub fn gen_transmission_matrix(n: usize, m: usize, seed: u64) -> Result<TransmissionMatrix> {
    if n == 0 || m == 0 {
        return Err(CoreError::Dimension(format!(
            "medium needs n >= 1 and m >= 1, got n={n}, m={m}"
        )));
    }
    let mut g = rng::seeded(seed);
    let var = 1.0 / n as f64;
    // Column-major fill: column j is drawn before column j+1.
    let data: Vec<Complex64> = (0..n * m).map(|_| rng::complex_normal(&mut g, var)).collect();
    TransmissionMatrix::new(DMatrix::from_vec(n, m, data), seed)
}

/// `b_j = |a_j^* x|^2`.
pub fn measure(a: &TransmissionMatrix, x: &SignalVector) -> Result<IntensityVector> {
    if x.len() != a.n() {
        return Err(CoreError::Dimension(format!(
            "signal has length {} but medium expects n = {}",
            x.len(),
            a.n()
        )));
    }
    let field = linalg::adjoint_apply(a.entries(), x.values());
    Ok(IntensityVector {
        values: field.map(|z| z.norm_sqr()),
    })
}

/// Raster-encodes a binary image for the given modulator.
pub fn encode_slm(image: &ImageGrid, mode: SlmMode) -> Result<SignalVector> {
    let values = image
        .pixels()
        .iter()
        .enumerate()
        .map(|(index, &p)| match (p == 0.0, p == 1.0, mode) {
            (true, _, SlmMode::Amplitude) => Ok(0.0),
            (_, true, SlmMode::Amplitude) => Ok(1.0),
            (true, _, SlmMode::Phase) => Ok(1.0),
            (_, true, SlmMode::Phase) => Ok(-1.0),
            _ => Err(CoreError::NonBinaryPixel { index, value: p }),
        })
        .collect::<Result<Vec<f64>>>()?;
    SignalVector::new(
        DVector::from_iterator(values.len(), values.into_iter().map(|v| Complex64::new(v, 0.0))),
        mode.into(),
    )
}

/// Inverse of [`encode_slm`] for a signal in an SLM alphabet.
pub fn decode_slm(x: &SignalVector, height: usize, width: usize) -> Result<ImageGrid> {
    let pixels = match x.mode() {
        SignalMode::AmplitudeSlm => x.real_parts(),
        SignalMode::PhaseSlm => x.real_parts().iter().map(|v| 0.5 * (1.0 - v)).collect(),
        other => {
            return Err(CoreError::InvalidSignal(format!("{other:?} signals carry no SLM image")))
        }
    };
    ImageGrid::new(height, width, pixels)
}

pub fn add_noise(b: &IntensityVector, model: &NoiseModel) -> Result<IntensityVector> {
    if !(model.sigma >= 0.0 && model.sigma.is_finite()) {
        return Err(CoreError::InvalidConfig(format!(
            "noise sigma must be finite and >= 0, got {}",
            model.sigma
        )));
    }
    match model.kind {
        NoiseKind::None => Ok(b.clone()),
        NoiseKind::AdditiveGaussian => {
            let mut g = rng::seeded(model.seed);
            let values = b
                .values
                .map(|v| (v + model.sigma * rng::normal(&mut g)).max(0.0));
            Ok(IntensityVector { values })
        }
    }
}
