//! Recovery quality and simple statistics.

use speckle_core::calibration::binarize;
use speckle_core::retrieval::{align_global_phase, relative_error};
use speckle_core::{ImageGrid, SignalVector, SlmMode};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quality {
    pub rel_error: f64,
    pub pixel_acc: f64,
}

/// Relative error up to the global phase, and pixel accuracy after aligning
/// to the truth and snapping onto the modulator alphabet.
pub fn quality(x_hat: &SignalVector, truth: &SignalVector, image: &ImageGrid, mode: SlmMode) -> Result<Quality> {
    let rel_error = relative_error(x_hat, truth)?;
    let aligned = align_global_phase(x_hat, truth);
    let snapped = binarize(&aligned, mode, image.height(), image.width())?;
    Ok(Quality {
        rel_error,
        pixel_acc: snapped.image.pixel_accuracy(image)?,
    })
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean over the last `window` entries ending at each position.
pub fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| mean(&values[(i + 1).saturating_sub(w)..=i]))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(HarnessError::Invalid(format!(
            "linear fit needs two or more paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::Invalid("linear fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit { slope, intercept, r2 })
}
