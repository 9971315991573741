//! Central finite-difference checks of hand-written backward passes.
//!
//! The scalar probed is `L = sum(r . y)` for a fixed random `r`, so the
//! upstream gradient handed to `backward` is exactly `r`.
//!
//! ReLU and max pooling are only piecewise smooth. When the forward and
//! backward one-sided differences disagree, a kink sits inside the stencil
//! and the step is shrunk (at most [`MAX_SHRINKS`] times, by 10 each).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::Layer;
use crate::tensor::Batch;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    /// Description of the worst entry.
    pub worst: String,
    /// Entries whose step had to shrink around a kink.
    pub kinks: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    fn record(&mut self, label: String, analytic: f64, numeric: f64, tol: f64) {
        let err = rel_error(analytic, numeric);
        self.checked += 1;
        if err > tol {
            self.failures += 1;
        }
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = format!("{label}: analytic {analytic:.6e} numeric {numeric:.6e}");
        }
    }
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub const MAX_SHRINKS: usize = 2;

/// Step for coordinate `theta`.
pub fn fd_step(theta: f64) -> f64 {
    1e-5 * (1.0 + theta.abs())
}

/// Central difference of `loss` at `theta`; `l0 = loss(theta)`. The flag
/// says whether the step shrank.
fn central_difference(mut loss: impl FnMut(f64) -> Result<f64>, theta: f64, l0: f64, tol: f64) -> Result<(f64, bool)> {
    let mut h = fd_step(theta);
    for shrinks in 0..=MAX_SHRINKS {
        let plus = loss(theta + h)?;
        let minus = loss(theta - h)?;
        let kinked = rel_error((plus - l0) / h, (l0 - minus) / h) > tol;
        if !kinked || shrinks == MAX_SHRINKS {
            return Ok(((plus - minus) / (2.0 * h), shrinks > 0));
        }
        h *= 0.1;
    }
    unreachable!("the last pass returns")
}

fn probe(layer: &mut dyn Layer, x: &Batch, r: &Batch) -> Result<f64> {
    let y = layer.forward(x, true)?;
    Ok(y.iter().zip(r.iter()).map(|(a, b)| a * b).sum())
}

/// Checks `param_samples` trainable parameter entries and `input_samples`
/// input entries (both drawn without replacement) against central
/// differences. Layers with random masks must be frozen by the caller.
pub fn check_layer(
    layer: &mut dyn Layer,
    x: &Batch,
    param_samples: usize,
    input_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = layer.forward(x, true)?;
    let r = y.mapv(|_| rng.random_range(-1.0..1.0));
    layer.visit(&mut |p| p.zero_grad());
    let dx = layer.backward(&r)?;

    let mut report = GradCheck {
        checked: 0,
        failures: 0,
        max_rel_error: 0.0,
        worst: String::new(),
        kinks: 0,
    };
    let l0 = probe(layer, x, &r)?;

    // (param index, element, analytic gradient)
    let mut slots = Vec::new();
    let mut pi = 0;
    layer.visit(&mut |p| {
        if p.trainable {
            for (e, g) in p.grads().iter().enumerate() {
                slots.push((pi, e, *g, p.name));
            }
        }
        pi += 1;
    });
    let picks = sample(&mut rng, slots.len(), param_samples.min(slots.len()));
    for i in picks {
        let (target, e, analytic, name) = slots[i];
        let mut theta = 0.0;
        nudge(layer, target, e, |v| {
            theta = *v;
        });
        let (numeric, shrank) = central_difference(
            |v| {
                nudge(layer, target, e, |p| *p = v);
                probe(layer, x, &r)
            },
            theta,
            l0,
            tol,
        )?;
        nudge(layer, target, e, |v| *v = theta);
        report.kinks += shrank as usize;
        report.record(format!("{name}[{e}] (param {target})"), analytic, numeric, tol);
    }

    let picks = sample(&mut rng, x.len(), input_samples.min(x.len()));
    let mut xp = x.as_standard_layout().into_owned();
    let dx = dx.as_standard_layout().into_owned();
    for i in picks {
        let theta = xp.as_slice().expect("standard layout")[i];
        let (numeric, shrank) = central_difference(
            |v| {
                xp.as_slice_mut().expect("standard layout")[i] = v;
                probe(layer, &xp, &r)
            },
            theta,
            l0,
            tol,
        )?;
        xp.as_slice_mut().expect("standard layout")[i] = theta;
        let analytic = dx.as_slice().expect("standard layout")[i];
        report.kinks += shrank as usize;
        report.record(format!("input[{i}]"), analytic, numeric, tol);
    }
    Ok(report)
}

fn nudge(layer: &mut dyn Layer, target: usize, element: usize, mut f: impl FnMut(&mut f64)) {
    let mut pi = 0;
    layer.visit(&mut |p| {
        if pi == target {
            f(&mut p.values_mut()[element]);
        }
        pi += 1;
    });
}
