//! Layers with hand-derived backward passes.
//!
//! `forward(.., training = true)` caches whatever `backward` needs; an
//! inference forward drops the cache. `backward` takes the loss gradient
//! w.r.t. the layer output, accumulates parameter gradients (`+=`) and
//! returns the gradient w.r.t. the input.

mod conv;
mod dense;
mod dropout;
mod norm;
mod simple;

pub use conv::{im2col, Conv2d};
pub use dense::Dense;
pub use dropout::Dropout;
pub use norm::BatchNorm2d;
pub use simple::{MaxPool2, Relu, Upsample2};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::param::Param;
use crate::tensor::Batch;

pub trait Layer {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch>;

    fn backward(&mut self, dy: &Batch) -> Result<Batch>;

    /// Visits parameters (and saved buffers) in a fixed order.
    fn visit(&mut self, f: &mut dyn FnMut(&mut Param));

    /// Per-sample `(C, H, W)` produced from an input of that shape.
    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]>;
}

/// He-scaled Gaussian: `N(0, 2 / fan_in)`.
pub(crate) fn he_normal<R: Rng + ?Sized>(rng: &mut R, fan_in: usize) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * (2.0 / fan_in as f64).sqrt()
}
