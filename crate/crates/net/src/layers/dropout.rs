use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Layer;
use crate::error::{NetError, Result};
use crate::param::Param;
use crate::tensor::Batch;

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` during
/// training so inference is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<f64>>,
    /// Reuse the current mask instead of drawing a new one.
    pub frozen: bool,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NetError::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        Ok(Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
            frozen: false,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn mask(&self) -> Option<&[f64]> {
        self.mask.as_deref()
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        if !training {
            return Ok(x.clone());
        }
        let reuse = self.frozen && self.mask.as_ref().is_some_and(|m| m.len() == x.len());
        if !reuse {
            let keep = 1.0 - self.rate;
            let scale = 1.0 / keep;
            let mask = if self.rate == 0.0 {
                vec![1.0; x.len()]
            } else {
                (0..x.len())
                    .map(|_| if self.rng.random::<f64>() < keep { scale } else { 0.0 })
                    .collect()
            };
            self.mask = Some(mask);
        }
        let mask = self.mask.as_ref().expect("set above");
        let mut y = x.as_standard_layout().into_owned();
        y.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        Ok(y)
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let mask = self.mask.as_ref().ok_or(NetError::NoCache)?;
        if mask.len() != dy.len() {
            return Err(NetError::Shape("dropout gradient size differs from forward".into()));
        }
        let mut dx = dy.as_standard_layout().into_owned();
        dx.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        Ok(dx)
    }

    fn visit(&mut self, _f: &mut dyn FnMut(&mut Param)) {}

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        Ok(input)
    }
}
