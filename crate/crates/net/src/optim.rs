//! ADAM with per-epoch exponential learning-rate decay.

use crate::layers::Layer;
use crate::param::Param;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Adam {
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// First and second moments, one buffer per visited parameter.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// One bias-corrected update of every trainable parameter.
    pub fn step(&mut self, model: &mut dyn Layer, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut i = 0;
        model.visit(&mut |p: &mut Param| {
            if ms.len() <= i {
                ms.push(vec![0.0; p.len()]);
                vs.push(vec![0.0; p.len()]);
            }
            if p.trainable {
                let (m, v) = (&mut ms[i], &mut vs[i]);
                let grads = p.grad.as_slice().expect("contiguous").to_vec();
                for (((w, g), mi), vi) in p.values_mut().iter_mut().zip(&grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = b1 * *mi + (1.0 - b1) * g;
                    *vi = b2 * *vi + (1.0 - b2) * g * g;
                    *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
            i += 1;
        });
    }
}

/// Learning rate that starts at `initial` and is multiplied by `decay` at
/// every epoch rollover.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    current: f64,
    epoch: usize,
}

impl LrSchedule {
    pub fn new(initial: f64, decay: f64) -> Self {
        Self {
            initial,
            decay,
            current: initial,
            epoch: 0,
        }
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn next_epoch(&mut self) {
        self.current *= self.decay;
        self.epoch += 1;
    }
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self::new(1e-3, 0.85)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Dense;
    use crate::tensor::Batch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer() -> Dense {
        Dense::new(4, [1, 1, 2], &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    fn values(d: &mut Dense) -> Vec<f64> {
        let mut out = Vec::new();
        d.visit(&mut |p| out.extend_from_slice(p.values()));
        out
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut d = layer();
        let before = values(&mut d);
        let mut adam = Adam::default();
        for _ in 0..3 {
            adam.step(&mut d, 1e-3);
        }
        assert_eq!(values(&mut d), before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut d = layer();
        let before = values(&mut d);
        let x = Batch::from_shape_fn((1, 3, 2, 2), |(_, b, h, w)| (b + 2 * h + w) as f64 - 1.5);
        d.forward(&x, true).unwrap();
        d.backward(&Batch::from_elem((1, 3, 1, 2), 1.0)).unwrap();
        let mut grads = Vec::new();
        d.visit(&mut |p| grads.extend_from_slice(p.grads()));
        let mut adam = Adam::default();
        adam.step(&mut d, 1e-3);
        for ((a, b), g) in values(&mut d).iter().zip(&before).zip(&grads) {
            if g.abs() > 1e-3 {
                assert!((a - b + 1e-3 * g.signum()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn decay_is_exact() {
        let mut s = LrSchedule::default();
        assert_eq!(s.current(), 1e-3);
        let before = s.current();
        s.next_epoch();
        assert_eq!(s.current(), before * 0.85);
        assert_eq!(s.epoch(), 1);
    }
}
