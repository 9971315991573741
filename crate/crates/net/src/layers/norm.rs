use ndarray::{ArrayD, IxDyn};

use super::Layer;
use crate::error::{NetError, Result};
use crate::param::Param;
use crate::tensor::{shape4, Batch};

/// Per-channel batch normalization over `(batch, height, width)`.
///
/// Running statistics follow `r <- (1 - momentum) r + momentum * batch`,
/// with the unbiased batch variance.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: (usize, usize, usize, usize),
}

impl BatchNorm2d {
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        if channels == 0 || !(eps > 0.0) || !(momentum > 0.0 && momentum < 1.0) {
            return Err(NetError::Config(format!(
                "batch norm needs channels > 0, eps > 0, momentum in (0, 1); got {channels}, {eps}, {momentum}"
            )));
        }
        Ok(Self {
            channels,
            eps,
            momentum,
            gamma: Param::new("bn.gamma", ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::zeros("bn.beta", &[channels]),
            running_mean: Param::buffer("bn.running_mean", ArrayD::zeros(IxDyn(&[channels]))),
            running_var: Param::buffer("bn.running_var", ArrayD::ones(IxDyn(&[channels]))),
            cache: None,
        })
    }

    /// Normalized activations `x_hat` of the last training forward, before scale and shift.
    pub fn normalized(&self) -> Option<&[f64]> {
        self.cache.as_ref().map(|c| &c.xhat[..])
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let (c, b, h, w) = shape4(x);
        if c != self.channels {
            return Err(NetError::Shape(format!("batch norm expects {} channels, got {c}", self.channels)));
        }
        let n = b * h * w;
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let mut out = vec![0.0; xs.len()];
        let gamma = self.gamma.values().to_vec();
        let beta = self.beta.values().to_vec();
        if training {
            let mut xhat = vec![0.0; xs.len()];
            let mut inv_std = vec![0.0; c];
            for ch in 0..c {
                let seg = &xs[ch * n..(ch + 1) * n];
                let mean = seg.iter().sum::<f64>() / n as f64;
                let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[ch] = istd;
                for (i, v) in seg.iter().enumerate() {
                    let z = (v - mean) * istd;
                    xhat[ch * n + i] = z;
                    out[ch * n + i] = gamma[ch] * z + beta[ch];
                }
                let unbiased = if n > 1 { var * n as f64 / (n - 1) as f64 } else { var };
                let mom = self.momentum;
                let rm = &mut self.running_mean.values_mut()[ch];
                *rm = (1.0 - mom) * *rm + mom * mean;
                let rv = &mut self.running_var.values_mut()[ch];
                *rv = (1.0 - mom) * *rv + mom * unbiased;
            }
            self.cache = Some(BnCache {
                xhat,
                inv_std,
                shape: (c, b, h, w),
            });
        } else {
            let rm = self.running_mean.values();
            let rv = self.running_var.values();
            for ch in 0..c {
                let istd = 1.0 / (rv[ch] + self.eps).sqrt();
                for i in ch * n..(ch + 1) * n {
                    out[i] = gamma[ch] * (xs[i] - rm[ch]) * istd + beta[ch];
                }
            }
            self.cache = None;
        }
        Ok(Batch::from_shape_vec((c, b, h, w), out).expect("same shape"))
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let cache = self.cache.as_ref().ok_or(NetError::NoCache)?;
        let (c, b, h, w) = cache.shape;
        if dy.shape() != [c, b, h, w] {
            return Err(NetError::Shape(format!("batch norm gradient has shape {:?}", dy.shape())));
        }
        let n = b * h * w;
        let dy = dy.as_standard_layout();
        let ds = dy.as_slice().expect("standard layout");
        let gamma = self.gamma.values().to_vec();
        let mut dx = vec![0.0; ds.len()];
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for ch in 0..c {
            let range = ch * n..(ch + 1) * n;
            let (dseg, xseg) = (&ds[range.clone()], &cache.xhat[range.clone()]);
            let sum_dy: f64 = dseg.iter().sum();
            let sum_dy_xhat: f64 = dseg.iter().zip(xseg).map(|(d, z)| d * z).sum();
            dgamma[ch] = sum_dy_xhat;
            dbeta[ch] = sum_dy;
            let scale = gamma[ch] * cache.inv_std[ch] / n as f64;
            for (i, (d, z)) in range.zip(dseg.iter().zip(xseg)) {
                dx[i] = scale * (n as f64 * d - sum_dy - z * sum_dy_xhat);
            }
        }
        self.gamma.grads_mut().iter_mut().zip(&dgamma).for_each(|(g, d)| *g += d);
        self.beta.grads_mut().iter_mut().zip(&dbeta).for_each(|(g, d)| *g += d);
        Ok(Batch::from_shape_vec((c, b, h, w), dx).expect("same shape"))
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        if input[0] != self.channels {
            return Err(NetError::Shape(format!(
                "batch norm expects {} channels, got {}",
                self.channels, input[0]
            )));
        }
        Ok(input)
    }
}
