use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;

use super::{he_normal, Layer};
use crate::error::{NetError, Result};
use crate::param::Param;
use crate::tensor::{shape4, Batch};

/// Stride-1 convolution with an odd square kernel and zero "same" padding.
///
/// Weights are stored as `(out, in * k * k)`. Each sample is padded,
/// unrolled with im2col and multiplied on its own so the patch matrix stays
/// in cache; backward rebuilds it from the cached input.
#[derive(Debug, Clone)]
pub struct Conv2d {
    cin: usize,
    cout: usize,
    k: usize,
    pub weight: Param,
    /// Absent when a batch norm follows, which would cancel it.
    pub bias: Option<Param>,
    /// Skips the input gradient (first layer of a network).
    pub input_grad: bool,
    scratch: Scratch,
    input: Option<Batch>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, rng: &mut R) -> Result<Self> {
        if k % 2 == 0 || cin == 0 || cout == 0 {
            return Err(NetError::Config(format!(
                "conv needs positive channels and an odd kernel, got {cin}->{cout} k={k}"
            )));
        }
        let fan_in = cin * k * k;
        let w = ArrayD::from_shape_fn(IxDyn(&[cout, fan_in]), |_| he_normal(rng, fan_in));
        Ok(Self {
            cin,
            cout,
            k,
            weight: Param::new("conv.weight", w),
            bias: Some(Param::zeros("conv.bias", &[cout])),
            input_grad: true,
            scratch: Scratch::default(),
            input: None,
        })
    }

    /// Drops the bias term.
    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }

    pub fn in_channels(&self) -> usize {
        self.cin
    }

    pub fn out_channels(&self) -> usize {
        self.cout
    }

    pub fn kernel(&self) -> usize {
        self.k
    }

    /// Kernel of the adjoint convolution: channels swapped, taps flipped.
    fn flipped_weight(&self) -> Array2<f64> {
        let k = self.k;
        let w = self.weight.values();
        Array2::from_shape_fn((self.cin, self.cout * k * k), |(ci, r)| {
            let co = r / (k * k);
            let ky = (r / k) % k;
            let kx = r % k;
            w[((co * self.cin + ci) * k + (k - 1 - ky)) * k + (k - 1 - kx)]
        })
    }
}


/// Reusable buffers for [`conv_sample`].
#[derive(Debug, Clone, Default)]
struct Scratch {
    padded: Vec<f64>,
    cols: Vec<f64>,
    grid: Vec<f64>,
}

/// Zero-padded copy of sample `bi` of a `(C, B, H, W)` buffer. Each channel
/// becomes a `(h + k - 1) x wp` plane with `wp = w + k - 1`; `k` trailing
/// zeros keep every shifted window in bounds.
fn pad_sample(x: &[f64], (c, b, bi): (usize, usize, usize), (h, w): (usize, usize), k: usize, out: &mut Vec<f64>) {
    let p = k / 2;
    let (hp, wp) = (h + k - 1, w + k - 1);
    out.clear();
    out.resize(c * hp * wp + k, 0.0);
    for ci in 0..c {
        let plane = &x[(ci * b + bi) * h * w..(ci * b + bi + 1) * h * w];
        for (y, row) in plane.chunks_exact(w).enumerate() {
            let at = ci * hp * wp + (y + p) * wp + p;
            out[at..at + w].copy_from_slice(row);
        }
    }
}

/// im2col on the padded grid: row `(ci, ky, kx)` is the padded plane of `ci`
/// shifted by `ky * wp + kx`, over `h * wp` positions. Positions with
/// `x >= w` wrap into the next row and carry nothing useful.
pub fn im2col(padded: &[f64], c: usize, h: usize, w: usize, k: usize, cols: &mut Vec<f64>) {
    let (hp, wp) = (h + k - 1, w + k - 1);
    let len = h * wp;
    cols.resize(c * k * k * len, 0.0);
    for (r, dst) in cols.chunks_exact_mut(len).enumerate() {
        let (ci, ky, kx) = (r / (k * k), (r / k) % k, r % k);
        let at = ci * hp * wp + ky * wp + kx;
        dst.copy_from_slice(&padded[at..at + len]);
    }
}

/// Same-padded convolution of sample `bi` of `src` (`cin` channels) with a
/// `(cout, cin * k * k)` kernel, written into sample `bi` of `dst`.
#[allow(clippy::too_many_arguments)]
fn conv_sample(
    s: &mut Scratch,
    src: &[f64],
    (cin, cout): (usize, usize),
    (b, bi): (usize, usize),
    (h, w): (usize, usize),
    k: usize,
    weight: &[f64],
    dst: &mut [f64],
) {
    let wp = w + k - 1;
    let len = h * wp;
    pad_sample(src, (cin, b, bi), (h, w), k, &mut s.padded);
    im2col(&s.padded, cin, h, w, k, &mut s.cols);
    s.grid.resize(cout * len, 0.0);
    let kk = cin * k * k;
    matmul((cout, len, kk), &mut s.grid, len, weight, (kk, 1), &s.cols, (len, 1), false);
    let hw = h * w;
    for co in 0..cout {
        let out = &mut dst[(co * b + bi) * hw..(co * b + bi + 1) * hw];
        for (y, row) in out.chunks_exact_mut(w).enumerate() {
            let at = co * len + y * wp;
            row.copy_from_slice(&s.grid[at..at + w]);
        }
    }
}

/// `dst = lhs * rhs` (or `+=` when `accumulate`), all matrices given as a
/// slice plus (row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn matmul(
    (m, n, k): (usize, usize, usize),
    dst: &mut [f64],
    dst_rs: usize,
    lhs: &[f64],
    lhs_strides: (usize, usize),
    rhs: &[f64],
    rhs_strides: (usize, usize),
    accumulate: bool,
) {
    let extent = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        if rows == 0 || cols == 0 { 0 } else { (rows - 1) * rs + (cols - 1) * cs + 1 }
    };
    assert!(dst_rs >= n);
    assert!(dst.len() >= extent(m, n, (dst_rs, 1)));
    assert!(lhs.len() >= extent(m, k, lhs_strides));
    assert!(rhs.len() >= extent(k, n, rhs_strides));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts keep every strided access inside its slice, rows of
    // `dst` do not overlap since `dst_rs >= n`, and `dst` is a unique borrow.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            1,
            dst_rs as isize,
            accumulate,
            lhs.as_ptr(),
            lhs_strides.1 as isize,
            lhs_strides.0 as isize,
            rhs.as_ptr(),
            rhs_strides.1 as isize,
            rhs_strides.0 as isize,
            1.0,
            1.0,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let (c, b, h, w) = shape4(x);
        if c != self.cin {
            return Err(NetError::Shape(format!("conv expects {} channels, got {c}", self.cin)));
        }
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let n = b * h * w;
        let mut out = vec![0.0; self.cout * n];
        for bi in 0..b {
            let wt = self.weight.values();
            conv_sample(&mut self.scratch, xs, (c, self.cout), (b, bi), (h, w), self.k, wt, &mut out);
        }
        if let Some(bias) = &self.bias {
            for (row, &b) in out.chunks_exact_mut(n).zip(bias.values()) {
                row.iter_mut().for_each(|v| *v += b);
            }
        }
        self.input = training.then(|| x.into_owned());
        Ok(Batch::from_shape_vec((self.cout, b, h, w), out).expect("conv output shape"))
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let x = self.input.as_ref().ok_or(NetError::NoCache)?;
        let (_, b, h, w) = shape4(x);
        if dy.shape() != [self.cout, b, h, w] {
            return Err(NetError::Shape(format!("conv output gradient has shape {:?}", dy.shape())));
        }
        let (k, hw, n, kk) = (self.k, h * w, b * h * w, self.cin * self.k * self.k);
        let wp = w + k - 1;
        let len = h * wp;
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("standard layout");
        let xs = x.as_slice().expect("standard layout");
        let s = &mut self.scratch;
        // dY laid out on the padded grid; the wrap-around positions stay zero
        let mut dgrid = vec![0.0; self.cout * len];
        for bi in 0..b {
            pad_sample(xs, (self.cin, b, bi), (h, w), k, &mut s.padded);
            im2col(&s.padded, self.cin, h, w, k, &mut s.cols);
            for co in 0..self.cout {
                let src = &dys[(co * b + bi) * hw..(co * b + bi + 1) * hw];
                for (y, row) in src.chunks_exact(w).enumerate() {
                    let at = co * len + y * wp;
                    dgrid[at..at + w].copy_from_slice(row);
                }
            }
            // dW += dY_b * cols^T
            let gw = self.weight.grads_mut();
            matmul((self.cout, kk, len), gw, kk, &dgrid, (len, 1), &s.cols, (1, len), true);
        }
        if let Some(bias) = &mut self.bias {
            for (g, row) in bias.grads_mut().iter_mut().zip(dys.chunks_exact(n)) {
                *g += row.iter().sum::<f64>();
            }
        }
        if !self.input_grad {
            return Ok(Batch::zeros((self.cin, b, h, w)));
        }
        let flipped = self.flipped_weight();
        let fw = flipped.as_slice().expect("standard layout");
        let mut dx = vec![0.0; self.cin * n];
        for bi in 0..b {
            conv_sample(&mut self.scratch, dys, (self.cout, self.cin), (b, bi), (h, w), k, fw, &mut dx);
        }
        Ok(Batch::from_shape_vec((self.cin, b, h, w), dx).expect("conv input shape"))
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(bias) = &mut self.bias {
            f(bias);
        }
    }

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        if input[0] != self.cin {
            return Err(NetError::Shape(format!("conv expects {} channels, got {}", self.cin, input[0])));
        }
        Ok([self.cout, input[1], input[2]])
    }
}
