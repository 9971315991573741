use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD, ArrayView2, ArrayViewMut2, IxDyn};
use rand::Rng;

use super::{he_normal, Layer};
use crate::error::{NetError, Result};
use crate::param::Param;
use crate::tensor::{from_rows, shape4, to_rows, Batch};

/// Fully connected map from flattened per-sample features to `out_shape`.
#[derive(Debug, Clone)]
pub struct Dense {
    in_features: usize,
    out_shape: [usize; 3],
    pub weight: Param,
    pub bias: Param,
    cache: Option<(Array2<f64>, [usize; 3])>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_shape: [usize; 3], rng: &mut R) -> Result<Self> {
        let out: usize = out_shape.iter().product();
        if in_features == 0 || out == 0 {
            return Err(NetError::Config("dense layer needs non-empty input and output".into()));
        }
        let w = ArrayD::from_shape_fn(IxDyn(&[out, in_features]), |_| he_normal(rng, in_features));
        Ok(Self {
            in_features,
            out_shape,
            weight: Param::new("fc.weight", w),
            bias: Param::zeros("fc.bias", &[out]),
            cache: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_shape.iter().product()
    }

    fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.out_features(), self.in_features), self.weight.values())
            .expect("weight shape fixed at construction")
    }
}

impl Layer for Dense {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let (c, _, h, w) = shape4(x);
        if c * h * w != self.in_features {
            return Err(NetError::Shape(format!(
                "dense expects {} features, got {}",
                self.in_features,
                c * h * w
            )));
        }
        let rows = to_rows(x);
        let mut y = Array2::zeros((rows.nrows(), self.out_features()));
        general_mat_mul(1.0, &rows, &self.weight_matrix().t(), 0.0, &mut y);
        let bias = self.bias.values();
        y.rows_mut().into_iter().for_each(|mut r| {
            r.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
        });
        self.cache = training.then_some((rows, [c, h, w]));
        from_rows(y, self.out_shape)
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let (rows, in_chw) = self.cache.as_ref().ok_or(NetError::NoCache)?;
        let (c, b, h, w) = shape4(dy);
        if [c, h, w] != self.out_shape || b != rows.nrows() {
            return Err(NetError::Shape(format!("dense gradient has shape {:?}", dy.shape())));
        }
        let dy_rows = to_rows(dy);
        let (out, inp) = (self.out_features(), self.in_features);
        {
            let mut gw = ArrayViewMut2::from_shape((out, inp), self.weight.grads_mut()).expect("weight shape");
            general_mat_mul(1.0, &dy_rows.t(), rows, 1.0, &mut gw);
        }
        for (g, col) in self.bias.grads_mut().iter_mut().zip(dy_rows.columns()) {
            *g += col.sum();
        }
        from_rows(dy_rows.dot(&self.weight_matrix()), *in_chw)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        if input.iter().product::<usize>() != self.in_features {
            return Err(NetError::Shape(format!("dense expects {} features, got {:?}", self.in_features, input)));
        }
        Ok(self.out_shape)
    }
}
