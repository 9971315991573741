use super::Layer;
use crate::error::{NetError, Result};
use crate::param::Param;
use crate::tensor::{shape4, Batch};

#[derive(Debug, Clone, Default)]
pub struct Relu {
    /// Forward output; its positive entries pass the gradient.
    output: Option<Batch>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let y = x.mapv(|v| v.max(0.0));
        self.output = training.then(|| y.clone());
        Ok(y)
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let y = self.output.as_ref().ok_or(NetError::NoCache)?;
        if y.shape() != dy.shape() {
            return Err(NetError::Shape("relu gradient shape differs from forward".into()));
        }
        Ok(ndarray::Zip::from(dy).and(y).map_collect(|&d, &v| if v > 0.0 { d } else { 0.0 }))
    }

    fn visit(&mut self, _f: &mut dyn FnMut(&mut Param)) {}

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        Ok(input)
    }
}

/// 2x2 max pooling with stride 2; ties go to the first element in raster order.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Option<(Vec<usize>, [usize; 4])>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for MaxPool2 {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let (c, b, h, w) = shape4(x);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NetError::Shape(format!("max pool needs even sides, got {h}x{w}")));
        }
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(c * b * ho * wo);
        let mut idx = Vec::with_capacity(if training { c * b * ho * wo } else { 0 });
        for plane in 0..c * b {
            let base = plane * h * w;
            for y in 0..ho {
                for xx in 0..wo {
                    let i0 = base + 2 * y * w + 2 * xx;
                    let mut best = i0;
                    for cand in [i0 + 1, i0 + w, i0 + w + 1] {
                        if xs[cand] > xs[best] {
                            best = cand;
                        }
                    }
                    out.push(xs[best]);
                    if training {
                        idx.push(best);
                    }
                }
            }
        }
        self.argmax = training.then_some((idx, [c, b, h, w]));
        Ok(Batch::from_shape_vec((c, b, ho, wo), out).expect("pooled shape"))
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let (idx, [c, b, h, w]) = self.argmax.as_ref().ok_or(NetError::NoCache)?;
        if dy.shape() != [*c, *b, h / 2, w / 2] {
            return Err(NetError::Shape(format!("max pool gradient has shape {:?}", dy.shape())));
        }
        let mut dx = vec![0.0; c * b * h * w];
        for (&i, &d) in idx.iter().zip(dy.as_standard_layout().iter()) {
            dx[i] += d;
        }
        Ok(Batch::from_shape_vec((*c, *b, *h, *w), dx).expect("input shape"))
    }

    fn visit(&mut self, _f: &mut dyn FnMut(&mut Param)) {}

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        if input[1] % 2 != 0 || input[2] % 2 != 0 {
            return Err(NetError::Shape(format!("max pool needs even sides, got {:?}", input)));
        }
        Ok([input[0], input[1] / 2, input[2] / 2])
    }
}

/// Nearest-neighbour 2x resize.
#[derive(Debug, Clone, Default)]
pub struct Upsample2 {
    input: Option<[usize; 4]>,
}

impl Upsample2 {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Upsample2 {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let (c, b, h, w) = shape4(x);
        let y = Batch::from_shape_fn((c, b, 2 * h, 2 * w), |(ci, bi, y, xx)| x[[ci, bi, y / 2, xx / 2]]);
        self.input = training.then_some([c, b, h, w]);
        Ok(y)
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let [c, b, h, w] = self.input.ok_or(NetError::NoCache)?;
        if dy.shape() != [c, b, 2 * h, 2 * w] {
            return Err(NetError::Shape(format!("upsample gradient has shape {:?}", dy.shape())));
        }
        Ok(Batch::from_shape_fn((c, b, h, w), |(ci, bi, y, xx)| {
            dy[[ci, bi, 2 * y, 2 * xx]]
                + dy[[ci, bi, 2 * y, 2 * xx + 1]]
                + dy[[ci, bi, 2 * y + 1, 2 * xx]]
                + dy[[ci, bi, 2 * y + 1, 2 * xx + 1]]
        }))
    }

    fn visit(&mut self, _f: &mut dyn FnMut(&mut Param)) {}

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        Ok([input[0], 2 * input[1], 2 * input[2]])
    }
}
