//! Composite blocks of the encoder/decoder flows.

use rand::Rng;

use crate::error::Result;
use crate::layers::{BatchNorm2d, Conv2d, Dense, Dropout, Layer, MaxPool2, Relu, Upsample2};
use crate::param::Param;
use crate::tensor::Batch;

#[derive(Debug, Clone, Copy)]
pub struct BnSettings {
    pub eps: f64,
    pub momentum: f64,
}

/// conv -> batch norm -> ReLU.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    relu: Relu,
}

impl ConvBnRelu {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, bn: BnSettings, rng: &mut R) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(cin, cout, k, rng)?.without_bias(),
            bn: BatchNorm2d::new(cout, bn.eps, bn.momentum)?,
            relu: Relu::new(),
        })
    }
}

impl Layer for ConvBnRelu {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let h = self.conv.forward(x, training)?;
        let h = self.bn.forward(&h, training)?;
        self.relu.forward(&h, training)
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let d = self.relu.backward(dy)?;
        let d = self.bn.backward(&d)?;
        self.conv.backward(&d)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.conv.output_shape(input)
    }
}

/// conv+BN+ReLU followed by 2x2 max pooling.
#[derive(Debug, Clone)]
pub struct DownBlock {
    pub body: ConvBnRelu,
    pool: MaxPool2,
}

impl DownBlock {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, bn: BnSettings, rng: &mut R) -> Result<Self> {
        Ok(Self {
            body: ConvBnRelu::new(cin, cout, k, bn, rng)?,
            pool: MaxPool2::new(),
        })
    }
}

impl Layer for DownBlock {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let h = self.body.forward(x, training)?;
        self.pool.forward(&h, training)
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let d = self.pool.backward(dy)?;
        self.body.backward(&d)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.body.visit(f);
    }

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.pool.output_shape(self.body.output_shape(input)?)
    }
}

/// Two conv+BN stages with an identity shortcut added before the last ReLU.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub first: ConvBnRelu,
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    relu: Relu,
}

impl ResBlock {
    pub fn new<R: Rng + ?Sized>(channels: usize, k: usize, bn: BnSettings, rng: &mut R) -> Result<Self> {
        Ok(Self {
            first: ConvBnRelu::new(channels, channels, k, bn, rng)?,
            conv: Conv2d::new(channels, channels, k, rng)?.without_bias(),
            bn: BatchNorm2d::new(channels, bn.eps, bn.momentum)?,
            relu: Relu::new(),
        })
    }
}

impl Layer for ResBlock {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let h = self.first.forward(x, training)?;
        let h = self.conv.forward(&h, training)?;
        let h = self.bn.forward(&h, training)?;
        self.relu.forward(&(h + x), training)
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let ds = self.relu.backward(dy)?;
        let d = self.bn.backward(&ds)?;
        let d = self.conv.backward(&d)?;
        let d = self.first.backward(&d)?;
        Ok(d + ds)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.first.visit(f);
        self.conv.visit(f);
        self.bn.visit(f);
    }

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.conv.output_shape(self.first.output_shape(input)?)
    }
}

/// conv+BN+ReLU, then the 2x upsampler: nearest resize followed by a conv.
#[derive(Debug, Clone)]
pub struct UpBlock {
    pub body: ConvBnRelu,
    up: Upsample2,
    pub conv: Conv2d,
}

impl UpBlock {
    pub fn new<R: Rng + ?Sized>(channels: usize, k: usize, bn: BnSettings, rng: &mut R) -> Result<Self> {
        Ok(Self {
            body: ConvBnRelu::new(channels, channels, k, bn, rng)?,
            up: Upsample2::new(),
            conv: Conv2d::new(channels, channels, k, rng)?,
        })
    }
}

impl Layer for UpBlock {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let h = self.body.forward(x, training)?;
        let h = self.up.forward(&h, training)?;
        self.conv.forward(&h, training)
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let d = self.conv.backward(dy)?;
        let d = self.up.backward(&d)?;
        self.body.backward(&d)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.body.visit(f);
        self.conv.visit(f);
    }

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.conv.output_shape(self.up.output_shape(self.body.output_shape(input)?)?)
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Block {
    Stem(ConvBnRelu),
    Down(DownBlock),
    Res(ResBlock),
    Up(UpBlock),
}

impl Block {
    fn inner(&mut self) -> &mut dyn Layer {
        match self {
            Block::Stem(b) => b,
            Block::Down(b) => b,
            Block::Res(b) => b,
            Block::Up(b) => b,
        }
    }

    fn inner_ref(&self) -> &dyn Layer {
        match self {
            Block::Stem(b) => b,
            Block::Down(b) => b,
            Block::Res(b) => b,
            Block::Up(b) => b,
        }
    }

    /// The convolution that reads the block input.
    pub fn entry_conv(&mut self) -> &mut Conv2d {
        match self {
            Block::Stem(b) => &mut b.conv,
            Block::Down(b) => &mut b.body.conv,
            Block::Res(b) => &mut b.first.conv,
            Block::Up(b) => &mut b.body.conv,
        }
    }
}

impl Layer for Block {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        self.inner().forward(x, training)
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        self.inner().backward(dy)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.inner().visit(f)
    }

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.inner_ref().output_shape(input)
    }
}

/// The transformation layer: dropout on the flattened features, then the
/// fully connected map into the object domain.
#[derive(Debug, Clone)]
pub struct Transformation {
    pub dropout: Dropout,
    pub fc: Dense,
}

impl Layer for Transformation {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let h = self.dropout.forward(x, training)?;
        self.fc.forward(&h, training)
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let d = self.fc.backward(dy)?;
        self.dropout.backward(&d)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.fc.visit(f);
    }

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.fc.output_shape(input)
    }
}
