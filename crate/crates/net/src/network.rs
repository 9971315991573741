//! The two-section inverse `g = g2 . g1`: multi-scale conv flows (g1) and
//! the fully connected transformation layer (g2).

use ndarray::{concatenate, s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{Block, BnSettings, ConvBnRelu, DownBlock, ResBlock, Transformation, UpBlock};
use crate::error::{NetError, Result};
use crate::layers::{Conv2d, Dense, Dropout, Layer};
use crate::param::Param;
use crate::tensor::{from_stack, shape4, to_stack, Batch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    /// Side of the square speckle image fed to the network.
    pub input_side: usize,
    /// Side of the square object image produced.
    pub output_side: usize,
    /// Flow `s` works at scale `2^-s`; 1 to 4 flows.
    pub num_flows: usize,
    pub residue_blocks_per_flow: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    pub dropout_rate: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    /// Desk-scale network: two flows, two residual blocks each, 16 channels.
    fn default() -> Self {
        Self {
            input_side: 32,
            output_side: 8,
            num_flows: 2,
            residue_blocks_per_flow: 2,
            base_channels: 16,
            kernel_size: 3,
            dropout_rate: 0.5,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NetError::Config(msg));
        if !(1..=4).contains(&self.num_flows) {
            return bad(format!("num_flows must be 1..=4, got {}", self.num_flows));
        }
        if self.input_side == 0 || self.output_side == 0 || self.base_channels == 0 {
            return bad("sides and base_channels must be positive".into());
        }
        let step = 1usize << (self.num_flows - 1);
        if self.input_side % step != 0 {
            return bad(format!(
                "input_side {} is not divisible by {step} (num_flows = {})",
                self.input_side, self.num_flows
            ));
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.bn_epsilon > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return bad("bn_epsilon must be > 0 and bn_momentum in (0, 1)".into());
        }
        Ok(())
    }

    fn bn(&self) -> BnSettings {
        BnSettings {
            eps: self.bn_epsilon,
            momentum: self.bn_momentum,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetworkConfig,
    flows: Vec<Vec<Block>>,
    flow_channels: Vec<usize>,
    fusion: Option<ConvBnRelu>,
    transform_conv: Conv2d,
    transformation: Transformation,
}

impl Network {
    /// Builds the graph and draws He-scaled weights from `cfg.seed` in graph order.
    pub fn new(cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (c, k, bn) = (cfg.base_channels, cfg.kernel_size, cfg.bn());
        let mut flows = Vec::with_capacity(cfg.num_flows);
        let mut flow_channels = Vec::with_capacity(cfg.num_flows);
        for s in 0..cfg.num_flows {
            let mut blocks = Vec::new();
            if s == 0 && cfg.residue_blocks_per_flow > 0 {
                // full-scale flow: a stem lifts the single input channel
                blocks.push(Block::Stem(ConvBnRelu::new(1, c, k, bn, &mut rng)?));
            }
            for d in 0..s {
                let cin = if d == 0 { 1 } else { c };
                blocks.push(Block::Down(DownBlock::new(cin, c, k, bn, &mut rng)?));
            }
            for _ in 0..cfg.residue_blocks_per_flow {
                blocks.push(Block::Res(ResBlock::new(c, k, bn, &mut rng)?));
            }
            for _ in 0..s {
                blocks.push(Block::Up(UpBlock::new(c, k, bn, &mut rng)?));
            }
            if let Some(first) = blocks.first_mut() {
                first.entry_conv().input_grad = false;
            }
            flow_channels.push(if blocks.is_empty() { 1 } else { c });
            flows.push(blocks);
        }
        let fused: usize = flow_channels.iter().sum();
        let fusion = if cfg.num_flows > 1 {
            Some(ConvBnRelu::new(fused, c, k, bn, &mut rng)?)
        } else {
            None
        };
        let feature_channels = if fusion.is_some() { c } else { fused };
        let mut transform_conv = Conv2d::new(feature_channels, 1, k, &mut rng)?;
        if fusion.is_none() && flows[0].is_empty() {
            transform_conv.input_grad = false;
        }
        let features = cfg.input_side * cfg.input_side;
        let fc = Dense::new(features, [1, cfg.output_side, cfg.output_side], &mut rng)?;
        let dropout = Dropout::new(cfg.dropout_rate, cfg.seed ^ 0x5eed_d209)?;
        Ok(Self {
            cfg,
            flows,
            flow_channels,
            fusion,
            transform_conv,
            transformation: Transformation { dropout, fc },
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&mut self) -> usize {
        let mut count = 0;
        self.visit(&mut |p| {
            if p.trainable {
                count += p.len();
            }
        });
        count
    }

    pub fn zero_grad(&mut self) {
        self.visit(&mut |p| p.zero_grad());
    }

    pub fn transformation_mut(&mut self) -> &mut Transformation {
        &mut self.transformation
    }

    pub fn transform_conv_mut(&mut self) -> &mut Conv2d {
        &mut self.transform_conv
    }

    /// Keeps the current dropout mask across training forwards.
    pub fn freeze_dropout(&mut self, frozen: bool) {
        self.transformation.dropout.frozen = frozen;
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        self.transformation.dropout.reseed(seed);
    }

    pub fn flow_blocks(&self) -> &[Vec<Block>] {
        &self.flows
    }

    /// Runs a `(B, input_side, input_side)` stack of normalized speckles.
    pub fn forward_stack(&mut self, x: &Array3<f64>, training: bool) -> Result<Array3<f64>> {
        to_stack(self.forward(&from_stack(x), training)?)
    }

    /// Backpropagates a `(B, output_side, output_side)` loss gradient.
    pub fn backward_stack(&mut self, dy: &Array3<f64>) -> Result<()> {
        self.backward(&from_stack(dy)).map(|_| ())
    }

    /// Inference on one speckle image.
    pub fn predict(&mut self, speckle: &Array2<f64>) -> Result<Array2<f64>> {
        let x = speckle.view().insert_axis(Axis(0)).to_owned();
        Ok(self.forward_stack(&x, false)?.index_axis_move(Axis(0), 0))
    }

    /// Fused feature map fed to the transformation block, `(C, B, H, W)`.
    pub fn features(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let outs = self
            .flows
            .iter_mut()
            .map(|flow| {
                flow.iter_mut()
                    .try_fold(x.clone(), |h, block| block.forward(&h, training))
            })
            .collect::<Result<Vec<_>>>()?;
        match &mut self.fusion {
            Some(fusion) => {
                let views: Vec<_> = outs.iter().map(|o| o.view()).collect();
                let cat = concatenate(Axis(0), &views)
                    .map_err(|e| NetError::Shape(format!("flow outputs disagree: {e}")))?;
                fusion.forward(&cat, training)
            }
            None => Ok(outs.into_iter().next().expect("at least one flow")),
        }
    }
}

impl Layer for Network {
    fn forward(&mut self, x: &Batch, training: bool) -> Result<Batch> {
        let (c, _, h, w) = shape4(x);
        let side = self.cfg.input_side;
        if c != 1 || h != side || w != side {
            return Err(NetError::Shape(format!(
                "network expects (1, B, {side}, {side}) input, got {:?}",
                x.shape()
            )));
        }
        let f = self.features(x, training)?;
        let t = self.transform_conv.forward(&f, training)?;
        self.transformation.forward(&t, training)
    }

    fn backward(&mut self, dy: &Batch) -> Result<Batch> {
        let d = self.transformation.backward(dy)?;
        let d = self.transform_conv.backward(&d)?;
        let d = match &mut self.fusion {
            Some(fusion) => fusion.backward(&d)?,
            None => d,
        };
        let (_, b, h, w) = shape4(&d);
        let mut dx = Batch::zeros((1, b, h, w));
        let mut offset = 0;
        for (flow, &ch) in self.flows.iter_mut().zip(&self.flow_channels) {
            let mut g = d.slice(s![offset..offset + ch, .., .., ..]).to_owned();
            offset += ch;
            for block in flow.iter_mut().rev() {
                g = block.backward(&g)?;
            }
            dx += &g;
        }
        Ok(dx)
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for flow in &mut self.flows {
            for block in flow {
                block.visit(f);
            }
        }
        if let Some(fusion) = &mut self.fusion {
            fusion.visit(f);
        }
        self.transform_conv.visit(f);
        self.transformation.visit(f);
    }

    fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut fused = 0;
        let mut spatial = None;
        for flow in &self.flows {
            let out = flow.iter().try_fold(input, |shape, b| b.output_shape(shape))?;
            if spatial.is_some_and(|hw| hw != [out[1], out[2]]) {
                return Err(NetError::Shape("flows end at different sizes".into()));
            }
            spatial = Some([out[1], out[2]]);
            fused += out[0];
        }
        let [h, w] = spatial.expect("at least one flow");
        let mut shape = [fused, h, w];
        if let Some(fusion) = &self.fusion {
            shape = fusion.output_shape(shape)?;
        }
        self.transformation.output_shape(self.transform_conv.output_shape(shape)?)
    }
}
