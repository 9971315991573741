//! Mini-batch training with ADAM and per-epoch learning-rate decay.

use std::io::Write;

use log::info;
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{NetError, Result};
use crate::layers::Layer;
use crate::loss::mse_loss;
use crate::network::Network;
use crate::optim::{Adam, LrSchedule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub initial_lr: f64,
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            seed: 0,
            initial_lr: 1e-3,
            lr_decay: 0.85,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// MSE of one randomly drawn training sample after the epoch.
    pub training_error: f64,
    /// Mean MSE over the validation set after the epoch.
    pub validation_error: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub adam: Adam,
    pub schedule: LrSchedule,
    pub rng: ChaCha8Rng,
    pub curves: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            adam: Adam::default(),
            schedule: LrSchedule::new(cfg.initial_lr, cfg.lr_decay),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            curves: Vec::new(),
        }
    }
}

/// Mean per-sample MSE in inference mode.
pub fn evaluate(net: &mut Network, set: &Dataset, batch_size: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(NetError::EmptyDataset("evaluation set"));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, t) = set.batch(chunk);
        let y = net.forward_stack(&x, false)?;
        total += mse_loss(&y, &t)?.0 * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

/// Inference over a whole set, `(N, out, out)`.
pub fn predict_all(net: &mut Network, inputs: &Array3<f64>, batch_size: usize) -> Result<Array3<f64>> {
    let n = inputs.shape()[0];
    let side = net.config().output_side;
    let mut out = Array3::zeros((n, side, side));
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let y = net.forward_stack(&inputs.select(ndarray::Axis(0), chunk), false)?;
        for (k, &i) in chunk.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), i).assign(&y.index_axis(ndarray::Axis(0), k));
        }
    }
    Ok(out)
}

/// Trains `net`, calling `on_epoch` after each epoch.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainState> {
    let mut state = TrainState::new(cfg);
    if cfg.epochs == 0 {
        return Ok(state);
    }
    if train_set.is_empty() {
        return Err(NetError::EmptyDataset("training set"));
    }
    if val_set.is_empty() {
        return Err(NetError::EmptyDataset("validation set"));
    }
    let ncfg = *net.config();
    for set in [train_set, val_set] {
        if set.input_side() != ncfg.input_side || set.output_side() != ncfg.output_side {
            return Err(NetError::Shape(format!(
                "dataset is {}->{} but the network is {}->{}",
                set.input_side(),
                set.output_side(),
                ncfg.input_side,
                ncfg.output_side
            )));
        }
    }
    let batch = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for _ in 0..cfg.epochs {
        let lr = state.schedule.current();
        order.shuffle(&mut state.rng);
        for chunk in order.chunks(batch) {
            let (x, t) = train_set.batch(chunk);
            net.zero_grad();
            let y = net.forward_stack(&x, true)?;
            let (_, grad) = mse_loss(&y, &t)?;
            net.backward_stack(&grad)?;
            state.adam.step(net as &mut dyn Layer, lr);
        }
        let probe = state.rng.random_range(0..train_set.len());
        let (x, t) = train_set.batch(&[probe]);
        let training_error = mse_loss(&net.forward_stack(&x, false)?, &t)?.0;
        let validation_error = evaluate(net, val_set, batch)?;
        let record = EpochRecord {
            epoch: state.schedule.epoch(),
            training_error,
            validation_error,
            lr,
        };
        info!(
            "epoch {:3}  train {:.4e}  val {:.4e}  lr {:.3e}",
            record.epoch, training_error, validation_error, lr
        );
        on_epoch(&record);
        state.curves.push(record);
        state.schedule.next_epoch();
    }
    Ok(state)
}

pub fn write_curves<W: Write>(mut w: W, curves: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,training_error,validation_error,lr")?;
    for r in curves {
        writeln!(w, "{},{},{},{}", r.epoch, r.training_error, r.validation_error, r.lr)?;
    }
    Ok(())
}
