use ndarray::{Array, Dimension};

use crate::error::{NetError, Result};

/// Mean squared error and its gradient `2 (pred - target) / count`.
pub fn mse_loss<D: Dimension>(pred: &Array<f64, D>, target: &Array<f64, D>) -> Result<(f64, Array<f64, D>)> {
    if pred.shape() != target.shape() {
        return Err(NetError::Shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let count = pred.len().max(1) as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    Ok((loss, diff * (2.0 / count)))
}
