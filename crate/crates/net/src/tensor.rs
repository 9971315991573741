//! Batch layout helpers.
//!
//! Layers pass activations as `(channels, batch, height, width)` arrays.
//! Keeping channels outermost means a convolution's GEMM output is already
//! in place and per-channel statistics read contiguous memory. The public
//! network API speaks `(batch, height, width)` single-channel stacks.

use ndarray::{Array2, Array3, Array4, Axis};

use crate::error::{NetError, Result};

/// `(C, B, H, W)` activation batch.
pub type Batch = Array4<f64>;

pub fn shape4(x: &Batch) -> (usize, usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2], s[3])
}

/// `(B, H, W)` single-channel stack to a `(1, B, H, W)` batch.
pub fn from_stack(x: &Array3<f64>) -> Batch {
    x.as_standard_layout().to_owned().insert_axis(Axis(0))
}

/// Inverse of [`from_stack`].
pub fn to_stack(x: Batch) -> Result<Array3<f64>> {
    if x.shape()[0] != 1 {
        return Err(NetError::Shape(format!("expected one channel, got {}", x.shape()[0])));
    }
    Ok(x.index_axis_move(Axis(0), 0))
}

/// Per-sample feature rows `(B, C*H*W)`.
pub fn to_rows(x: &Batch) -> Array2<f64> {
    let (c, b, h, w) = shape4(x);
    x.view()
        .permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b, c * h * w))
        .expect("standard layout")
}

/// Inverse of [`to_rows`] for the given per-sample `(C, H, W)`.
pub fn from_rows(rows: Array2<f64>, chw: [usize; 3]) -> Result<Batch> {
    let [c, h, w] = chw;
    let b = rows.nrows();
    if rows.ncols() != c * h * w {
        return Err(NetError::Shape(format!(
            "{} features cannot form ({c}, {h}, {w})",
            rows.ncols()
        )));
    }
    let bchw = rows
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b, c, h, w))
        .expect("standard layout");
    Ok(bchw.permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_roundtrip() {
        let x = Batch::from_shape_fn((3, 2, 2, 2), |(c, b, h, w)| (c * 100 + b * 10 + h * 2 + w) as f64);
        let rows = to_rows(&x);
        // sample 1, channel 2, pixel (1, 0)
        assert_eq!(rows[[1, 2 * 4 + 2]], 212.0);
        assert_eq!(from_rows(rows, [3, 2, 2]).unwrap(), x);
    }
}
