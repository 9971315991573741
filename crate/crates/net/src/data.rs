//! Speckle preprocessing and paired datasets.

use ndarray::{s, Array2, Array3, Axis};

use crate::error::{NetError, Result};

/// Zero mean, unit variance per speckle image. A flat image maps to zeros.
pub fn normalize_speckle(b: &[f64]) -> Vec<f64> {
    if b.is_empty() {
        return Vec::new();
    }
    let n = b.len() as f64;
    let mean = b.iter().sum::<f64>() / n;
    let var = b.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return vec![0.0; b.len()];
    }
    let inv = 1.0 / var.sqrt();
    b.iter().map(|v| (v - mean) * inv).collect()
}

/// Raster-reshapes an intensity vector into the largest square it fills;
/// trailing entries beyond `side^2` are cropped.
pub fn speckle_grid(b: &[f64]) -> Result<Array2<f64>> {
    let side = (b.len() as f64).sqrt().floor() as usize;
    let side = if (side + 1) * (side + 1) <= b.len() { side + 1 } else { side };
    if side == 0 {
        return Err(NetError::Shape("empty speckle".into()));
    }
    Ok(Array2::from_shape_vec((side, side), b[..side * side].to_vec()).expect("square crop"))
}

/// Speckle inputs `(N, in, in)` paired with object targets `(N, out, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array3<f64>,
    pub targets: Array3<f64>,
}

impl Dataset {
    pub fn new(inputs: Array3<f64>, targets: Array3<f64>) -> Result<Self> {
        if inputs.shape()[0] != targets.shape()[0] {
            return Err(NetError::Shape(format!(
                "{} inputs but {} targets",
                inputs.shape()[0],
                targets.shape()[0]
            )));
        }
        Ok(Self { inputs, targets })
    }

    /// Builds a set from raw intensity vectors and flattened target images.
    pub fn from_pairs(speckles: &[Vec<f64>], images: &[Vec<f64>], output_side: usize) -> Result<Self> {
        if speckles.len() != images.len() {
            return Err(NetError::Shape("speckle and image counts differ".into()));
        }
        let grids = speckles
            .iter()
            .map(|b| speckle_grid(&normalize_speckle(b)))
            .collect::<Result<Vec<_>>>()?;
        let side = grids.first().map_or(0, |g| g.nrows());
        if grids.iter().any(|g| g.nrows() != side) {
            return Err(NetError::Shape("speckles have different lengths".into()));
        }
        let mut inputs = Array3::zeros((grids.len(), side, side));
        for (i, g) in grids.iter().enumerate() {
            inputs.index_axis_mut(Axis(0), i).assign(g);
        }
        let mut targets = Array3::zeros((images.len(), output_side, output_side));
        for (i, img) in images.iter().enumerate() {
            if img.len() != output_side * output_side {
                return Err(NetError::Shape(format!(
                    "image {i} has {} pixels, expected {}",
                    img.len(),
                    output_side * output_side
                )));
            }
            targets
                .index_axis_mut(Axis(0), i)
                .assign(&Array2::from_shape_vec((output_side, output_side), img.clone()).expect("checked"));
        }
        Self::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_side(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn output_side(&self) -> usize {
        self.targets.shape()[1]
    }

    /// Gathers the listed samples into a batch.
    pub fn batch(&self, indices: &[usize]) -> (Array3<f64>, Array3<f64>) {
        (
            self.inputs.select(Axis(0), indices),
            self.targets.select(Axis(0), indices),
        )
    }

    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            inputs: self.inputs.slice(s![..n, .., ..]).to_owned(),
            targets: self.targets.slice(s![..n, .., ..]).to_owned(),
        }
    }
}
