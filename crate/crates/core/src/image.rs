//! Row-major 2D real images.
//!
//! Every module vectorizes images in row-major (raster) order: pixel `(r, c)`
//! sits at index `r * width + c`.

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CoreError::Dimension(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(CoreError::Dimension(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    /// Square image from a raster vector whose length is a perfect square.
    pub fn square(pixels: Vec<f64>) -> Result<Self> {
        let side = perfect_square_side(pixels.len()).ok_or_else(|| {
            CoreError::Dimension(format!("{} pixels is not a perfect square", pixels.len()))
        })?;
        Self::new(side, side, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    /// True when every pixel is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// Fraction of pixels equal between two same-shaped images.
    pub fn pixel_accuracy(&self, other: &ImageGrid) -> Result<f64> {
        if self.height != other.height || self.width != other.width {
            return Err(CoreError::Dimension(format!(
                "cannot compare {}x{} with {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let hits = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .filter(|(a, b)| a == b)
            .count();
        Ok(hits as f64 / self.pixels.len() as f64)
    }
}

pub fn perfect_square_side(len: usize) -> Option<usize> {
    let side = (len as f64).sqrt().round() as usize;
    (side * side == len).then_some(side)
}
