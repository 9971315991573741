//! Synthetic object images: i.i.d. binary pixels or glyphs from a 5x7 font.

use rand::Rng;
use serde::{Deserialize, Serialize};
use speckle_core::ImageGrid;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    /// Every pixel an independent fair coin.
    Binary,
    /// A random glyph of [`GLYPHS`] at a random offset.
    Glyphs,
}

impl std::str::FromStr for ImageKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "binary" => Ok(ImageKind::Binary),
            "glyphs" => Ok(ImageKind::Glyphs),
            other => Err(format!("unknown image kind `{other}` (binary or glyphs)")),
        }
    }
}

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;

/// Digits and a few capitals, one row per string, `#` marks an on pixel.
pub const GLYPHS: [(char, [&str; GLYPH_H]); 16] = [
    ('0', [" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "]),
    ('1', ["  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "]),
    ('2', [" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"]),
    ('3', ["#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "]),
    ('4', ["   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "]),
    ('5', ["#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "]),
    ('6', ["  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "]),
    ('7', ["#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "]),
    ('8', [" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "]),
    ('9', [" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "]),
    ('A', [" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"]),
    ('C', [" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "]),
    ('E', ["#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"]),
    ('H', ["#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"]),
    ('L', ["#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"]),
    ('T', ["#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "]),
];

/// Renders glyph `index` into a `side x side` image with its top-left corner at `(row, col)`.
pub fn render_glyph(index: usize, side: usize, row: usize, col: usize) -> Result<ImageGrid> {
    if side < GLYPH_W.max(GLYPH_H) {
        return Err(HarnessError::Invalid(format!(
            "glyph images need side >= {}, got {side}",
            GLYPH_H
        )));
    }
    if row + GLYPH_H > side || col + GLYPH_W > side {
        return Err(HarnessError::Invalid(format!("glyph at ({row}, {col}) leaves a {side}x{side} image")));
    }
    let (_, rows) = GLYPHS[index % GLYPHS.len()];
    let mut img = ImageGrid::zeros(side, side);
    for (r, line) in rows.iter().enumerate() {
        for (c, ch) in line.chars().enumerate() {
            if ch == '#' {
                img.set(row + r, col + c, 1.0);
            }
        }
    }
    Ok(img)
}

pub fn random_image<R: Rng + ?Sized>(kind: ImageKind, side: usize, rng: &mut R) -> Result<ImageGrid> {
    match kind {
        ImageKind::Binary => {
            let pixels = (0..side * side).map(|_| rng.random_range(0..2u8) as f64).collect();
            Ok(ImageGrid::new(side, side, pixels)?)
        }
        ImageKind::Glyphs => {
            if side < GLYPH_H {
                return Err(HarnessError::Invalid(format!("glyph images need side >= {GLYPH_H}, got {side}")));
            }
            let index = rng.random_range(0..GLYPHS.len());
            let row = rng.random_range(0..=side - GLYPH_H);
            let col = rng.random_range(0..=side - GLYPH_W);
            render_glyph(index, side, row, col)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use speckle_core::rng;

    #[test]
    fn glyph_table_is_well_formed() {
        for (ch, rows) in GLYPHS {
            assert!(rows.iter().all(|r| r.len() == GLYPH_W), "glyph {ch}");
            assert!(rows.iter().any(|r| r.contains('#')), "glyph {ch}");
        }
        let img = render_glyph(1, 8, 1, 3).unwrap();
        assert_eq!(img.get(1, 5), 1.0);
        assert_eq!(img.get(0, 5), 0.0);
        assert!(render_glyph(0, 6, 0, 0).is_err());
        assert!(render_glyph(0, 8, 2, 0).is_err());
    }

    #[test]
    fn random_images_are_binary() {
        let mut rng = rng::seeded(0);
        for kind in [ImageKind::Binary, ImageKind::Glyphs] {
            for _ in 0..20 {
                let img = random_image(kind, 8, &mut rng).unwrap();
                assert!(img.is_binary());
                assert_eq!(img.len(), 64);
            }
        }
        let ones: f64 = (0..200)
            .map(|_| random_image(ImageKind::Binary, 8, &mut rng).unwrap().pixels().iter().sum::<f64>())
            .sum();
        let frac = ones / (200.0 * 64.0);
        assert!((frac - 0.5).abs() < 0.02);
    }
}
