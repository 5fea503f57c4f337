use serde::{Deserialize, Serialize};

use super::pgm::{parse_pgm, GrayImage};
use crate::error::{Error, Result};

/// Affine map between pixel indices and state coordinates.
///
/// The corner of pixel `(col, row)` sits at
/// `origin + (col * pixel_size[0], row * pixel_size[1])`; a negative
/// `pixel_size[1]` gives the usual north-up orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin: [f64; 2],
    pub pixel_size: [f64; 2],
}

impl GeoTransform {
    /// Transform that stretches a `width x height` raster over the rectangle
    /// `[lower, upper]` with row 0 at the top.
    pub fn fit(lower: [f64; 2], upper: [f64; 2], width: usize, height: usize) -> Self {
        Self {
            origin: [lower[0], upper[1]],
            pixel_size: [
                (upper[0] - lower[0]) / width as f64,
                -(upper[1] - lower[1]) / height as f64,
            ],
        }
    }

    pub fn pixel_center(&self, col: usize, row: usize) -> [f64; 2] {
        [
            self.origin[0] + (col as f64 + 0.5) * self.pixel_size[0],
            self.origin[1] + (row as f64 + 0.5) * self.pixel_size[1],
        ]
    }
}

/// Boolean admissibility raster placed in the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleMask {
    width: usize,
    height: usize,
    admissible: Vec<bool>,
    geo: GeoTransform,
}

/// Luminance threshold (on a 0..=255 scale) separating admissible pixels.
pub const ADMISSIBLE_LUMINANCE: u32 = 128;

impl ObstacleMask {
    pub fn new(width: usize, height: usize, admissible: Vec<bool>, geo: GeoTransform) -> Result<Self> {
        if width == 0 || height == 0 || admissible.len() != width * height {
            return Err(Error::Domain(format!(
                "mask raster of {} cells does not match {width}x{height}",
                admissible.len()
            )));
        }
        if !admissible.iter().any(|&a| a) {
            return Err(Error::Domain("mask has no admissible cell".into()));
        }
        if geo.pixel_size.iter().any(|&s| s == 0.0 || !s.is_finite()) {
            return Err(Error::Domain("pixel size must be nonzero and finite".into()));
        }
        Ok(Self { width, height, admissible, geo })
    }

    /// Pixels with luminance at least 128 (after scaling to 8 bits) are
    /// admissible.
    pub fn from_image(img: &GrayImage, geo: GeoTransform) -> Result<Self> {
        let maxval = img.maxval as u32;
        let admissible = img
            .pixels
            .iter()
            .map(|&v| v as u32 * 255 >= ADMISSIBLE_LUMINANCE * maxval)
            .collect();
        Self::new(img.width, img.height, admissible, geo)
    }

    pub fn from_pgm_bytes(bytes: &[u8], geo: Option<GeoTransform>, fit: ([f64; 2], [f64; 2])) -> Result<Self> {
        let img = parse_pgm(bytes)?;
        let geo = geo.unwrap_or_else(|| GeoTransform::fit(fit.0, fit.1, img.width, img.height));
        Self::from_image(&img, geo)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn geo(&self) -> &GeoTransform {
        &self.geo
    }

    pub fn cell(&self, col: usize, row: usize) -> bool {
        self.admissible[row * self.width + col]
    }

    pub fn admissible_count(&self) -> usize {
        self.admissible.iter().filter(|&&a| a).count()
    }

    /// Pixel containing `x`; points on the far raster edge belong to the
    /// last pixel.
    pub fn pixel_of(&self, x: &[f64]) -> Option<(usize, usize)> {
        let locate = |v: f64, o: f64, s: f64, n: usize| -> Option<usize> {
            let t = (v - o) / s;
            if !(t >= 0.0 && t <= n as f64) {
                return None;
            }
            Some((t.floor() as usize).min(n - 1))
        };
        Some((
            locate(x[0], self.geo.origin[0], self.geo.pixel_size[0], self.width)?,
            locate(x[1], self.geo.origin[1], self.geo.pixel_size[1], self.height)?,
        ))
    }

    pub fn is_admissible(&self, x: &[f64]) -> bool {
        x.len() == 2 && self.pixel_of(x).is_some_and(|(c, r)| self.cell(c, r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule() {
        let img = parse_pgm(b"P2 2 2 255\n0 255\n255 0\n").unwrap();
        let geo = GeoTransform::fit([0.0, 0.0], [2.0, 2.0], 2, 2);
        let m = ObstacleMask::from_image(&img, geo).unwrap();
        assert!(!m.cell(0, 0) && m.cell(1, 0) && m.cell(0, 1) && !m.cell(1, 1));
        // Row 0 is the top of the rectangle.
        assert!(m.is_admissible(&[1.5, 1.5]));
        assert!(!m.is_admissible(&[0.5, 1.5]));
        assert!(m.is_admissible(&[0.5, 0.5]));
        assert!(!m.is_admissible(&[2.0, 0.0]));
        assert!(!m.is_admissible(&[2.1, 0.5]));
    }

    #[test]
    fn threshold_scales_with_maxval() {
        let img = parse_pgm(b"P2 3 1 15\n7 8 15\n").unwrap();
        let m = ObstacleMask::from_image(&img, GeoTransform::fit([0.0, 0.0], [3.0, 1.0], 3, 1)).unwrap();
        assert_eq!((m.cell(0, 0), m.cell(1, 0), m.cell(2, 0)), (false, true, true));
    }

    #[test]
    fn all_blocked_is_rejected() {
        let img = parse_pgm(b"P2 2 1 255\n0 10\n").unwrap();
        assert!(ObstacleMask::from_image(&img, GeoTransform::fit([0.0, 0.0], [1.0, 1.0], 2, 1)).is_err());
    }
}
