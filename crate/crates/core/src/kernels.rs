//! Radial shape functions used as Shepard weights.
//!
//! Both profiles are written in terms of the scaled radius `sigma * r`, so
//! evaluating with shape parameter `sigma` at `r` equals evaluating the
//! `sigma = 1` profile at `sigma * r`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian weights below this value are dropped during sparse assembly.
pub const GAUSSIAN_CUTOFF: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    /// `max(0, (1 - t)^4 (4t + 1))`, compactly supported on `t < 1`.
    #[default]
    #[serde(alias = "wendland")]
    Wendland42,
    /// `exp(-t^2)`.
    Gaussian,
}

/// A radial profile with its shape parameter (an inverse length).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeFunction {
    kind: ShapeKind,
    sigma: f64,
}

impl ShapeFunction {
    pub fn new(kind: ShapeKind, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!(
                "shape parameter must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self { kind, sigma })
    }

    pub fn wendland(sigma: f64) -> Result<Self> {
        Self::new(ShapeKind::Wendland42, sigma)
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(ShapeKind::Gaussian, sigma)
    }

    pub fn kind(&self) -> ShapeKind {
        self.kind
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Evaluates the profile at distance `r`.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::Domain(format!("radius must be nonnegative, got {r}")));
        }
        Ok(self.eval_unchecked(r))
    }

    /// Same as [`eval`](Self::eval) without the sign check; `r` must be `>= 0`.
    #[inline]
    pub fn eval_unchecked(&self, r: f64) -> f64 {
        let t = self.sigma * r;
        match self.kind {
            ShapeKind::Wendland42 => {
                if t >= 1.0 {
                    0.0
                } else {
                    let s = 1.0 - t;
                    let s2 = s * s;
                    s2 * s2 * (4.0 * t + 1.0)
                }
            }
            ShapeKind::Gaussian => (-t * t).exp(),
        }
    }

    /// Radius beyond which the profile vanishes; infinite for the Gaussian.
    pub fn support_radius(&self) -> f64 {
        match self.kind {
            ShapeKind::Wendland42 => 1.0 / self.sigma,
            ShapeKind::Gaussian => f64::INFINITY,
        }
    }

    /// Support radius of the `sigma = 1` profile.
    pub fn support_radius_normalized(&self) -> f64 {
        self.support_radius() * self.sigma
    }

    /// Radius used for neighbor search during sparse assembly. Equals the
    /// support radius for compact kernels; for the Gaussian it is the radius
    /// where the weight drops to [`GAUSSIAN_CUTOFF`].
    pub fn assembly_radius(&self) -> f64 {
        match self.kind {
            ShapeKind::Wendland42 => self.support_radius(),
            ShapeKind::Gaussian => (-GAUSSIAN_CUTOFF.ln()).sqrt() / self.sigma,
        }
    }

    /// Weight used during sparse assembly (Gaussian tail truncated to zero).
    #[inline]
    pub(crate) fn assembly_weight(&self, r: f64) -> f64 {
        let w = self.eval_unchecked(r);
        if self.kind == ShapeKind::Gaussian && w < GAUSSIAN_CUTOFF {
            0.0
        } else {
            w
        }
    }
}

/// Stationary shape parameter `c_sigma / h`.
pub fn sigma_from_fill(c_sigma: f64, h: f64) -> Result<f64> {
    if !(c_sigma > 0.0) || !(h > 0.0) {
        return Err(Error::Domain(format!(
            "c_sigma and fill distance must be positive, got {c_sigma} and {h}"
        )));
    }
    Ok(c_sigma / h)
}

/// Volume of the unit ball in `dim` dimensions.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        0 => 1.0,
        1 => 2.0,
        d => unit_ball_volume(d - 2) * 2.0 * std::f64::consts::PI / d as f64,
    }
}

/// Shape parameter whose support ball around a node of a regular grid with
/// the given per-axis spacing holds roughly `count` other nodes.
pub fn sigma_from_overlap(count: f64, spacing: &[f64]) -> Result<f64> {
    if !(count > 0.0) || spacing.is_empty() || spacing.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Domain(
            "overlap count and grid spacings must be positive".into(),
        ));
    }
    let dim = spacing.len();
    let cell: f64 = spacing.iter().product();
    let radius = (count * cell / unit_ball_volume(dim)).powf(1.0 / dim as f64);
    Ok(1.0 / radius)
}
