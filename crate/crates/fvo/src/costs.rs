//! Asset cost functions and the partial derivatives consumed by the
//! feedforward terms.
//!
//! The case-study family is quadratic in the deviation from baseline,
//! f(x) = a x² + b x, which is frequency-independent. An optional bilinear
//! coupling term c·x·Δω₀ exercises the frequency-varying slots of the
//! derivative bundle; controllers only ever see [`CostDerivatives`], so other
//! families can be added without touching them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Quadratic deviation cost a x² + b x (+ c x Δω₀).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadraticCost {
    /// Curvature coefficient, cost per MW²; must be positive (strong
    /// convexity).
    pub a: f64,
    /// Linear coefficient, cost per MW.
    #[serde(default)]
    pub b: f64,
    /// Optional frequency coupling, cost per (MW·Hz).
    #[serde(default)]
    pub c: f64,
}

/// Partial derivatives of a cost function at a point, everything the driving
/// terms need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostDerivatives {
    /// ∂f/∂x, cost per MW.
    pub f_x: f64,
    /// ∂²f/∂x², cost per MW²; positive.
    pub f_xx: f64,
    /// ∂²f/∂x∂Δω₀, cost per (MW·Hz).
    pub f_xw: f64,
    /// ∂³f/∂x∂Δω₀², cost per (MW·Hz²).
    pub f_xww: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("curvature must be positive for strong convexity, got a = {0}")]
    NonConvex(f64),
    #[error("second derivative must be positive, got f_xx = {0}")]
    NonPositiveCurvature(f64),
}

impl QuadraticCost {
    pub fn new(a: f64, b: f64) -> Result<Self, CostError> {
        Self::with_coupling(a, b, 0.0)
    }

    pub fn with_coupling(a: f64, b: f64, c: f64) -> Result<Self, CostError> {
        if a <= 0.0 {
            return Err(CostError::NonConvex(a));
        }
        Ok(Self { a, b, c })
    }

    pub fn validate(&self) -> Result<(), CostError> {
        if self.a <= 0.0 {
            return Err(CostError::NonConvex(self.a));
        }
        Ok(())
    }

    /// Cost at a deviation x from baseline, at a frequency deviation.
    pub fn eval(&self, x_mw: f64, deviation_hz: f64) -> f64 {
        (self.a * x_mw + self.b + self.c * deviation_hz) * x_mw
    }

    /// All derivative slots at (x, Δω₀).
    pub fn derivatives(&self, x_mw: f64, deviation_hz: f64) -> CostDerivatives {
        CostDerivatives {
            f_x: 2.0 * self.a * x_mw + self.b + self.c * deviation_hz,
            f_xx: 2.0 * self.a,
            f_xw: self.c,
            f_xww: 0.0,
        }
    }
}

/// The switched curvature weight σ/f_xx gating each asset's share of the
/// trajectory motion; zero when the asset sits on its box boundary.
pub fn rho(derivs: &CostDerivatives, sigma: u8) -> Result<f64, CostError> {
    if derivs.f_xx <= 0.0 {
        return Err(CostError::NonPositiveCurvature(derivs.f_xx));
    }
    Ok(if sigma == 0 { 0.0 } else { 1.0 / derivs.f_xx })
}
