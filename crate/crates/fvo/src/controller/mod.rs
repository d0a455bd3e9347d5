//! Tracking controllers for the moving optimal dispatch.
//!
//! Two projected algorithms drive the aggregate onto the optimal trajectory
//! within a fixed time: one for negligible asset dynamics (the optimization
//! signal sets the delivered power rate directly) and one that compensates a
//! first-order asset response. Both combine a fixed-time feedback driving
//! term, built from the stationarity error of the projected optimality
//! condition, with feedforward driving terms that ride the trajectory once
//! reached. A primal-dual projected-gradient benchmark without either
//! ingredient is included for comparison runs.

pub(crate) mod driving;
mod step;

pub use driving::{feedforward_1, feedforward_2, FeedforwardTerms, FeedforwardTerms2};
pub use step::{AlgorithmKind, Aru, AruStepOutput, PlantModel, StepDiagnostics};
pub(crate) use step::{apply_plant_command, tot1_command_delta, tot2_command_delta};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::QuadraticCost;

/// Closed interval of admissible deviations from baseline, MW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxConstraint {
    pub lo: f64,
    pub hi: f64,
}

/// Tolerance for classifying a point as sitting on a box edge, MW. Floating
/// point projection lands exactly on edges only up to rounding.
pub const BOUNDARY_TOL_MW: f64 = 1e-9;

impl BoxConstraint {
    pub fn new(lo: f64, hi: f64) -> Result<Self, ControllerError> {
        if lo > hi || !lo.is_finite() || !hi.is_finite() {
            return Err(ControllerError::EmptyBox { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn project(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Strictly inside, beyond the boundary tolerance band.
    pub fn interior(&self, x: f64) -> bool {
        x - self.lo > BOUNDARY_TOL_MW && self.hi - x > BOUNDARY_TOL_MW
    }

    /// Signed violation of the box; zero inside.
    pub fn violation(&self, x: f64) -> f64 {
        (self.lo - x).max(x - self.hi).max(0.0)
    }
}

/// Projection onto a box.
pub fn project_box(x: f64, bounds: &BoxConstraint) -> f64 {
    bounds.project(x)
}

/// Stationarity error e = x - P(x - F): zero exactly where the projected
/// optimality condition holds.
pub fn stationarity_error(x: f64, gradient_step: f64, bounds: &BoxConstraint) -> f64 {
    x - bounds.project(x - gradient_step)
}

/// Boundary switching signal: 1 while the projected point x - e sits strictly
/// inside the box, 0 on (or within tolerance of) an edge.
pub fn switching_signal(x_minus_e: f64, bounds: &BoxConstraint) -> u8 {
    if bounds.interior(x_minus_e) {
        1
    } else {
        0
    }
}

/// Fixed-time control gains and step sizes shared by both algorithms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControllerGains {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    /// Even positive integer, with p < q.
    pub p: u32,
    /// Odd positive integer.
    pub q: u32,
    pub kappa_x: f64,
    pub kappa_lambda: f64,
    /// Width of the band around zero inside which the stationarity error
    /// counts as converged: the feedback term disengages and the feedforward
    /// term engages. An exact-zero handoff is unattainable in floating point.
    pub sig_tolerance_mw: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            gamma1: 3.0,
            gamma2: 3.0,
            gamma3: 200.0,
            p: 2,
            q: 3,
            kappa_x: 1.0,
            kappa_lambda: 20.0,
            sig_tolerance_mw: 1e-6,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("gain {name} must be positive, got {value}")]
    NonPositiveGain { name: &'static str, value: f64 },
    #[error("p must be even and q odd with p < q (fractional error powers stay real and sign-preserving), got p = {p}, q = {q}")]
    BadExponents { p: u32, q: u32 },
    #[error("fixed-time bound {t_max:.3} s exceeds the service delivery deadline {deadline:.3} s; raise gamma1*gamma2 or kappa_x")]
    DeadlineViolated { t_max: f64, deadline: f64 },
    #[error("empty or non-finite box [{lo}, {hi}]")]
    EmptyBox { lo: f64, hi: f64 },
    #[error("asset {index}: baseline {baseline} MW outside [{p_min}, {p_max}] MW")]
    InfeasibleBaseline {
        index: usize,
        baseline: f64,
        p_min: f64,
        p_max: f64,
    },
    #[error("asset {index}: time constant must be positive for first-order dynamics, got {tau} s")]
    BadTimeConstant { index: usize, tau: f64 },
    #[error("non-finite controller state at step {step}")]
    NonFinite { step: u64 },
}

impl ControllerGains {
    pub fn validate(&self) -> Result<(), ControllerError> {
        for (name, value) in [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma3", self.gamma3),
            ("kappa_x", self.kappa_x),
            ("kappa_lambda", self.kappa_lambda),
        ] {
            if !(value > 0.0) {
                return Err(ControllerError::NonPositiveGain { name, value });
            }
        }
        if self.p == 0 || self.q == 0 || self.p % 2 != 0 || self.q % 2 != 1 || self.p >= self.q {
            return Err(ControllerError::BadExponents {
                p: self.p,
                q: self.q,
            });
        }
        if !(self.sig_tolerance_mw >= 0.0) {
            return Err(ControllerError::NonPositiveGain {
                name: "sig_tolerance_mw",
                value: self.sig_tolerance_mw,
            });
        }
        Ok(())
    }

    /// Gain rule: the fixed-time bound must not exceed the service deadline.
    pub fn check_deadline(&self, max_delivery_time_s: f64) -> Result<(), ControllerError> {
        let bound = t_max(self);
        if bound > max_delivery_time_s {
            return Err(ControllerError::DeadlineViolated {
                t_max: bound,
                deadline: max_delivery_time_s,
            });
        }
        Ok(())
    }

    /// Exponent of the slow fractional power, 1 - p/q.
    pub fn exp_lo(&self) -> f64 {
        1.0 - self.p as f64 / self.q as f64
    }

    /// Exponent of the fast fractional power, 1 + p/q.
    pub fn exp_hi(&self) -> f64 {
        1.0 + self.p as f64 / self.q as f64
    }
}

/// Upper bound on the convergence time, independent of initial conditions:
/// T_max = pi q / (2 kappa_x p sqrt(gamma1 gamma2)).
pub fn t_max(gains: &ControllerGains) -> f64 {
    std::f64::consts::PI * gains.q as f64
        / (2.0 * gains.kappa_x * gains.p as f64 * (gains.gamma1 * gains.gamma2).sqrt())
}

/// Static parameters of one asset under control.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AssetParams {
    pub cost: QuadraticCost,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub baseline_mw: f64,
    /// First-order response time constant; ignored by the direct plant.
    pub tau_s: f64,
}

impl AssetParams {
    pub fn validate(&self, index: usize) -> Result<(), ControllerError> {
        if self.baseline_mw < self.p_min_mw || self.baseline_mw > self.p_max_mw {
            return Err(ControllerError::InfeasibleBaseline {
                index,
                baseline: self.baseline_mw,
                p_min: self.p_min_mw,
                p_max: self.p_max_mw,
            });
        }
        Ok(())
    }

    /// Admissible deviations from baseline: [p_min - P(0), p_max - P(0)].
    pub fn deviation_box(&self) -> Result<BoxConstraint, ControllerError> {
        BoxConstraint::new(
            self.p_min_mw - self.baseline_mw,
            self.p_max_mw - self.baseline_mw,
        )
    }
}

/// Runtime state of one asset.
#[derive(Debug, Clone, Copy, Default)]
pub struct AssetState {
    /// Delivered quantity (deviation from baseline), MW.
    pub x: f64,
    /// Control input of the first-order plant, MW; mirrors x on the direct
    /// plant.
    pub r: f64,
    /// Boundary switching signal.
    pub sigma: u8,
    /// Stationarity error, MW.
    pub e: f64,
    /// Applied optimization signal, MW/s.
    pub u: f64,
}

/// Multiplier and the feedforward values applied at the last step.
#[derive(Debug, Clone, Copy, Default)]
pub struct MultiplierState {
    pub lambda: f64,
    pub beta: f64,
    /// First-order trajectory feedforward of the second algorithm.
    pub beta_prime: f64,
    /// Second-order trajectory feedforward of the second algorithm.
    pub beta_second: f64,
}

/// Sign with the converged-band convention: values within the band count as
/// zero so the feedback and feedforward terms hand off cleanly.
pub(crate) fn sign_banded(e: f64, band: f64) -> f64 {
    if e.abs() <= band {
        0.0
    } else if e > 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// |e|^exponent with an underflow guard for the sublinear power.
pub(crate) fn frac_pow(e_abs: f64, exponent: f64) -> f64 {
    if e_abs < 1e-30 {
        0.0
    } else {
        e_abs.powf(exponent)
    }
}
