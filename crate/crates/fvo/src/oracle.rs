//! Exact per-instant solver for the aggregate dispatch problem, used as the
//! correctness oracle for every optimality and tracking assertion.
//!
//! At a frozen instant the problem is a box-constrained, strongly convex
//! program with a single equality constraint:
//!
//! ```text
//!     min  Σ aᵢxᵢ² + (bᵢ + cᵢΔω₀)xᵢ
//!     s.t. Σ xᵢ = required,   xᵢ ∈ [loᵢ, hiᵢ]
//! ```
//!
//! The aggregate response g(λ) = Σ clamp(-(bᵢ + cᵢΔω₀ + λ)/(2aᵢ)) is
//! monotone non-increasing in the multiplier, so a bisection brackets λ*,
//! after which the interior active set gives λ* in closed form. The solver
//! deliberately shares no code with the controllers it checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::DeliveryCurve;

/// One asset of an instant problem: quadratic coefficients and its box in
/// deviation coordinates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InstantAsset {
    pub a: f64,
    pub b: f64,
    /// Frequency-coupling coefficient; the effective linear cost is
    /// b + c·Δω₀.
    #[serde(default)]
    pub c: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Frozen-instant problem data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstantProblem {
    pub assets: Vec<InstantAsset>,
    #[serde(default)]
    pub deviation_hz: f64,
    pub required_mw: f64,
}

/// Where each asset's optimizer sits relative to its box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveSet {
    Interior,
    AtLo,
    AtHi,
}

/// Solution of an instant problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstantSolution {
    pub x: Vec<f64>,
    pub lambda: f64,
    pub active_set: Vec<ActiveSet>,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("asset {index}: curvature must be positive, got a = {a}")]
    NonConvex { index: usize, a: f64 },
    #[error("asset {index}: empty box [{lo}, {hi}]")]
    EmptyBox { index: usize, lo: f64, hi: f64 },
    #[error(
        "required quantity {required} MW outside deliverable range [{lo_sum}, {hi_sum}] MW"
    )]
    Infeasible {
        required: f64,
        lo_sum: f64,
        hi_sum: f64,
    },
    #[error("empty problem")]
    Empty,
}

/// Classification tolerance for calling a coordinate "on" a box edge, MW.
const BOUNDARY_TOL_MW: f64 = 1e-9;

impl InstantProblem {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.assets.is_empty() {
            return Err(OracleError::Empty);
        }
        let mut lo_sum = 0.0;
        let mut hi_sum = 0.0;
        for (index, asset) in self.assets.iter().enumerate() {
            if asset.a <= 0.0 {
                return Err(OracleError::NonConvex { index, a: asset.a });
            }
            if asset.lo > asset.hi {
                return Err(OracleError::EmptyBox {
                    index,
                    lo: asset.lo,
                    hi: asset.hi,
                });
            }
            lo_sum += asset.lo;
            hi_sum += asset.hi;
        }
        if self.required_mw < lo_sum || self.required_mw > hi_sum {
            return Err(OracleError::Infeasible {
                required: self.required_mw,
                lo_sum,
                hi_sum,
            });
        }
        Ok(())
    }

    /// Effective linear coefficient of asset i at this instant's deviation.
    fn b_eff(&self, i: usize) -> f64 {
        self.assets[i].b + self.assets[i].c * self.deviation_hz
    }

    /// Aggregate response to a trial multiplier.
    fn aggregate(&self, lambda: f64) -> f64 {
        self.assets
            .iter()
            .enumerate()
            .map(|(i, asset)| {
                (-(self.b_eff(i) + lambda) / (2.0 * asset.a)).clamp(asset.lo, asset.hi)
            })
            .sum()
    }
}

/// Exact solution via multiplier bisection plus closed-form refinement on the
/// interior active set.
pub fn solve_instant(prob: &InstantProblem) -> Result<InstantSolution, OracleError> {
    prob.validate()?;

    // Bracket: at lambda_lo every asset clamps at hi, at lambda_hi at lo.
    let mut lambda_lo = f64::INFINITY;
    let mut lambda_hi = f64::NEG_INFINITY;
    for (i, asset) in prob.assets.iter().enumerate() {
        lambda_lo = lambda_lo.min(-(2.0 * asset.a * asset.hi + prob.b_eff(i)) - 1.0);
        lambda_hi = lambda_hi.max(-(2.0 * asset.a * asset.lo + prob.b_eff(i)) + 1.0);
    }

    let tol = 1e-10 * prob.required_mw.abs().max(1.0);
    let mut lambda = 0.5 * (lambda_lo + lambda_hi);
    for _ in 0..200 {
        lambda = 0.5 * (lambda_lo + lambda_hi);
        let g = prob.aggregate(lambda);
        if (g - prob.required_mw).abs() <= tol && lambda_hi - lambda_lo <= 1e-12 * lambda.abs().max(1.0) {
            break;
        }
        if g > prob.required_mw {
            // Too much delivery: raise the multiplier.
            lambda_lo = lambda;
        } else {
            lambda_hi = lambda;
        }
    }

    // Closed-form refinement: with the interior set fixed, lambda solves the
    // equality constraint exactly. Re-classify until the set is stable.
    for _ in 0..prob.assets.len() + 1 {
        let mut inv_sum = 0.0;
        let mut interior_target = prob.required_mw;
        let mut unconstrained_sum = 0.0;
        for (i, asset) in prob.assets.iter().enumerate() {
            let u = -(prob.b_eff(i) + lambda) / (2.0 * asset.a);
            if u >= asset.hi {
                interior_target -= asset.hi;
            } else if u <= asset.lo {
                interior_target -= asset.lo;
            } else {
                inv_sum += 1.0 / (2.0 * asset.a);
                unconstrained_sum += -prob.b_eff(i) / (2.0 * asset.a);
            }
        }
        if inv_sum == 0.0 {
            // Every coordinate clamped: lambda is only determined up to the
            // flat interval of g; report its midpoint.
            let mut hi_end = f64::INFINITY;
            let mut lo_end = f64::NEG_INFINITY;
            for (i, asset) in prob.assets.iter().enumerate() {
                let u = -(prob.b_eff(i) + lambda) / (2.0 * asset.a);
                if u >= asset.hi {
                    hi_end = hi_end.min(-(2.0 * asset.a * asset.hi + prob.b_eff(i)));
                } else {
                    lo_end = lo_end.max(-(2.0 * asset.a * asset.lo + prob.b_eff(i)));
                }
            }
            if lo_end.is_finite() && hi_end.is_finite() && lo_end <= hi_end {
                lambda = 0.5 * (lo_end + hi_end);
            }
            break;
        }
        let refined = (unconstrained_sum - interior_target) / inv_sum;
        if refined == lambda {
            break;
        }
        lambda = refined;
    }

    let mut x = Vec::with_capacity(prob.assets.len());
    let mut active_set = Vec::with_capacity(prob.assets.len());
    for (i, asset) in prob.assets.iter().enumerate() {
        let xi = (-(prob.b_eff(i) + lambda) / (2.0 * asset.a)).clamp(asset.lo, asset.hi);
        active_set.push(if xi - asset.lo <= BOUNDARY_TOL_MW {
            ActiveSet::AtLo
        } else if asset.hi - xi <= BOUNDARY_TOL_MW {
            ActiveSet::AtHi
        } else {
            ActiveSet::Interior
        });
        x.push(xi);
    }

    Ok(InstantSolution {
        x,
        lambda,
        active_set,
    })
}

/// KKT residuals of a candidate solution: (projected stationarity, primal
/// feasibility), both in MW.
pub fn kkt_residual(prob: &InstantProblem, sol: &InstantSolution) -> (f64, f64) {
    let mut stationarity: f64 = 0.0;
    let mut sum = 0.0;
    for (i, asset) in prob.assets.iter().enumerate() {
        let xi = sol.x[i];
        sum += xi;
        let grad = 2.0 * asset.a * xi + prob.b_eff(i) + sol.lambda;
        let proj = (xi - grad).clamp(asset.lo, asset.hi);
        stationarity = stationarity.max((xi - proj).abs());
    }
    (stationarity, (sum - prob.required_mw).abs())
}

/// Time derivatives of the optimal trajectory at a solved instant.
///
/// `curve_slope` is the delivery-curve derivative at the instant's deviation
/// (entered-segment side), `rate_hzps` the deviation rate. Boundary
/// coordinates are frozen; when every coordinate is on its boundary both
/// rates vanish (pseudoinverse convention).
pub fn trajectory_rates(
    prob: &InstantProblem,
    sol: &InstantSolution,
    rate_hzps: f64,
    curve_slope: f64,
    c_agg_mw: f64,
) -> (Vec<f64>, f64) {
    let rho: Vec<f64> = prob
        .assets
        .iter()
        .zip(&sol.active_set)
        .map(|(asset, set)| match set {
            ActiveSet::Interior => 1.0 / (2.0 * asset.a),
            _ => 0.0,
        })
        .collect();
    let rho_sum: f64 = rho.iter().sum();
    let pinv = if rho_sum > 0.0 { 1.0 / rho_sum } else { 0.0 };
    let coupling_sum: f64 = rho
        .iter()
        .zip(&prob.assets)
        .map(|(r, asset)| r * asset.c * rate_hzps)
        .sum();
    let lambda_dot = -pinv * (coupling_sum + curve_slope * rate_hzps * c_agg_mw);
    let x_dot = rho
        .iter()
        .zip(&prob.assets)
        .map(|(r, asset)| -r * (asset.c * rate_hzps + lambda_dot))
        .collect();
    (x_dot, lambda_dot)
}

/// One sweep point of a trajectory-dynamics validation.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub deviation_hz: f64,
    pub rel_error: f64,
    pub excluded: bool,
}

/// Report of [`validate_theorem1`].
#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Report {
    pub points: Vec<SweepPoint>,
    pub max_rel_error: f64,
    pub compared: usize,
    pub excluded: usize,
}

/// Checks the analytic optimal-trajectory rates against central finite
/// differences of the exact solver across a deviation sweep.
///
/// Points where the active set changes within ±eps, or where the sweep
/// straddles a curve knot, are excluded from comparison (the trajectory is
/// only piecewise differentiable). The multiplier rate is additionally
/// skipped when every coordinate is clamped, where the multiplier itself is
/// set-valued.
#[allow(clippy::too_many_arguments)]
pub fn validate_theorem1(
    assets: &[InstantAsset],
    curve: &DeliveryCurve,
    c_agg_mw: f64,
    from_hz: f64,
    to_hz: f64,
    steps: usize,
    rate_hzps: f64,
    eps_hz: f64,
) -> Result<Theorem1Report, OracleError> {
    let mut points = Vec::with_capacity(steps);
    let mut max_rel_error: f64 = 0.0;
    let mut compared = 0;
    let mut excluded = 0;

    for k in 0..steps {
        let d = from_hz + (to_hz - from_hz) * k as f64 / (steps.max(2) - 1) as f64;
        let solve_at = |dev: f64| -> Result<InstantSolution, OracleError> {
            let prob = InstantProblem {
                assets: assets.to_vec(),
                deviation_hz: dev,
                required_mw: curve.evaluate(dev) * c_agg_mw,
            };
            solve_instant(&prob)
        };
        let (minus, center, plus) = (solve_at(d - eps_hz)?, solve_at(d)?, solve_at(d + eps_hz)?);

        let straddles_knot = curve
            .knots()
            .iter()
            .any(|knot| (knot.deviation_hz - d).abs() <= eps_hz);
        let set_changes = minus.active_set != center.active_set
            || plus.active_set != center.active_set;
        if straddles_knot || set_changes {
            excluded += 1;
            points.push(SweepPoint {
                deviation_hz: d,
                rel_error: f64::NAN,
                excluded: true,
            });
            continue;
        }

        let prob = InstantProblem {
            assets: assets.to_vec(),
            deviation_hz: d,
            required_mw: curve.evaluate(d) * c_agg_mw,
        };
        let slope = curve.derivative(d, Some(rate_hzps));
        let (x_dot, lambda_dot) = trajectory_rates(&prob, &center, rate_hzps, slope, c_agg_mw);

        let mut err: f64 = 0.0;
        for i in 0..assets.len() {
            let fd = (plus.x[i] - minus.x[i]) / (2.0 * eps_hz) * rate_hzps;
            err = err.max((fd - x_dot[i]).abs() / x_dot[i].abs().max(1.0));
        }
        let all_clamped = center
            .active_set
            .iter()
            .all(|s| *s != ActiveSet::Interior);
        if !all_clamped {
            let fd = (plus.lambda - minus.lambda) / (2.0 * eps_hz) * rate_hzps;
            err = err.max((fd - lambda_dot).abs() / lambda_dot.abs().max(1.0));
        }
        max_rel_error = max_rel_error.max(err);
        compared += 1;
        points.push(SweepPoint {
            deviation_hz: d,
            rel_error: err,
            excluded: false,
        });
    }

    Ok(Theorem1Report {
        points,
        max_rel_error,
        compared,
        excluded,
    })
}
