//! One-interval updates for the tracking algorithms and the benchmark.
//!
//! The controllers integrate forward on the shared millisecond grid. The
//! discontinuous feedback term is integrated in the Filippov sense: within a
//! step the correction is limited so the stationarity error cannot be driven
//! through zero, which is where the continuous-time solution would slide.
//! Without the limiter the error two-cycles around zero with amplitude
//! kappa_x*gamma3*dt and the converged-band handoff to the feedforward term
//! never engages. Post-step projection absorbs any feedforward displacement
//! that leaves the box.

use serde::{Deserialize, Serialize};

use super::{
    frac_pow, sign_banded, stationarity_error, switching_signal, AssetParams, AssetState,
    BoxConstraint, ControllerError, ControllerGains, MultiplierState,
};
use crate::controller::driving::{feedforward_1, feedforward_2, FeedforwardTerms, FeedforwardTerms2};
use crate::costs::rho;
use crate::curves::DeliveryCurve;
use crate::grid::FrequencyMeasurement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    /// Fixed-time tracking with the optimization signal driving the
    /// delivered power rate directly.
    Tot1,
    /// Fixed-time tracking through the first-order asset response, with
    /// second-order feedforward.
    Tot2,
    /// Primal-dual projected gradient, no fixed-time terms, no feedforward.
    Benchmark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantModel {
    /// Delivered power integrates the optimization signal directly.
    Direct,
    /// Delivered power follows the command through tau dx/dt = r - x.
    FirstOrder,
}

/// Running aggregates checked by the invariant tests.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub steps: u64,
    /// Largest box violation of any recorded x, MW.
    pub max_x_violation_mw: f64,
    /// Largest box violation of any recorded r, MW.
    pub max_r_violation_mw: f64,
    /// Largest pre-projection overshoot absorbed after a step, MW.
    pub max_absorbed_overshoot_mw: f64,
    /// Smallest observed (F - e) * e.
    pub min_sign_product_e: f64,
    /// Smallest observed (F - e) * sign(e).
    pub min_sign_product_sign: f64,
    /// Largest norm the sign gain gamma3 must dominate.
    pub max_gamma3_requirement: f64,
}

impl Default for StepDiagnostics {
    fn default() -> Self {
        Self {
            steps: 0,
            max_x_violation_mw: 0.0,
            max_r_violation_mw: 0.0,
            max_absorbed_overshoot_mw: 0.0,
            min_sign_product_e: f64::INFINITY,
            min_sign_product_sign: f64::INFINITY,
            max_gamma3_requirement: 0.0,
        }
    }
}

/// Per-step outputs the harness records.
#[derive(Debug, Clone, Copy)]
pub struct AruStepOutput {
    pub required_mw: f64,
    pub mismatch_mw: f64,
    pub lambda_dot: f64,
    pub gamma3_requirement: f64,
}

/// Per-asset command displacement of the first algorithm: fixed-time
/// feedback outside the converged band, feedforward inside. The feedback
/// displacement is capped at the distance that lands the stationarity error
/// exactly on zero (its largest in-box slope is kappa_x*f_xx), selecting the
/// sliding solution instead of overshooting. Returns (delta_cmd, u).
pub(crate) fn tot1_command_delta(
    e: f64,
    f_xx: f64,
    alpha: f64,
    gains: &ControllerGains,
    dt_s: f64,
) -> (f64, f64) {
    if e.abs() <= gains.sig_tolerance_mw {
        (alpha * dt_s, alpha)
    } else {
        let mag = (gains.gamma1 * frac_pow(e.abs(), gains.exp_lo())
            + gains.gamma2 * frac_pow(e.abs(), gains.exp_hi())
            + gains.gamma3)
            / f_xx;
        let reach = e.abs() / (gains.kappa_x * f_xx).max(1.0);
        let step_mw = (mag * dt_s).min(reach);
        let signed = -sign_banded(e, 0.0) * step_mw;
        (signed, signed / dt_s)
    }
}

/// Per-asset command displacement of the second algorithm (no curvature
/// scaling in the feedback term; the error's in-box slope is kappa_x).
pub(crate) fn tot2_command_delta(
    e: f64,
    alpha_second: f64,
    gains: &ControllerGains,
    dt_s: f64,
) -> (f64, f64) {
    if e.abs() <= gains.sig_tolerance_mw {
        (alpha_second * dt_s, alpha_second)
    } else {
        let mag = gains.gamma1 * frac_pow(e.abs(), gains.exp_lo())
            + gains.gamma2 * frac_pow(e.abs(), gains.exp_hi())
            + gains.gamma3;
        let reach = e.abs() / gains.kappa_x.max(1.0);
        let step_mw = (mag * dt_s).min(reach);
        let signed = -sign_banded(e, 0.0) * step_mw;
        (signed, signed / dt_s)
    }
}

/// Integrates a command displacement into the plant, projecting both the
/// command and the delivered quantity back onto the box. Returns the
/// absorbed pre-projection overshoot.
pub(crate) fn apply_plant_command(
    plant: PlantModel,
    bounds: &BoxConstraint,
    tau_s: f64,
    state: &mut AssetState,
    delta_cmd: f64,
    dt_s: f64,
) -> f64 {
    match plant {
        PlantModel::Direct => {
            let candidate = state.x + delta_cmd;
            let projected = bounds.project(candidate);
            state.x = projected;
            state.r = projected;
            (candidate - projected).abs()
        }
        PlantModel::FirstOrder => {
            let r_old = state.r;
            let candidate = state.r + delta_cmd;
            let projected = bounds.project(candidate);
            state.r = projected;
            state.x = bounds.project(state.x + dt_s * (r_old - state.x) / tau_s);
            (candidate - projected).abs()
        }
    }
}

/// One aggregated response unit: the asset set and the controller driving it.
#[derive(Debug)]
pub struct Aru {
    algorithm: AlgorithmKind,
    plant: PlantModel,
    assets: Vec<AssetParams>,
    boxes: Vec<BoxConstraint>,
    gains: ControllerGains,
    pub states: Vec<AssetState>,
    pub multiplier: MultiplierState,
    pub diag: StepDiagnostics,
    alpha_prime_prev: Vec<f64>,
    sigma_prev: Vec<u8>,
    slope_prev: f64,
    // Scratch reused across steps.
    f_x: Vec<f64>,
    f_xx: Vec<f64>,
    f_xw: Vec<f64>,
    f_xww: Vec<f64>,
    f_big: Vec<f64>,
    rho_w: Vec<f64>,
    tau: Vec<f64>,
    ff1: FeedforwardTerms,
    ff2: FeedforwardTerms2,
}

impl Aru {
    pub fn new(
        algorithm: AlgorithmKind,
        plant: PlantModel,
        assets: Vec<AssetParams>,
        gains: ControllerGains,
        lambda0: f64,
        sigma0: u8,
    ) -> Result<Self, ControllerError> {
        gains.validate()?;
        // The second algorithm exists because of the first-order response;
        // it always runs against it.
        let plant = if algorithm == AlgorithmKind::Tot2 {
            PlantModel::FirstOrder
        } else {
            plant
        };
        let mut boxes = Vec::with_capacity(assets.len());
        for (index, asset) in assets.iter().enumerate() {
            asset.validate(index)?;
            asset
                .cost
                .validate()
                .map_err(|_| ControllerError::NonPositiveGain {
                    name: "cost.a",
                    value: asset.cost.a,
                })?;
            if plant == PlantModel::FirstOrder && !(asset.tau_s > 0.0) {
                return Err(ControllerError::BadTimeConstant {
                    index,
                    tau: asset.tau_s,
                });
            }
            boxes.push(asset.deviation_box()?);
        }
        let n = assets.len();
        let states = vec![
            AssetState {
                sigma: sigma0,
                ..AssetState::default()
            };
            n
        ];
        let tau = assets.iter().map(|a| a.tau_s).collect();
        Ok(Self {
            algorithm,
            plant,
            assets,
            boxes,
            gains,
            states,
            multiplier: MultiplierState {
                lambda: lambda0,
                ..MultiplierState::default()
            },
            diag: StepDiagnostics::default(),
            alpha_prime_prev: vec![0.0; n],
            sigma_prev: vec![sigma0; n],
            slope_prev: 0.0,
            f_x: vec![0.0; n],
            f_xx: vec![0.0; n],
            f_xw: vec![0.0; n],
            f_xww: vec![0.0; n],
            f_big: vec![0.0; n],
            rho_w: vec![0.0; n],
            tau,
            ff1: FeedforwardTerms::default(),
            ff2: FeedforwardTerms2::default(),
        })
    }

    pub fn algorithm(&self) -> AlgorithmKind {
        self.algorithm
    }

    pub fn plant(&self) -> PlantModel {
        self.plant
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    pub fn assets(&self) -> &[AssetParams] {
        &self.assets
    }

    pub fn boxes(&self) -> &[BoxConstraint] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn sum_delivered_mw(&self) -> f64 {
        self.states.iter().map(|s| s.x).sum()
    }

    /// Feedforward values applied at the last step (alpha for the first
    /// algorithm, alpha'' for the second).
    pub fn last_alpha(&self) -> &[f64] {
        match self.algorithm {
            AlgorithmKind::Tot2 => &self.ff2.alpha_second,
            _ => &self.ff1.alpha,
        }
    }

    /// First-order trajectory rates computed at the last step.
    pub fn last_alpha_prime(&self) -> &[f64] {
        match self.algorithm {
            AlgorithmKind::Tot2 => &self.ff2.alpha_prime,
            _ => &self.ff1.alpha,
        }
    }

    /// Overrides the initial deviation of one asset (defaults to zero, the
    /// baseline). Must lie inside the asset's box.
    pub fn set_initial_deviation(&mut self, index: usize, x_mw: f64) -> Result<(), ControllerError> {
        let b = &self.boxes[index];
        if b.violation(x_mw) > 0.0 {
            return Err(ControllerError::EmptyBox { lo: b.lo, hi: b.hi });
        }
        self.states[index].x = x_mw;
        self.states[index].r = x_mw;
        Ok(())
    }

    /// Advances the unit one control interval.
    pub fn step(
        &mut self,
        meas: &FrequencyMeasurement,
        curve: &DeliveryCurve,
        c_agg_mw: f64,
        dt_s: f64,
    ) -> Result<AruStepOutput, ControllerError> {
        let out = match self.algorithm {
            AlgorithmKind::Tot1 => self.step_tot1(meas, curve, c_agg_mw, dt_s),
            AlgorithmKind::Tot2 => self.step_tot2(meas, curve, c_agg_mw, dt_s),
            AlgorithmKind::Benchmark => self.step_benchmark(meas, curve, c_agg_mw, dt_s),
        };
        self.diag.steps += 1;
        self.check_finite()?;
        self.record_feasibility();
        Ok(out)
    }

    fn step_tot1(
        &mut self,
        meas: &FrequencyMeasurement,
        curve: &DeliveryCurve,
        c_agg_mw: f64,
        dt_s: f64,
    ) -> AruStepOutput {
        let dev = meas.deviation_hz;
        let rate = meas.rate_hzps;
        let slope = curve.derivative(dev, Some(rate));
        let required = curve.evaluate(dev) * c_agg_mw;
        let gains = self.gains;

        // On the first-order plant this algorithm has no lag model: it
        // iterates its own command state and the delivered power trails it.
        // The lag error that leaks into the aggregate response is the point
        // of the comparison with the lag-compensating algorithm.
        let mut sum_cmd = 0.0;
        let mut sum_x = 0.0;
        for i in 0..self.assets.len() {
            let s = &mut self.states[i];
            let anchor = match self.plant {
                PlantModel::Direct => s.x,
                PlantModel::FirstOrder => s.r,
            };
            let d = self.assets[i].cost.derivatives(anchor, dev);
            self.f_x[i] = d.f_x;
            self.f_xx[i] = d.f_xx;
            self.f_xw[i] = d.f_xw;
            let f_big = gains.kappa_x * (d.f_x + self.multiplier.lambda);
            let e = stationarity_error(anchor, f_big, &self.boxes[i]);
            let sigma = switching_signal(anchor - e, &self.boxes[i]);
            s.e = e;
            s.sigma = sigma;
            self.f_big[i] = f_big;
            self.rho_w[i] = rho(&d, sigma).expect("curvature validated at construction");
            sum_cmd += anchor;
            sum_x += s.x;
            self.record_sign_products(f_big, e);
        }
        let mismatch = sum_x - required;
        feedforward_1(&self.rho_w, &self.f_xw, rate, slope, c_agg_mw, &mut self.ff1);
        self.multiplier.beta = self.ff1.beta;
        let lambda_dot = gains.kappa_lambda * (sum_cmd - required) + self.ff1.beta;

        let mut gamma3_requirement: f64 = 0.0;
        for i in 0..self.assets.len() {
            gamma3_requirement =
                gamma3_requirement.max((lambda_dot + self.f_xw[i] * rate).abs());
            let (delta_cmd, u) = tot1_command_delta(
                self.states[i].e,
                self.f_xx[i],
                self.ff1.alpha[i],
                &gains,
                dt_s,
            );
            self.apply_command(i, delta_cmd, dt_s);
            self.states[i].u = u;
        }
        self.multiplier.lambda += dt_s * lambda_dot;
        self.diag.max_gamma3_requirement =
            self.diag.max_gamma3_requirement.max(gamma3_requirement);

        AruStepOutput {
            required_mw: required,
            mismatch_mw: mismatch,
            lambda_dot,
            gamma3_requirement,
        }
    }

    fn step_tot2(
        &mut self,
        meas: &FrequencyMeasurement,
        curve: &DeliveryCurve,
        c_agg_mw: f64,
        dt_s: f64,
    ) -> AruStepOutput {
        let dev = meas.deviation_hz;
        let rate = meas.rate_hzps;
        let acc = meas.acc_hzps2;
        let slope = curve.derivative(dev, Some(rate));
        let required = curve.evaluate(dev) * c_agg_mw;
        let gains = self.gains;

        let mut sum_x = 0.0;
        for i in 0..self.assets.len() {
            let s = &mut self.states[i];
            let d = self.assets[i].cost.derivatives(s.x, dev);
            self.f_x[i] = d.f_x;
            self.f_xx[i] = d.f_xx;
            self.f_xw[i] = d.f_xw;
            self.f_xww[i] = d.f_xww;
            // The previous interval's alpha' breaks the cycle between the
            // gradient term, the switching signal, and the feedforward.
            let correction = s.r - s.x - self.tau[i] * self.alpha_prime_prev[i];
            let f_big = gains.kappa_x * (d.f_x + self.multiplier.lambda + correction);
            let e = stationarity_error(s.r, f_big, &self.boxes[i]);
            let sigma = switching_signal(s.r - e, &self.boxes[i]);
            s.e = e;
            s.sigma = sigma;
            self.f_big[i] = f_big;
            self.rho_w[i] = rho(&d, sigma).expect("curvature validated at construction");
            sum_x += s.x;
            self.record_sign_products(f_big, e);
        }
        let mismatch = sum_x - required;
        feedforward_2(
            &self.rho_w,
            &self.f_xw,
            &self.f_xww,
            &self.tau,
            rate,
            acc,
            slope,
            c_agg_mw,
            &mut self.ff2,
        );
        self.multiplier.beta_prime = self.ff2.beta_prime;
        self.multiplier.beta_second = self.ff2.beta_second;
        let lambda_dot = gains.kappa_lambda * mismatch + self.ff2.beta_prime;

        // The trajectory rate alpha' is differentiable except at switching
        // instants (a sigma flip or a curve-segment change); the backward
        // difference across one is spurious and the sign-gain condition does
        // not cover it, so those steps contribute without the alpha' term.
        let switching_instant = self.diag.steps == 0
            || slope != self.slope_prev
            || self
                .states
                .iter()
                .zip(&self.sigma_prev)
                .any(|(s, prev)| s.sigma != *prev);
        let mut gamma3_requirement: f64 = 0.0;
        for i in 0..self.assets.len() {
            let s = &self.states[i];
            let x_dot = (s.r - s.x) / self.tau[i];
            let alpha_prime_dot = if switching_instant {
                0.0
            } else {
                (self.ff2.alpha_prime[i] - self.alpha_prime_prev[i]) / dt_s
            };
            gamma3_requirement = gamma3_requirement.max(
                ((self.f_xx[i] - 1.0) * x_dot + self.f_xw[i] * rate + lambda_dot
                    - self.tau[i] * alpha_prime_dot)
                    .abs(),
            );
            let (delta_cmd, u) =
                tot2_command_delta(s.e, self.ff2.alpha_second[i], &gains, dt_s);
            self.apply_command(i, delta_cmd, dt_s);
            self.states[i].u = u;
        }
        self.multiplier.lambda += dt_s * lambda_dot;
        self.alpha_prime_prev.copy_from_slice(&self.ff2.alpha_prime);
        for (prev, s) in self.sigma_prev.iter_mut().zip(&self.states) {
            *prev = s.sigma;
        }
        self.slope_prev = slope;
        self.diag.max_gamma3_requirement =
            self.diag.max_gamma3_requirement.max(gamma3_requirement);

        AruStepOutput {
            required_mw: required,
            mismatch_mw: mismatch,
            lambda_dot,
            gamma3_requirement,
        }
    }

    fn step_benchmark(
        &mut self,
        meas: &FrequencyMeasurement,
        curve: &DeliveryCurve,
        c_agg_mw: f64,
        dt_s: f64,
    ) -> AruStepOutput {
        let dev = meas.deviation_hz;
        let required = curve.evaluate(dev) * c_agg_mw;
        let gains = self.gains;

        // Plant-unaware like the first algorithm: the projected gradient
        // flow iterates the command state.
        let mut sum_cmd = 0.0;
        let mut sum_x = 0.0;
        for i in 0..self.assets.len() {
            let s = &mut self.states[i];
            let cmd = match self.plant {
                PlantModel::Direct => s.x,
                PlantModel::FirstOrder => s.r,
            };
            let d = self.assets[i].cost.derivatives(cmd, dev);
            let f_big = gains.kappa_x * (d.f_x + self.multiplier.lambda);
            let e = stationarity_error(cmd, f_big, &self.boxes[i]);
            s.e = e;
            s.sigma = switching_signal(cmd - e, &self.boxes[i]);
            self.f_big[i] = f_big;
            sum_cmd += cmd;
            sum_x += s.x;
            self.record_sign_products(f_big, e);
        }
        let mismatch = sum_x - required;
        let lambda_dot = gains.kappa_lambda * (sum_cmd - required);

        for i in 0..self.assets.len() {
            // Projected gradient flow: the command decays toward the
            // projected gradient point, which is cmd - e.
            let delta_cmd = dt_s * -self.states[i].e;
            self.apply_command(i, delta_cmd, dt_s);
            self.states[i].u = -self.states[i].e;
        }
        self.multiplier.lambda += dt_s * lambda_dot;
        self.multiplier.beta = 0.0;

        AruStepOutput {
            required_mw: required,
            mismatch_mw: mismatch,
            lambda_dot,
            gamma3_requirement: 0.0,
        }
    }

    /// Integrates the command displacement into the plant.
    fn apply_command(&mut self, i: usize, delta_cmd: f64, dt_s: f64) {
        let overshoot = apply_plant_command(
            self.plant,
            &self.boxes[i],
            self.tau[i],
            &mut self.states[i],
            delta_cmd,
            dt_s,
        );
        self.diag.max_absorbed_overshoot_mw = self.diag.max_absorbed_overshoot_mw.max(overshoot);
    }

    fn record_sign_products(&mut self, f_big: f64, e: f64) {
        let product_e = (f_big - e) * e;
        let product_sign = (f_big - e) * sign_banded(e, 0.0);
        self.diag.min_sign_product_e = self.diag.min_sign_product_e.min(product_e);
        self.diag.min_sign_product_sign = self.diag.min_sign_product_sign.min(product_sign);
    }

    fn record_feasibility(&mut self) {
        for (s, b) in self.states.iter().zip(&self.boxes) {
            self.diag.max_x_violation_mw = self.diag.max_x_violation_mw.max(b.violation(s.x));
            self.diag.max_r_violation_mw = self.diag.max_r_violation_mw.max(b.violation(s.r));
        }
    }

    fn check_finite(&self) -> Result<(), ControllerError> {
        let finite = self.multiplier.lambda.is_finite()
            && self
                .states
                .iter()
                .all(|s| s.x.is_finite() && s.r.is_finite() && s.e.is_finite());
        if finite {
            Ok(())
        } else {
            Err(ControllerError::NonFinite {
                step: self.diag.steps,
            })
        }
    }
}
