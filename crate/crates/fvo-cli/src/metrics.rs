//! Run metrics: convergence time against the oracle, the fixed-time bound,
//! post-convergence tracking quality, cost gap, and invariant aggregates.
//!
//! Convergence is the first instant after the event at which the aggregate
//! mismatch stays within 0.1% of the contracted capacity and every asset
//! stays within 1% (floored at 1 MW) of its oracle coordinate, holding
//! through the end of the horizon. Detection runs on the oracle sampling
//! grid and is then refined to the control interval by re-solving the
//! oracle inside the bracketing sample gap. The fixed-time assertion is
//! only meaningful when the sign gain dominated the monitored norms, so the
//! bound check carries the measured margin with it.

use serde::Serialize;

use fvo::controller::AlgorithmKind;
use fvo::oracle::{solve_instant, InstantProblem, InstantSolution};

use crate::scenario::{Mode, Scenario};
use crate::sim::AruRunData;

/// Mismatch tolerance as a fraction of the contracted capacity.
const MISMATCH_FRACTION: f64 = 1e-3;
/// Per-asset tracking tolerance, relative with a 1 MW floor.
const TRACK_FRACTION: f64 = 1e-2;

#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub aru: String,
    pub algorithm: AlgorithmKind,
    pub mode: Mode,
    pub t_max_bound_s: f64,
    /// Measured convergence time after the event, if the run converged.
    pub convergence_time_s: Option<f64>,
    /// gamma3 minus the largest monitored norm; negative means the
    /// fixed-time premise did not hold on this run.
    pub gamma3_margin: f64,
    /// T <= T_max, asserted only on gamma3-conforming runs.
    pub fixed_time_ok: Option<bool>,
    pub max_mismatch_after_convergence_mw: Option<f64>,
    /// Integral of |cost - oracle cost| after convergence, cost-units * s.
    pub cost_gap_integral: Option<f64>,
    pub oracle_cost_integral: Option<f64>,
    pub cost_gap_fraction: Option<f64>,
    pub rms_mismatch_after_event_mw: f64,
    pub max_mismatch_after_event_mw: f64,
    pub max_x_violation_mw: f64,
    pub max_r_violation_mw: f64,
    pub min_sign_product: f64,
    pub max_absorbed_overshoot_mw: f64,
    pub mean_interval_compute_us: f64,
    /// Per-node share of the interval compute time in distributed mode.
    pub per_node_compute_us: Option<f64>,
    /// Oracle samples at which every error sat inside the converged band.
    pub feedforward_gate_samples: usize,
    /// Largest |alpha - oracle rate| over gated samples, MW/s.
    pub feedforward_max_err: f64,
}

fn converged_at(
    data: &AruRunData,
    step: usize,
    sol: &InstantSolution,
    c_agg: f64,
) -> bool {
    if data.mismatch[step].abs() > MISMATCH_FRACTION * c_agg {
        return false;
    }
    data.x_at(step)
        .iter()
        .zip(&sol.x)
        .all(|(x, x_star)| (x - x_star).abs() <= TRACK_FRACTION * x_star.abs().max(1.0))
}

fn solve_at(data: &AruRunData, dev_hz: &[f64], step: usize) -> Option<InstantSolution> {
    let prob = InstantProblem {
        assets: data.oracle_assets.clone(),
        deviation_hz: dev_hz[step],
        required_mw: data.required[step],
    };
    solve_instant(&prob).ok()
}

/// Convergence instant in steps, refined to the control interval.
fn detect_convergence(scenario: &Scenario, dev_hz: &[f64], data: &AruRunData) -> Option<usize> {
    let dt = scenario.dt_s();
    let event_step = (scenario.event_time_s / dt).round() as usize;
    let c_agg = data.spec.service.c_agg_mw;

    let samples: Vec<(usize, bool)> = data
        .oracle
        .iter()
        .filter(|s| s.step >= event_step)
        .map(|s| {
            let sol = InstantSolution {
                x: s.x_star.clone(),
                lambda: s.lambda_star,
                active_set: Vec::new(),
            };
            (s.step, converged_at(data, s.step, &sol, c_agg))
        })
        .collect();
    if samples.is_empty() {
        return None;
    }
    // Earliest sample from which every later sample is converged.
    let mut first_good: Option<usize> = None;
    for (idx, (_, ok)) in samples.iter().enumerate().rev() {
        if *ok {
            first_good = Some(idx);
        } else {
            break;
        }
    }
    let first_good = first_good?;
    let good_step = samples[first_good].0;
    // Refine inside the bracketing sample gap.
    let from = if first_good == 0 {
        event_step
    } else {
        samples[first_good - 1].0 + 1
    };
    let mut refined = good_step;
    for step in (from..good_step).rev() {
        match solve_at(data, dev_hz, step) {
            Some(sol) if converged_at(data, step, &sol, c_agg) => refined = step,
            _ => break,
        }
    }
    Some(refined)
}

pub fn compute(scenario: &Scenario, dev_hz: &[f64], data: &AruRunData) -> RunMetrics {
    let dt = scenario.dt_s();
    let steps = data.mismatch.len();
    let event_step = ((scenario.event_time_s / dt).round() as usize).min(steps);
    let spec = &data.spec;
    let gains = spec.controller.controller_gains();
    let t_max_bound = fvo::controller::t_max(&gains);
    let gamma3_margin = gains.gamma3 - data.diag.max_gamma3_requirement;

    let convergence_step = detect_convergence(scenario, dev_hz, data);
    let convergence_time = convergence_step.map(|s| (s.saturating_sub(event_step)) as f64 * dt);
    // The bound is claimed only where the algorithm's plant model holds:
    // the first algorithm on the direct plant, the second on the first-order
    // plant. Deliberately mismatched runs and the benchmark carry no claim.
    let bound_applies = matches!(
        (spec.algorithm, spec.plant),
        (AlgorithmKind::Tot1, fvo::controller::PlantModel::Direct)
            | (AlgorithmKind::Tot2, fvo::controller::PlantModel::FirstOrder)
    );
    let fixed_time_ok = match (convergence_time, gamma3_margin >= 0.0, bound_applies) {
        (Some(t), true, true) => Some(t <= t_max_bound),
        _ => None,
    };

    // Post-convergence aggregates.
    let mut max_mismatch_after = None;
    let mut cost_gap_integral = None;
    let mut oracle_cost_integral = None;
    if let Some(t_step) = convergence_step {
        let worst = data.mismatch[t_step..]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        max_mismatch_after = Some(worst);

        // Oracle cost interpolated linearly between samples.
        let samples = &data.oracle;
        if samples.len() >= 2 {
            let mut gap = 0.0;
            let mut reference = 0.0;
            let mut cursor = 0usize;
            for step in t_step..steps {
                while cursor + 1 < samples.len() && samples[cursor + 1].step <= step {
                    cursor += 1;
                }
                let star = if cursor + 1 < samples.len() {
                    let (s0, s1) = (&samples[cursor], &samples[cursor + 1]);
                    let w = (step - s0.step) as f64 / (s1.step - s0.step) as f64;
                    s0.cost_star + w * (s1.cost_star - s0.cost_star)
                } else {
                    samples[cursor].cost_star
                };
                let actual = data.cost_at(step, dev_hz[step]);
                gap += (actual - star).abs() * dt;
                reference += star.abs() * dt;
            }
            cost_gap_integral = Some(gap);
            oracle_cost_integral = Some(reference);
        }
    }
    let cost_gap_fraction = match (cost_gap_integral, oracle_cost_integral) {
        (Some(gap), Some(reference)) if reference > 0.0 => Some(gap / reference),
        _ => None,
    };

    let post_event = &data.mismatch[event_step.min(steps)..];
    let rms = if post_event.is_empty() {
        0.0
    } else {
        (post_event.iter().map(|m| m * m).sum::<f64>() / post_event.len() as f64).sqrt()
    };
    let max_after_event = post_event.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let gated: Vec<&crate::sim::OracleSample> =
        data.oracle.iter().filter(|s| s.gate_open).collect();
    let feedforward_max_err = gated.iter().map(|s| s.alpha_err).fold(0.0, f64::max);

    let mean_us = if data.controller_steps > 0 {
        data.compute_ns as f64 / data.controller_steps as f64 / 1000.0
    } else {
        0.0
    };
    let per_node_us = match spec.mode {
        Mode::Distributed => Some(mean_us / spec.assets.len() as f64),
        Mode::Centralized => None,
    };

    RunMetrics {
        aru: spec.name.clone(),
        algorithm: spec.algorithm,
        mode: spec.mode,
        t_max_bound_s: t_max_bound,
        convergence_time_s: convergence_time,
        gamma3_margin,
        fixed_time_ok,
        max_mismatch_after_convergence_mw: max_mismatch_after,
        cost_gap_integral,
        oracle_cost_integral,
        cost_gap_fraction,
        rms_mismatch_after_event_mw: rms,
        max_mismatch_after_event_mw: max_after_event,
        max_x_violation_mw: data.diag.max_x_violation_mw,
        max_r_violation_mw: data.diag.max_r_violation_mw,
        min_sign_product: if data.diag.steps == 0 {
            0.0
        } else {
            data.diag
                .min_sign_product_e
                .min(data.diag.min_sign_product_sign)
        },
        max_absorbed_overshoot_mw: data.diag.max_absorbed_overshoot_mw,
        mean_interval_compute_us: mean_us,
        per_node_compute_us: per_node_us,
        feedforward_gate_samples: gated.len(),
        feedforward_max_err,
    }
}
