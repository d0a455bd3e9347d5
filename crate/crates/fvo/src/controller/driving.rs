//! Feedforward driving terms.
//!
//! Once the stationarity error has been forced to zero, the state must keep
//! moving *along* the optimal trajectory. The trajectory rates depend on
//! global sums of the switched curvature weights rho_i, so they enter the
//! per-asset laws through two scalars: a multiplier rate (beta) and per-asset
//! rates (alpha). The second algorithm additionally needs the second-order
//! terms through the asset time constants.

/// Ratio core shared by the centralized and distributed evaluations: the
/// sums in the multiplier rate appear only as a ratio against the rho sum,
/// which is invariant under replacing sums by network averages. The
/// pseudoinverse convention maps an all-boundary aggregate (zero rho) to
/// zero rates.
pub(crate) fn beta_ratio(rho_agg: f64, numerator_agg: f64) -> f64 {
    if rho_agg > 0.0 {
        -numerator_agg / rho_agg
    } else {
        0.0
    }
}

/// First-order feedforward terms.
#[derive(Debug, Clone, Default)]
pub struct FeedforwardTerms {
    /// Per-asset trajectory rate alpha_i, MW/s.
    pub alpha: Vec<f64>,
    /// Multiplier rate beta, cost/(MW s).
    pub beta: f64,
}

/// Evaluates the first-order driving terms.
///
/// `rho` are the switched curvature weights sigma_i / f_ixx, `f_xw` the
/// frequency-coupling second derivatives, `rate_hzps` the measured deviation
/// rate, `curve_slope` the delivery-curve derivative on the entered segment,
/// `c_agg_mw` the contracted capacity. When every asset is on its boundary
/// all terms vanish.
pub fn feedforward_1(
    rho: &[f64],
    f_xw: &[f64],
    rate_hzps: f64,
    curve_slope: f64,
    c_agg_mw: f64,
    out: &mut FeedforwardTerms,
) {
    debug_assert_eq!(rho.len(), f_xw.len());
    let rho_sum: f64 = rho.iter().sum();
    let coupling_sum: f64 = rho.iter().zip(f_xw).map(|(r, c)| r * c).sum();
    let numerator = coupling_sum * rate_hzps + curve_slope * rate_hzps * c_agg_mw;
    let beta = beta_ratio(rho_sum, numerator);
    out.beta = beta;
    out.alpha.clear();
    out.alpha
        .extend(rho.iter().zip(f_xw).map(|(r, c)| -r * (c * rate_hzps + beta)));
}

/// Second-order feedforward terms for the first-order plant.
#[derive(Debug, Clone, Default)]
pub struct FeedforwardTerms2 {
    /// Per-asset combined rate alpha''_i = tau_i d/dt(alpha'_i-shape) +
    /// alpha'_i, MW/s.
    pub alpha_second: Vec<f64>,
    /// Per-asset trajectory rate alpha'_i, MW/s.
    pub alpha_prime: Vec<f64>,
    /// Multiplier acceleration beta''.
    pub beta_second: f64,
    /// Multiplier rate beta'.
    pub beta_prime: f64,
}

/// Evaluates the second-order driving terms.
///
/// Requires the constant-curvature cost family; `acc_hzps2` is the measured
/// deviation acceleration and `f_xww` the third-order coupling slots.
#[allow(clippy::too_many_arguments)]
pub fn feedforward_2(
    rho: &[f64],
    f_xw: &[f64],
    f_xww: &[f64],
    tau_s: &[f64],
    rate_hzps: f64,
    acc_hzps2: f64,
    curve_slope: f64,
    c_agg_mw: f64,
    out: &mut FeedforwardTerms2,
) {
    debug_assert_eq!(rho.len(), f_xw.len());
    debug_assert_eq!(rho.len(), f_xww.len());
    debug_assert_eq!(rho.len(), tau_s.len());
    let rho_sum: f64 = rho.iter().sum();
    let rate_sq = rate_hzps * rate_hzps;

    let coupling_w: f64 = rho.iter().zip(f_xw).map(|(r, c)| r * c).sum();
    let coupling_ww: f64 = rho.iter().zip(f_xww).map(|(r, cc)| r * cc).sum();
    let prime_numerator = coupling_w * rate_hzps + curve_slope * rate_hzps * c_agg_mw;
    let beta_prime = beta_ratio(rho_sum, prime_numerator);

    let second_numerator =
        coupling_w * acc_hzps2 + coupling_ww * rate_sq + curve_slope * acc_hzps2 * c_agg_mw;
    let beta_second = beta_ratio(rho_sum, second_numerator);

    out.beta_prime = beta_prime;
    out.beta_second = beta_second;
    out.alpha_prime.clear();
    out.alpha_prime
        .extend(rho.iter().zip(f_xw).map(|(r, c)| -r * (c * rate_hzps + beta_prime)));
    out.alpha_second.clear();
    out.alpha_second.extend(
        rho.iter()
            .zip(f_xw.iter().zip(f_xww))
            .zip(tau_s)
            .zip(&out.alpha_prime)
            .map(|(((r, (c, cc)), tau), alpha_prime)| {
                -tau * r * (c * acc_hzps2 + cc * rate_sq + beta_second) + alpha_prime
            }),
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_interior_assets_reference_case() {
        // f_xx = 2 each (rho = 0.5), frequency-independent costs, slope
        // -9.5/Hz, rate 0.01 Hz/s, 50 MW contract.
        let mut out = FeedforwardTerms::default();
        feedforward_1(&[0.5, 0.5], &[0.0, 0.0], 0.01, -9.5, 50.0, &mut out);
        assert!((out.beta - 4.75).abs() < 1e-12);
        assert!((out.alpha[0] - (-2.375)).abs() < 1e-12);
        assert!((out.alpha[1] - (-2.375)).abs() < 1e-12);
        // The per-asset rates sum to the required-quantity rate.
        let sum: f64 = out.alpha.iter().sum();
        assert!((sum - (-9.5 * 0.01 * 50.0)).abs() < 1e-12);
    }

    #[test]
    fn all_boundary_gives_zero_terms() {
        let mut out = FeedforwardTerms::default();
        feedforward_1(&[0.0, 0.0], &[0.3, -0.1], 0.01, -9.5, 50.0, &mut out);
        assert_eq!(out.beta, 0.0);
        assert!(out.alpha.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn stationary_exosystem_gives_zero_terms() {
        let mut out = FeedforwardTerms::default();
        feedforward_1(&[0.5, 0.25], &[0.0, 0.0], 0.0, -9.5, 50.0, &mut out);
        assert_eq!(out.beta, 0.0);
        assert!(out.alpha.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn second_order_reference_case() {
        // rho = 0.5 each, slope -9.5, acceleration 0.1 Hz/s^2, 50 MW, time
        // constants 50 ms and 160 ms.
        let mut out = FeedforwardTerms2::default();
        feedforward_2(
            &[0.5, 0.5],
            &[0.0, 0.0],
            &[0.0, 0.0],
            &[0.05, 0.16],
            0.0,
            0.1,
            -9.5,
            50.0,
            &mut out,
        );
        assert!((out.beta_second - 47.5).abs() < 1e-12);
        assert!((out.alpha_second[0] - (out.alpha_prime[0] - 1.1875)).abs() < 1e-12);
        assert!((out.alpha_second[1] - (out.alpha_prime[1] - 3.8)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_costs_with_zero_acceleration_collapse_to_first_order() {
        let mut out = FeedforwardTerms2::default();
        feedforward_2(
            &[0.5, 0.25],
            &[0.0, 0.0],
            &[0.0, 0.0],
            &[0.05, 0.16],
            0.02,
            0.0,
            -9.5,
            50.0,
            &mut out,
        );
        assert_eq!(out.beta_second, 0.0);
        for (second, prime) in out.alpha_second.iter().zip(&out.alpha_prime) {
            assert_eq!(second, prime);
        }
        // And the first-order parts agree with the direct evaluation.
        let mut first = FeedforwardTerms::default();
        feedforward_1(&[0.5, 0.25], &[0.0, 0.0], 0.02, -9.5, 50.0, &mut first);
        assert_eq!(out.beta_prime, first.beta);
        assert_eq!(out.alpha_prime, first.alpha);
    }

    #[test]
    fn all_boundary_second_order_vanishes() {
        let mut out = FeedforwardTerms2::default();
        feedforward_2(
            &[0.0, 0.0],
            &[0.1, 0.2],
            &[0.3, 0.4],
            &[0.05, 0.16],
            0.02,
            0.1,
            -9.5,
            50.0,
            &mut out,
        );
        assert_eq!(out.beta_prime, 0.0);
        assert_eq!(out.beta_second, 0.0);
        assert!(out.alpha_prime.iter().all(|a| *a == 0.0));
        assert!(out.alpha_second.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn frequency_coupled_costs_enter_both_orders() {
        // One coupled asset: f_xw = 0.4, f_xww = 0.2.
        let mut out = FeedforwardTerms2::default();
        let (rate, acc) = (0.02, 0.1);
        feedforward_2(
            &[0.5],
            &[0.4],
            &[0.2],
            &[0.1],
            rate,
            acc,
            -9.5,
            50.0,
            &mut out,
        );
        // Hand evaluation: beta' = -(0.5*0.4*rate + (-9.5)*rate*50)/0.5,
        // beta'' = -(0.5*(0.4*acc + 0.2*rate^2) + (-9.5)*acc*50)/0.5.
        let beta_prime = -(0.5 * 0.4 * rate + (-9.5) * rate * 50.0) / 0.5;
        let beta_second = -(0.5 * (0.4 * acc + 0.2 * rate * rate) + (-9.5) * acc * 50.0) / 0.5;
        assert!((out.beta_prime - beta_prime).abs() < 1e-12);
        assert!((out.beta_second - beta_second).abs() < 1e-12);
        let alpha_prime = -0.5 * (0.4 * rate + beta_prime);
        let alpha_second =
            -0.1 * 0.5 * (0.4 * acc + 0.2 * rate * rate + beta_second) + alpha_prime;
        assert!((out.alpha_prime[0] - alpha_prime).abs() < 1e-12);
        assert!((out.alpha_second[0] - alpha_second).abs() < 1e-12);
    }
}
