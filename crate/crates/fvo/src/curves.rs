//! Delivery requirement curves.
//!
//! Each dynamic service maps the center-of-inertia frequency deviation to a
//! fraction of contracted capacity that must be delivered, as a non-increasing
//! piecewise-linear function with a dead-band around nominal. Under-frequency
//! (negative deviation) requires export (positive fraction), so the slope is
//! nonpositive everywhere. Beyond the extreme knots the curve clamps at full
//! delivery.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three dynamic frequency-response services.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceKind {
    /// Dynamic Regulation: pre-fault, continuous small deviations.
    Dr,
    /// Dynamic Moderation: pre-fault, volatile periods.
    Dm,
    /// Dynamic Containment: post-fault, large deviations.
    Dc,
}

impl ServiceKind {
    /// Maximum delivery time requested for the service, in seconds.
    pub fn max_delivery_time_s(self) -> f64 {
        match self {
            ServiceKind::Dr => 10.0,
            ServiceKind::Dm => 1.0,
            ServiceKind::Dc => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ServiceKind::Dr => "DR",
            ServiceKind::Dm => "DM",
            ServiceKind::Dc => "DC",
        }
    }
}

/// One (deviation, fraction) breakpoint of a delivery curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveKnot {
    /// Frequency deviation in Hz.
    pub deviation_hz: f64,
    /// Required fraction of contracted capacity, in [-1, 1].
    pub fraction: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    #[error("a delivery curve needs at least two knots, got {0}")]
    TooFewKnots(usize),
    #[error("knot deviations must be strictly increasing (knot {index} at {deviation_hz} Hz)")]
    UnorderedKnots { index: usize, deviation_hz: f64 },
    #[error("fractions must be non-increasing in deviation (knot {index})")]
    IncreasingFraction { index: usize },
    #[error("fraction {0} outside [-1, 1]")]
    FractionOutOfRange(f64),
    #[error("extreme knots must carry full delivery (+1 first, -1 last)")]
    MissingSaturation,
    #[error("curve must be zero at zero deviation, got {0}")]
    NonzeroAtNominal(f64),
    #[error("contracted quantity must be positive, got {0} MW")]
    NonPositiveCapacity(f64),
}

/// Piecewise-linear delivery requirement curve h and its derivative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeliveryCurve {
    service: ServiceKind,
    knots: Vec<CurveKnot>,
    max_delivery_time_s: f64,
}

impl DeliveryCurve {
    /// Validates the knot list and fixes the delivery deadline from the
    /// service kind.
    pub fn new(service: ServiceKind, knots: Vec<CurveKnot>) -> Result<Self, CurveError> {
        if knots.len() < 2 {
            return Err(CurveError::TooFewKnots(knots.len()));
        }
        for (i, pair) in knots.windows(2).enumerate() {
            if pair[1].deviation_hz <= pair[0].deviation_hz {
                return Err(CurveError::UnorderedKnots {
                    index: i + 1,
                    deviation_hz: pair[1].deviation_hz,
                });
            }
            if pair[1].fraction > pair[0].fraction {
                return Err(CurveError::IncreasingFraction { index: i + 1 });
            }
        }
        for k in &knots {
            if k.fraction.abs() > 1.0 {
                return Err(CurveError::FractionOutOfRange(k.fraction));
            }
        }
        if knots.first().unwrap().fraction != 1.0 || knots.last().unwrap().fraction != -1.0 {
            return Err(CurveError::MissingSaturation);
        }
        let curve = Self {
            service,
            knots,
            max_delivery_time_s: service.max_delivery_time_s(),
        };
        let at_zero = curve.evaluate(0.0);
        if at_zero != 0.0 {
            return Err(CurveError::NonzeroAtNominal(at_zero));
        }
        Ok(curve)
    }

    /// Default curve for a service.
    ///
    /// The DM knots are the published dead-band (±0.015 Hz), knee (±0.1 Hz at
    /// ∓5%), and saturation (±0.2 Hz) points. DR saturates at ±0.2 Hz with no
    /// knee; DC extends to ±0.5 Hz with a knee at ±0.2 Hz. All three share the
    /// ±0.015 Hz dead-band. Scenario files may substitute exact operator knot
    /// tables.
    pub fn default_for(service: ServiceKind) -> Self {
        let knots = match service {
            ServiceKind::Dm => vec![
                (-0.2, 1.0),
                (-0.1, 0.05),
                (-0.015, 0.0),
                (0.015, 0.0),
                (0.1, -0.05),
                (0.2, -1.0),
            ],
            ServiceKind::Dr => vec![(-0.2, 1.0), (-0.015, 0.0), (0.015, 0.0), (0.2, -1.0)],
            ServiceKind::Dc => vec![
                (-0.5, 1.0),
                (-0.2, 0.05),
                (-0.015, 0.0),
                (0.015, 0.0),
                (0.2, -0.05),
                (0.5, -1.0),
            ],
        };
        let knots = knots
            .into_iter()
            .map(|(deviation_hz, fraction)| CurveKnot {
                deviation_hz,
                fraction,
            })
            .collect();
        Self::new(service, knots).expect("default curves are valid")
    }

    pub fn service(&self) -> ServiceKind {
        self.service
    }

    pub fn knots(&self) -> &[CurveKnot] {
        &self.knots
    }

    pub fn max_delivery_time_s(&self) -> f64 {
        self.max_delivery_time_s
    }

    /// Required fraction at a deviation; clamps to ±1 beyond the extremes.
    pub fn evaluate(&self, deviation_hz: f64) -> f64 {
        let first = self.knots.first().unwrap();
        let last = self.knots.last().unwrap();
        if deviation_hz <= first.deviation_hz {
            return first.fraction;
        }
        if deviation_hz >= last.deviation_hz {
            return last.fraction;
        }
        let seg = self.segment_right_of(deviation_hz);
        let (a, b) = (self.knots[seg], self.knots[seg + 1]);
        let t = (deviation_hz - a.deviation_hz) / (b.deviation_hz - a.deviation_hz);
        a.fraction + t * (b.fraction - a.fraction)
    }

    /// Slope of the active linear segment, in 1/Hz.
    ///
    /// Zero inside the dead-band and beyond saturation. Exactly at a knot the
    /// slope is ambiguous; `direction` (the sign of the deviation rate)
    /// selects the segment being entered, and without it the left segment is
    /// used. The slope only ever multiplies the deviation rate, so the entered
    /// segment is the dynamically correct choice.
    pub fn derivative(&self, deviation_hz: f64, direction: Option<f64>) -> f64 {
        let first = self.knots.first().unwrap();
        let last = self.knots.last().unwrap();
        if deviation_hz < first.deviation_hz || deviation_hz > last.deviation_hz {
            return 0.0;
        }
        // At a knot, pick a side; elsewhere both sides agree.
        if let Some(k) = self
            .knots
            .iter()
            .position(|k| k.deviation_hz == deviation_hz)
        {
            let moving_right = matches!(direction, Some(d) if d > 0.0);
            return if moving_right {
                self.segment_slope(k) // segment [k, k+1]
            } else {
                self.segment_slope(k.wrapping_sub(1)) // segment [k-1, k]
            };
        }
        self.segment_slope(self.segment_right_of(deviation_hz))
    }

    /// Required quantity in MW for a contracted aggregate capacity.
    pub fn required_quantity(&self, deviation_hz: f64, c_agg_mw: f64) -> Result<f64, CurveError> {
        if c_agg_mw <= 0.0 {
            return Err(CurveError::NonPositiveCapacity(c_agg_mw));
        }
        Ok(self.evaluate(deviation_hz) * c_agg_mw)
    }

    /// Index i of the segment [knot i, knot i+1] containing the deviation,
    /// assuming it lies strictly inside the knot range.
    fn segment_right_of(&self, deviation_hz: f64) -> usize {
        // Knot lists are tiny (4-8 entries); linear scan.
        let mut seg = 0;
        for (i, k) in self.knots.iter().enumerate().skip(1) {
            if deviation_hz < k.deviation_hz {
                seg = i - 1;
                break;
            }
        }
        seg
    }

    /// Slope of segment [i, i+1]; out-of-range indices are the clamped flats.
    fn segment_slope(&self, i: usize) -> f64 {
        if i >= self.knots.len() - 1 {
            return 0.0;
        }
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        (b.fraction - a.fraction) / (b.deviation_hz - a.deviation_hz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn dm() -> DeliveryCurve {
        DeliveryCurve::default_for(ServiceKind::Dm)
    }

    #[test]
    fn dm_published_points() {
        let c = dm();
        assert_eq!(c.evaluate(0.0), 0.0); // dead-band
        assert_eq!(c.evaluate(-0.2), 1.0); // saturation: full delivery
        assert_eq!(c.evaluate(-0.35), 1.0); // beyond saturation: clamped
        assert_eq!(c.evaluate(0.3), -1.0);
        assert!((c.evaluate(-0.1) - 0.05).abs() < 1e-15); // knee: 5%
        assert!((c.evaluate(-0.15) - 0.525).abs() < 1e-12); // between knee and saturation
    }

    #[test]
    fn dm_derivative_values() {
        let c = dm();
        assert_eq!(c.derivative(0.0, None), 0.0); // dead-band interior
        assert!((c.derivative(-0.15, None) - (-9.5)).abs() < 1e-12);
        assert_eq!(c.derivative(-0.3, None), 0.0); // beyond saturation
    }

    #[test]
    fn derivative_at_knot_honors_direction_hint() {
        let c = dm();
        // Knee at -0.1 Hz: left segment slope -9.5, right segment slope
        // (0 - 0.05) / (-0.015 + 0.1) = -0.588...
        let right = (0.0 - 0.05) / (-0.015 - (-0.1));
        assert!((c.derivative(-0.1, Some(1.0)) - right).abs() < 1e-12);
        assert!((c.derivative(-0.1, Some(-1.0)) - (-9.5)).abs() < 1e-12);
        // Default: left segment.
        assert!((c.derivative(-0.1, None) - (-9.5)).abs() < 1e-12);
        // At the extreme knots the outward side is flat.
        assert_eq!(c.derivative(-0.2, Some(-1.0)), 0.0);
        assert!((c.derivative(-0.2, Some(1.0)) - (-9.5)).abs() < 1e-12);
    }

    #[test]
    fn required_quantity_scales_by_capacity() {
        let c = dm();
        assert_eq!(c.required_quantity(-0.2, 50.0).unwrap(), 50.0);
        assert_eq!(c.required_quantity(0.0, 50.0).unwrap(), 0.0);
        assert!((c.required_quantity(-0.1, 50.0).unwrap() - 2.5).abs() < 1e-12);
        assert!(c.required_quantity(-0.1, 0.0).is_err());
        assert!(c.required_quantity(-0.1, -5.0).is_err());
    }

    #[test]
    fn slope_nonpositive_and_monotone_everywhere() {
        for service in [ServiceKind::Dr, ServiceKind::Dm, ServiceKind::Dc] {
            let c = DeliveryCurve::default_for(service);
            let mut rng = SplitMix64::new(11);
            for _ in 0..2000 {
                let d = rng.uniform(-0.8, 0.8);
                assert!(c.derivative(d, None) <= 0.0);
                assert!(c.derivative(d, Some(1.0)) <= 0.0);
                let d2 = rng.uniform(-0.8, 0.8);
                let (lo, hi) = if d < d2 { (d, d2) } else { (d2, d) };
                assert!(c.evaluate(lo) >= c.evaluate(hi));
            }
        }
    }

    #[test]
    fn finite_difference_matches_derivative_off_knots() {
        let c = DeliveryCurve::default_for(ServiceKind::Dc);
        let eps = 1e-6;
        let mut rng = SplitMix64::new(3);
        let mut checked = 0;
        while checked < 500 {
            let d = rng.uniform(-0.6, 0.6);
            // Skip samples within eps of a knot: the central difference
            // straddles two segments there.
            if c
                .knots()
                .iter()
                .any(|k| (k.deviation_hz - d).abs() <= 2.0 * eps)
            {
                continue;
            }
            let fd = (c.evaluate(d + eps) - c.evaluate(d - eps)) / (2.0 * eps);
            assert!(
                (fd - c.derivative(d, None)).abs() < 1e-9,
                "fd {fd} vs analytic {} at {d}",
                c.derivative(d, None)
            );
            checked += 1;
        }
    }

    #[test]
    fn odd_symmetry_for_symmetric_knots() {
        for service in [ServiceKind::Dr, ServiceKind::Dm, ServiceKind::Dc] {
            let c = DeliveryCurve::default_for(service);
            let mut rng = SplitMix64::new(5);
            for _ in 0..500 {
                let d = rng.uniform(0.0, 0.7);
                assert!(
                    (c.evaluate(-d) + c.evaluate(d)).abs() < 1e-12,
                    "h(-d) != -h(d) at {d} for {service:?}"
                );
            }
        }
    }

    #[test]
    fn max_delivery_time_fixed_by_service() {
        assert_eq!(DeliveryCurve::default_for(ServiceKind::Dr).max_delivery_time_s(), 10.0);
        assert_eq!(DeliveryCurve::default_for(ServiceKind::Dm).max_delivery_time_s(), 1.0);
        assert_eq!(DeliveryCurve::default_for(ServiceKind::Dc).max_delivery_time_s(), 1.0);
    }

    #[test]
    fn rejects_malformed_knot_lists() {
        let k = |d: f64, f: f64| CurveKnot {
            deviation_hz: d,
            fraction: f,
        };
        // Unordered.
        assert!(matches!(
            DeliveryCurve::new(ServiceKind::Dm, vec![k(0.1, 1.0), k(-0.1, -1.0)]),
            Err(CurveError::UnorderedKnots { .. })
        ));
        // Increasing fraction.
        assert!(matches!(
            DeliveryCurve::new(
                ServiceKind::Dm,
                vec![k(-0.2, 1.0), k(-0.1, 0.0), k(0.0, 0.2), k(0.2, -1.0)]
            ),
            Err(CurveError::IncreasingFraction { .. })
        ));
        // No saturation at the extremes.
        assert!(matches!(
            DeliveryCurve::new(
                ServiceKind::Dm,
                vec![k(-0.2, 0.9), k(-0.015, 0.0), k(0.015, 0.0), k(0.2, -1.0)]
            ),
            Err(CurveError::MissingSaturation)
        ));
        // Nonzero at nominal (asymmetric curve with no dead-band).
        assert!(matches!(
            DeliveryCurve::new(ServiceKind::Dm, vec![k(-0.2, 1.0), k(0.1, -1.0)]),
            Err(CurveError::NonzeroAtNominal(_))
        ));
    }
}
