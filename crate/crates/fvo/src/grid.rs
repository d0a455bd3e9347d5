//! Multi-bus swing-equation exosystem.
//!
//! Produces the center-of-inertia deviation signal, its rate, and its
//! acceleration that drive the controllers, closed through the delivered
//! asset power. Buses with inertia follow the swing equation in per-unit,
//!
//! ```text
//!     δ̇_k  = ω* Δω_k
//!     2H_k Δω̇_k = -(D_k Δω_k + P̂_k + Σ_l P_kl)
//! ```
//!
//! with net injection P̂ = load - generation - assets and line flows
//! P_kl = V_k V_l |Y_kl| cos(δ_k - δ_l - φ_kl) at constant nominal voltage
//! magnitudes. Zero-inertia buses are treated algebraically through their
//! damping (structure-preserving load model). A single PI regulator on the
//! center-of-inertia deviation plays the role of AGC, distributing its output
//! to inertial buses by inertia-proportional participation factors.
//!
//! Integration is fixed-step classical Runge-Kutta, sharing the controller's
//! millisecond grid; asset powers are held constant across a step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::hash_uniform;

/// Time-indexed load profile; all variants are deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadSignal {
    Constant { level_pu: f64 },
    Step { t0_s: f64, magnitude_pu: f64 },
    /// Piecewise-linear interpolation between seeded uniform targets in
    /// ±band, redrawn at the given rate. The first target is zero so runs
    /// start at equilibrium.
    BoundedNoise {
        seed: u64,
        band_pu: f64,
        bandwidth_hz: f64,
    },
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("bounded noise requires finite positive band, got {0}")]
    UnboundedNoise(f64),
    #[error("bounded noise requires positive bandwidth, got {0}")]
    BadBandwidth(f64),
    #[error("bus {0}: inertia and damping cannot both be zero")]
    DeadBus(usize),
    #[error("bus {0}: negative inertia or damping")]
    NegativeParameter(usize),
    #[error("line {from}-{to}: admittance magnitude must be positive")]
    ZeroAdmittance { from: usize, to: usize },
    #[error("line {from}-{to}: phase {phase} outside (-pi, pi]")]
    BadPhase { from: usize, to: usize, phase: f64 },
    #[error("line {from}-{to}: unknown bus")]
    UnknownBus { from: usize, to: usize },
    #[error("grid graph is not connected")]
    Disconnected,
    #[error("no bus carries inertia")]
    NoInertia,
    #[error("bus {bus} diverged at t = {t_s:.3} s: |deviation| = {deviation_hz:.3} Hz")]
    Diverged {
        bus: usize,
        t_s: f64,
        deviation_hz: f64,
    },
    #[error("non-finite state at t = {0:.3} s")]
    NonFinite(f64),
}

impl LoadSignal {
    pub fn validate(&self) -> Result<(), GridError> {
        match *self {
            LoadSignal::Constant { .. } | LoadSignal::Step { .. } => Ok(()),
            LoadSignal::BoundedNoise {
                band_pu,
                bandwidth_hz,
                ..
            } => {
                if !band_pu.is_finite() || band_pu <= 0.0 {
                    return Err(GridError::UnboundedNoise(band_pu));
                }
                if !bandwidth_hz.is_finite() || bandwidth_hz <= 0.0 {
                    return Err(GridError::BadBandwidth(bandwidth_hz));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, t_s: f64) -> f64 {
        match *self {
            LoadSignal::Constant { level_pu } => level_pu,
            LoadSignal::Step { t0_s, magnitude_pu } => {
                if t_s >= t0_s {
                    magnitude_pu
                } else {
                    0.0
                }
            }
            LoadSignal::BoundedNoise {
                seed,
                band_pu,
                bandwidth_hz,
            } => {
                let pos = (t_s * bandwidth_hz).max(0.0);
                let k = pos.floor();
                let frac = pos - k;
                let target = |idx: f64| -> f64 {
                    if idx < 1.0 {
                        0.0
                    } else {
                        band_pu * (2.0 * hash_uniform(seed, idx as u64) - 1.0)
                    }
                };
                (1.0 - frac) * target(k) + frac * target(k + 1.0)
            }
        }
    }
}

/// Per-bus parameters. Inertia in seconds on the system base, damping in
/// per-unit power per per-unit frequency, schedules in per-unit power.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusParams {
    pub inertia_h_s: f64,
    pub damping_d_pu: f64,
    #[serde(default)]
    pub p_gen_pu: f64,
    #[serde(default)]
    pub p_load_pu: f64,
}

/// Line between two buses: admittance magnitude (pu) and phase (rad).
/// An ideal lossless line has phase π/2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineParams {
    pub from: usize,
    pub to: usize,
    pub y_mag_pu: f64,
    pub y_phase_rad: f64,
}

/// PI secondary regulation on the center-of-inertia deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgcParams {
    pub enabled: bool,
    /// Proportional gain, pu power per pu frequency deviation.
    pub kp: f64,
    /// Integral gain, pu power per pu frequency-seconds.
    pub ki: f64,
}

impl Default for AgcParams {
    fn default() -> Self {
        Self {
            enabled: true,
            kp: 90.0,
            ki: 15.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridModel {
    pub buses: Vec<BusParams>,
    pub lines: Vec<LineParams>,
    pub agc: AgcParams,
    pub nominal_frequency_hz: f64,
    pub base_mva: f64,
    /// Divergence threshold on any bus deviation, Hz.
    pub stability_band_hz: f64,
    /// Extra load signals attached to buses (events).
    #[serde(default)]
    pub load_events: Vec<(usize, LoadSignal)>,
}

/// Integrator state: phase angles for every bus, frequency deviations for
/// inertial buses (zero-inertia buses are algebraic), and the AGC integral.
#[derive(Debug, Clone)]
pub struct GridState {
    pub delta_rad: Vec<f64>,
    /// Per-bus frequency deviation in pu; entries for algebraic buses hold
    /// the last evaluated value.
    pub omega_dev_pu: Vec<f64>,
    pub agc_integral: f64,
}

/// Exogenous signal handed to the controllers.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct FrequencyMeasurement {
    pub deviation_hz: f64,
    pub rate_hzps: f64,
    pub acc_hzps2: f64,
    pub timestamp_s: f64,
}

/// Optional seeded Gaussian corruption of the exact measurement.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeasurementNoise {
    pub seed: u64,
    pub deviation_std_hz: f64,
    pub rate_std_hzps: f64,
}

impl MeasurementNoise {
    pub fn apply(&self, meas: &mut FrequencyMeasurement, step_index: u64) {
        let gauss = |stream: u64| -> f64 {
            let u1 = hash_uniform(self.seed ^ stream, step_index).max(f64::MIN_POSITIVE);
            let u2 = hash_uniform(self.seed ^ stream, step_index.wrapping_add(1) << 1);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        meas.deviation_hz += self.deviation_std_hz * gauss(0x6E01);
        meas.rate_hzps += self.rate_std_hzps * gauss(0x6E02);
    }
}

impl GridModel {
    pub fn validate(&self) -> Result<(), GridError> {
        let n = self.buses.len();
        let mut has_inertia = false;
        for (k, bus) in self.buses.iter().enumerate() {
            if bus.inertia_h_s < 0.0 || bus.damping_d_pu < 0.0 {
                return Err(GridError::NegativeParameter(k));
            }
            if bus.inertia_h_s == 0.0 && bus.damping_d_pu == 0.0 {
                return Err(GridError::DeadBus(k));
            }
            has_inertia |= bus.inertia_h_s > 0.0;
        }
        if !has_inertia {
            return Err(GridError::NoInertia);
        }
        for line in &self.lines {
            if line.from >= n || line.to >= n {
                return Err(GridError::UnknownBus {
                    from: line.from,
                    to: line.to,
                });
            }
            if line.y_mag_pu <= 0.0 {
                return Err(GridError::ZeroAdmittance {
                    from: line.from,
                    to: line.to,
                });
            }
            if line.y_phase_rad <= -std::f64::consts::PI
                || line.y_phase_rad > std::f64::consts::PI
            {
                return Err(GridError::BadPhase {
                    from: line.from,
                    to: line.to,
                    phase: line.y_phase_rad,
                });
            }
        }
        for (bus, signal) in &self.load_events {
            if *bus >= n {
                return Err(GridError::UnknownBus {
                    from: *bus,
                    to: *bus,
                });
            }
            signal.validate()?;
        }
        if n > 1 {
            // Union-find connectivity over the line list.
            let mut parent: Vec<usize> = (0..n).collect();
            fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
                while parent[i] != i {
                    parent[i] = parent[parent[i]];
                    i = parent[i];
                }
                i
            }
            for line in &self.lines {
                let (a, b) = (find(&mut parent, line.from), find(&mut parent, line.to));
                parent[a] = b;
            }
            let root = find(&mut parent, 0);
            for k in 1..n {
                if find(&mut parent, k) != root {
                    return Err(GridError::Disconnected);
                }
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> GridState {
        GridState {
            delta_rad: vec![0.0; self.buses.len()],
            omega_dev_pu: vec![0.0; self.buses.len()],
            agc_integral: 0.0,
        }
    }

    pub fn inertia_sum(&self) -> f64 {
        self.buses.iter().map(|b| b.inertia_h_s).sum()
    }

    fn load_pu(&self, bus: usize, t_s: f64) -> f64 {
        let mut load = self.buses[bus].p_load_pu;
        for (k, signal) in &self.load_events {
            if *k == bus {
                load += signal.value(t_s);
            }
        }
        load
    }

    /// Line flows out of each bus at the given angles, nominal voltages.
    fn flows(&self, delta: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for line in &self.lines {
            let forward = line.y_mag_pu
                * (delta[line.from] - delta[line.to] - line.y_phase_rad).cos();
            let backward = line.y_mag_pu
                * (delta[line.to] - delta[line.from] - line.y_phase_rad).cos();
            out[line.from] += forward;
            out[line.to] += backward;
        }
    }

    /// AGC output in pu: positive raises generation.
    fn agc_output(&self, coi_dev_pu: f64, integral: f64) -> f64 {
        if self.agc.enabled {
            self.agc.kp * (-coi_dev_pu) + self.agc.ki * integral
        } else {
            0.0
        }
    }
}

/// Scratch buffers reused across steps.
#[derive(Debug, Default)]
struct Scratch {
    flows: Vec<f64>,
    k1: Derivs,
    k2: Derivs,
    k3: Derivs,
    k4: Derivs,
    mid: GridStateVec,
}

#[derive(Debug, Default, Clone)]
struct Derivs {
    d_delta: Vec<f64>,
    d_omega: Vec<f64>,
    d_integral: f64,
}

#[derive(Debug, Default, Clone)]
struct GridStateVec {
    delta: Vec<f64>,
    omega: Vec<f64>,
    integral: f64,
}

/// Fixed-step integrator owning the scratch space for one grid instance.
#[derive(Debug)]
pub struct GridSimulator {
    model: GridModel,
    scratch: Scratch,
    h_sum: f64,
}

impl GridSimulator {
    pub fn new(model: GridModel) -> Result<Self, GridError> {
        model.validate()?;
        let h_sum = model.inertia_sum();
        Ok(Self {
            model,
            scratch: Scratch::default(),
            h_sum,
        })
    }

    pub fn model(&self) -> &GridModel {
        &self.model
    }

    /// Evaluates time derivatives; algebraic buses get their deviation
    /// written into `omega_out` alongside a zero derivative.
    fn derivs(
        &mut self,
        t_s: f64,
        delta: &[f64],
        omega: &[f64],
        integral: f64,
        asset_power_pu: &[f64],
        d: &mut Derivs,
        mut omega_out: Option<&mut [f64]>,
    ) {
        let n = self.model.buses.len();
        d.d_delta.resize(n, 0.0);
        d.d_omega.resize(n, 0.0);
        self.scratch.flows.resize(n, 0.0);
        let mut flows = std::mem::take(&mut self.scratch.flows);
        self.model.flows(delta, &mut flows);

        // COI over inertial buses for the AGC loop.
        let coi: f64 =
            self.model
                .buses
                .iter()
                .zip(omega)
                .map(|(b, w)| b.inertia_h_s * w)
                .sum::<f64>()
                / self.h_sum;
        let agc = self.model.agc_output(coi, integral);

        let omega_star = std::f64::consts::TAU * self.model.nominal_frequency_hz;
        for k in 0..n {
            let bus = &self.model.buses[k];
            let participation = bus.inertia_h_s / self.h_sum;
            let p_hat = self.model.load_pu(k, t_s)
                - bus.p_gen_pu
                - participation * agc
                - asset_power_pu[k];
            if bus.inertia_h_s > 0.0 {
                let w = omega[k];
                d.d_delta[k] = omega_star * w;
                d.d_omega[k] =
                    -(bus.damping_d_pu * w + p_hat + flows[k]) / (2.0 * bus.inertia_h_s);
            } else {
                // Algebraic: damping balances injection instantaneously.
                let w = -(p_hat + flows[k]) / bus.damping_d_pu;
                d.d_delta[k] = omega_star * w;
                d.d_omega[k] = 0.0;
                if let Some(out) = omega_out.as_deref_mut() {
                    out[k] = w;
                }
            }
        }
        d.d_integral = -coi;
        self.scratch.flows = flows;
    }

    /// Advances one step of length dt; asset powers (pu, per bus) are held
    /// constant across the step.
    pub fn step(
        &mut self,
        state: &mut GridState,
        asset_power_pu: &[f64],
        t_s: f64,
        dt_s: f64,
    ) -> Result<(), GridError> {
        assert!(dt_s > 0.0, "step size must be positive");
        assert_eq!(asset_power_pu.len(), self.model.buses.len());
        let n = self.model.buses.len();

        let mut k1 = std::mem::take(&mut self.scratch.k1);
        let mut k2 = std::mem::take(&mut self.scratch.k2);
        let mut k3 = std::mem::take(&mut self.scratch.k3);
        let mut k4 = std::mem::take(&mut self.scratch.k4);
        let mut mid = std::mem::take(&mut self.scratch.mid);
        mid.delta.resize(n, 0.0);
        mid.omega.resize(n, 0.0);

        self.derivs(
            t_s,
            &state.delta_rad,
            &state.omega_dev_pu,
            state.agc_integral,
            asset_power_pu,
            &mut k1,
            None,
        );
        let advance = |mid: &mut GridStateVec, d: &Derivs, h: f64, state: &GridState| {
            for k in 0..n {
                mid.delta[k] = state.delta_rad[k] + h * d.d_delta[k];
                mid.omega[k] = state.omega_dev_pu[k] + h * d.d_omega[k];
            }
            mid.integral = state.agc_integral + h * d.d_integral;
        };
        advance(&mut mid, &k1, 0.5 * dt_s, state);
        self.derivs(
            t_s + 0.5 * dt_s,
            &mid.delta,
            &mid.omega,
            mid.integral,
            asset_power_pu,
            &mut k2,
            None,
        );
        advance(&mut mid, &k2, 0.5 * dt_s, state);
        self.derivs(
            t_s + 0.5 * dt_s,
            &mid.delta,
            &mid.omega,
            mid.integral,
            asset_power_pu,
            &mut k3,
            None,
        );
        advance(&mut mid, &k3, dt_s, state);
        self.derivs(
            t_s + dt_s,
            &mid.delta,
            &mid.omega,
            mid.integral,
            asset_power_pu,
            &mut k4,
            None,
        );

        for k in 0..n {
            state.delta_rad[k] += dt_s / 6.0
                * (k1.d_delta[k] + 2.0 * k2.d_delta[k] + 2.0 * k3.d_delta[k] + k4.d_delta[k]);
            state.omega_dev_pu[k] += dt_s / 6.0
                * (k1.d_omega[k] + 2.0 * k2.d_omega[k] + 2.0 * k3.d_omega[k] + k4.d_omega[k]);
        }
        state.agc_integral += dt_s / 6.0
            * (k1.d_integral + 2.0 * k2.d_integral + 2.0 * k3.d_integral + k4.d_integral);

        // Refresh algebraic deviations at the end-of-step state.
        {
            let mut omega = state.omega_dev_pu.clone();
            self.derivs(
                t_s + dt_s,
                &state.delta_rad,
                &state.omega_dev_pu,
                state.agc_integral,
                asset_power_pu,
                &mut k1,
                Some(&mut omega),
            );
            state.omega_dev_pu = omega;
        }

        self.scratch.k1 = k1;
        self.scratch.k2 = k2;
        self.scratch.k3 = k3;
        self.scratch.k4 = k4;
        self.scratch.mid = mid;

        let f_nom = self.model.nominal_frequency_hz;
        for k in 0..n {
            let dev_hz = state.omega_dev_pu[k] * f_nom;
            if !dev_hz.is_finite() || !state.delta_rad[k].is_finite() {
                return Err(GridError::NonFinite(t_s + dt_s));
            }
            if dev_hz.abs() > self.model.stability_band_hz {
                return Err(GridError::Diverged {
                    bus: k,
                    t_s: t_s + dt_s,
                    deviation_hz: dev_hz,
                });
            }
        }
        Ok(())
    }

    /// Center-of-inertia measurement at the current state. Deviation and
    /// rate are exact from the model; acceleration is a one-step backward
    /// difference of the exact rate, optionally low-pass filtered by the
    /// caller.
    pub fn coi_measurement(
        &mut self,
        state: &GridState,
        prev: Option<&FrequencyMeasurement>,
        asset_power_pu: &[f64],
        t_s: f64,
        dt_s: f64,
    ) -> Result<FrequencyMeasurement, GridError> {
        if self.h_sum <= 0.0 {
            return Err(GridError::NoInertia);
        }
        let f_nom = self.model.nominal_frequency_hz;
        let coi_pu: f64 = self
            .model
            .buses
            .iter()
            .zip(&state.omega_dev_pu)
            .map(|(b, w)| b.inertia_h_s * w)
            .sum::<f64>()
            / self.h_sum;

        let mut d = Derivs::default();
        self.derivs(
            t_s,
            &state.delta_rad,
            &state.omega_dev_pu,
            state.agc_integral,
            asset_power_pu,
            &mut d,
            None,
        );
        let coi_rate_pu: f64 = self
            .model
            .buses
            .iter()
            .zip(&d.d_omega)
            .map(|(b, dw)| b.inertia_h_s * dw)
            .sum::<f64>()
            / self.h_sum;

        let rate_hzps = coi_rate_pu * f_nom;
        let acc = match prev {
            Some(p) => (rate_hzps - p.rate_hzps) / dt_s,
            None => 0.0,
        };
        Ok(FrequencyMeasurement {
            deviation_hz: coi_pu * f_nom,
            rate_hzps,
            acc_hzps2: acc,
            timestamp_s: t_s,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_bus(h: f64, d: f64) -> GridModel {
        GridModel {
            buses: vec![BusParams {
                inertia_h_s: h,
                damping_d_pu: d,
                p_gen_pu: 0.0,
                p_load_pu: 0.0,
            }],
            lines: vec![],
            agc: AgcParams {
                enabled: false,
                kp: 0.0,
                ki: 0.0,
            },
            nominal_frequency_hz: 50.0,
            base_mva: 100.0,
            stability_band_hz: 500.0,
            load_events: vec![],
        }
    }

    #[test]
    fn constant_injection_settles_at_damping_equilibrium() {
        let mut model = single_bus(5.0, 1.0);
        model.load_events.push((
            0,
            LoadSignal::Constant { level_pu: 1.0 },
        ));
        let mut sim = GridSimulator::new(model).unwrap();
        let mut state = sim.model().initial_state();
        let dt = 1e-3;
        for i in 0..200_000 {
            sim.step(&mut state, &[0.0], i as f64 * dt, dt).unwrap();
        }
        // Steady state of the swing equation: deviation = -P/D = -1 pu.
        assert!((state.omega_dev_pu[0] - (-1.0)).abs() < 1e-6);
    }

    #[test]
    fn zero_injection_is_a_fixed_point() {
        let model = GridModel {
            buses: vec![
                BusParams {
                    inertia_h_s: 5.0,
                    damping_d_pu: 1.0,
                    p_gen_pu: 0.3,
                    p_load_pu: 0.3,
                },
                BusParams {
                    inertia_h_s: 3.0,
                    damping_d_pu: 1.0,
                    p_gen_pu: 0.2,
                    p_load_pu: 0.2,
                },
            ],
            lines: vec![LineParams {
                from: 0,
                to: 1,
                y_mag_pu: 10.0,
                y_phase_rad: std::f64::consts::FRAC_PI_2,
            }],
            agc: AgcParams::default(),
            nominal_frequency_hz: 50.0,
            base_mva: 100.0,
            stability_band_hz: 5.0,
            load_events: vec![],
        };
        let mut sim = GridSimulator::new(model).unwrap();
        let mut state = sim.model().initial_state();
        for i in 0..1000 {
            sim.step(&mut state, &[0.0, 0.0], i as f64 * 1e-3, 1e-3)
                .unwrap();
        }
        assert!(state.omega_dev_pu.iter().all(|w| w.abs() < 1e-14));
        assert!(state.delta_rad.iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn coi_is_inertia_weighted_average() {
        let model = GridModel {
            buses: vec![
                BusParams {
                    inertia_h_s: 5.0,
                    damping_d_pu: 1.0,
                    p_gen_pu: 0.0,
                    p_load_pu: 0.0,
                },
                BusParams {
                    inertia_h_s: 10.0,
                    damping_d_pu: 1.0,
                    p_gen_pu: 0.0,
                    p_load_pu: 0.0,
                },
            ],
            lines: vec![LineParams {
                from: 0,
                to: 1,
                y_mag_pu: 10.0,
                y_phase_rad: std::f64::consts::FRAC_PI_2,
            }],
            agc: AgcParams::default(),
            nominal_frequency_hz: 50.0,
            base_mva: 100.0,
            stability_band_hz: 5.0,
            load_events: vec![],
        };
        let mut sim = GridSimulator::new(model).unwrap();
        let mut state = sim.model().initial_state();
        // Bus frequencies 50.1 and 49.9 Hz.
        state.omega_dev_pu[0] = 0.1 / 50.0;
        state.omega_dev_pu[1] = -0.1 / 50.0;
        let meas = sim
            .coi_measurement(&state, None, &[0.0, 0.0], 0.0, 1e-3)
            .unwrap();
        assert!((meas.deviation_hz - (-1.0 / 30.0)).abs() < 1e-12);
    }

    #[test]
    fn single_bus_coi_collapses_to_bus_deviation() {
        let mut sim = GridSimulator::new(single_bus(4.0, 1.0)).unwrap();
        let mut state = sim.model().initial_state();
        state.omega_dev_pu[0] = -0.004;
        let meas = sim.coi_measurement(&state, None, &[0.0], 0.0, 1e-3).unwrap();
        assert_eq!(meas.deviation_hz, -0.004 * 50.0);
    }

    #[test]
    fn all_nominal_gives_zero_measurement() {
        let mut sim = GridSimulator::new(single_bus(4.0, 1.0)).unwrap();
        let state = sim.model().initial_state();
        let meas = sim.coi_measurement(&state, None, &[0.0], 0.0, 1e-3).unwrap();
        assert_eq!(meas.deviation_hz, 0.0);
        assert_eq!(meas.rate_hzps, 0.0);
    }

    #[test]
    fn integrator_error_shrinks_at_fourth_order() {
        // Smooth two-bus oscillation from an initial angle offset.
        let make = || GridModel {
            buses: vec![
                BusParams {
                    inertia_h_s: 4.0,
                    damping_d_pu: 0.5,
                    p_gen_pu: 0.0,
                    p_load_pu: 0.0,
                },
                BusParams {
                    inertia_h_s: 6.0,
                    damping_d_pu: 0.5,
                    p_gen_pu: 0.0,
                    p_load_pu: 0.0,
                },
            ],
            lines: vec![LineParams {
                from: 0,
                to: 1,
                y_mag_pu: 5.0,
                y_phase_rad: std::f64::consts::FRAC_PI_2,
            }],
            agc: AgcParams {
                enabled: false,
                kp: 0.0,
                ki: 0.0,
            },
            nominal_frequency_hz: 50.0,
            base_mva: 100.0,
            stability_band_hz: 50.0,
            load_events: vec![],
        };
        let run = |dt: f64| -> f64 {
            let mut sim = GridSimulator::new(make()).unwrap();
            let mut state = sim.model().initial_state();
            state.delta_rad[0] = 0.2;
            let steps = (1.0 / dt) as usize;
            for i in 0..steps {
                sim.step(&mut state, &[0.0, 0.0], i as f64 * dt, dt).unwrap();
            }
            sim.coi_measurement(&state, None, &[0.0, 0.0], 1.0, dt)
                .unwrap()
                .deviation_hz
        };
        let reference = run(1.25e-4);
        let coarse = (run(2e-3) - reference).abs();
        let fine = (run(1e-3) - reference).abs();
        let ratio = coarse / fine.max(1e-18);
        assert!(
            (8.0..40.0).contains(&ratio),
            "expected ~16x error reduction, got {ratio} (coarse {coarse}, fine {fine})"
        );
    }

    #[test]
    fn steady_state_balances_damping_against_injection() {
        // Two buses, AGC off, constant extra load: at steady state the
        // damping-weighted deviations absorb the net injection.
        let mut model = GridModel {
            buses: vec![
                BusParams {
                    inertia_h_s: 5.0,
                    damping_d_pu: 1.5,
                    p_gen_pu: 0.0,
                    p_load_pu: 0.0,
                },
                BusParams {
                    inertia_h_s: 0.0,
                    damping_d_pu: 1.0,
                    p_gen_pu: 0.0,
                    p_load_pu: 0.0,
                },
            ],
            lines: vec![LineParams {
                from: 0,
                to: 1,
                y_mag_pu: 8.0,
                y_phase_rad: std::f64::consts::FRAC_PI_2,
            }],
            agc: AgcParams {
                enabled: false,
                kp: 0.0,
                ki: 0.0,
            },
            nominal_frequency_hz: 50.0,
            base_mva: 100.0,
            stability_band_hz: 50.0,
            load_events: vec![],
        };
        model.load_events.push((
            1,
            LoadSignal::Constant { level_pu: 0.5 },
        ));
        let mut sim = GridSimulator::new(model).unwrap();
        let mut state = sim.model().initial_state();
        for i in 0..100_000 {
            sim.step(&mut state, &[0.0, 0.0], i as f64 * 1e-3, 1e-3)
                .unwrap();
        }
        let balance: f64 = sim
            .model()
            .buses
            .iter()
            .zip(&state.omega_dev_pu)
            .map(|(b, w)| b.damping_d_pu * w)
            .sum::<f64>()
            + 0.5;
        assert!(balance.abs() < 1e-6, "residual {balance}");
    }

    #[test]
    fn agc_restores_a_step_within_a_minute() {
        let mut model = single_bus(5.0, 1.0);
        model.agc = AgcParams::default();
        model
            .load_events
            .push((0, LoadSignal::Step { t0_s: 1.0, magnitude_pu: 1.0 }));
        let mut sim = GridSimulator::new(model).unwrap();
        let mut state = sim.model().initial_state();
        let dt = 1e-3;
        let mut worst_after_restore: f64 = 0.0;
        for i in 0..61_000 {
            let t = i as f64 * dt;
            sim.step(&mut state, &[0.0], t, dt).unwrap();
            if t > 60.0 {
                worst_after_restore = worst_after_restore.max(state.omega_dev_pu[0].abs());
            }
        }
        assert!(
            worst_after_restore * 50.0 < 0.02,
            "deviation still {} Hz after a minute",
            worst_after_restore * 50.0
        );
    }

    #[test]
    fn divergence_is_detected() {
        let mut model = single_bus(0.05, 0.01);
        model.stability_band_hz = 0.5;
        model
            .load_events
            .push((0, LoadSignal::Step { t0_s: 0.0, magnitude_pu: 5.0 }));
        let mut sim = GridSimulator::new(model).unwrap();
        let mut state = sim.model().initial_state();
        let mut diverged = false;
        for i in 0..10_000 {
            if let Err(GridError::Diverged { .. }) =
                sim.step(&mut state, &[0.0], i as f64 * 1e-3, 1e-3)
            {
                diverged = true;
                break;
            }
        }
        assert!(diverged);
    }

    #[test]
    fn noise_signal_is_seeded_and_bounded() {
        let sig = LoadSignal::BoundedNoise {
            seed: 7,
            band_pu: 0.3,
            bandwidth_hz: 0.5,
        };
        sig.validate().unwrap();
        let again = LoadSignal::BoundedNoise {
            seed: 7,
            band_pu: 0.3,
            bandwidth_hz: 0.5,
        };
        let mut t = 0.0;
        while t < 50.0 {
            assert_eq!(sig.value(t), again.value(t));
            assert!(sig.value(t).abs() <= 0.3);
            t += 0.37;
        }
        // Different seed, different trace.
        let other = LoadSignal::BoundedNoise {
            seed: 8,
            band_pu: 0.3,
            bandwidth_hz: 0.5,
        };
        assert!((0..100).any(|i| other.value(i as f64) != sig.value(i as f64)));
    }

    #[test]
    fn rejects_bad_noise_parameters() {
        assert!(LoadSignal::BoundedNoise {
            seed: 1,
            band_pu: f64::INFINITY,
            bandwidth_hz: 0.5
        }
        .validate()
        .is_err());
        assert!(LoadSignal::BoundedNoise {
            seed: 1,
            band_pu: 0.3,
            bandwidth_hz: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn step_signal_switches_at_event_time() {
        let sig = LoadSignal::Step {
            t0_s: 20.0,
            magnitude_pu: 1.0,
        };
        assert_eq!(sig.value(19.999), 0.0);
        assert_eq!(sig.value(20.0), 1.0);
        assert_eq!(sig.value(35.0), 1.0);
        assert_eq!(LoadSignal::Constant { level_pu: 0.0 }.value(12.0), 0.0);
    }

    #[test]
    fn validation_catches_structural_errors() {
        let mut model = single_bus(5.0, 1.0);
        model.buses.push(BusParams {
            inertia_h_s: 1.0,
            damping_d_pu: 0.0,
            p_gen_pu: 0.0,
            p_load_pu: 0.0,
        });
        // Two buses, no line: disconnected.
        assert!(matches!(model.validate(), Err(GridError::Disconnected)));
        model.lines.push(LineParams {
            from: 0,
            to: 1,
            y_mag_pu: 0.0,
            y_phase_rad: std::f64::consts::FRAC_PI_2,
        });
        assert!(matches!(
            model.validate(),
            Err(GridError::ZeroAdmittance { .. })
        ));
        model.lines[0].y_mag_pu = 5.0;
        model.lines[0].y_phase_rad = 4.0;
        assert!(matches!(model.validate(), Err(GridError::BadPhase { .. })));
        model.lines[0].y_phase_rad = std::f64::consts::FRAC_PI_2;
        model.validate().unwrap();
    }
}
