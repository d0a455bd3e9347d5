//! The co-simulation loop: grid, response units, and oracle on a shared
//! millisecond grid.
//!
//! Each interval: measure the center-of-inertia signal, step every response
//! unit, feed the delivered power back into the grid, and integrate the grid
//! one step. The exact per-instant solver runs at a configurable cadence and
//! its solutions are frozen into the trace alongside the controller state.
//! Runs are deterministic for a fixed scenario and seed; controller compute
//! time is measured but kept out of the trace.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fvo::controller::{Aru, ControllerError};
use fvo::curves::DeliveryCurve;
use fvo::distributed::{CommGraph, DistributedAru, GraphError};
use fvo::grid::{FrequencyMeasurement, GridError, GridSimulator};
use fvo::oracle::{solve_instant, trajectory_rates, InstantAsset, InstantProblem, OracleError};

use crate::metrics::{self, RunMetrics};
use crate::scenario::{Mode, ResolvedAru, Scenario, ScenarioError};
use crate::trace::{AruRow, TraceWriter};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("controller '{aru}' aborted: {source} (last valid record {last_record})")]
    Controller {
        aru: String,
        source: ControllerError,
        last_record: usize,
    },
    #[error("grid aborted: {source} (last valid record {last_record})")]
    Grid {
        source: GridError,
        last_record: usize,
    },
    #[error("oracle infeasible for '{aru}' at t = {t_s:.3} s: {source}")]
    Oracle {
        aru: String,
        t_s: f64,
        source: OracleError,
    },
    #[error("communication graph for '{aru}': {source}")]
    Graph { aru: String, source: GraphError },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invariant violated for '{aru}' at t = {t_s:.3} s: {detail}")]
    InvariantViolated {
        aru: String,
        t_s: f64,
        detail: String,
    },
}

impl RunError {
    /// Process exit code category: validation 2, divergence 3, other 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(_) | RunError::Graph { .. } => 2,
            RunError::Grid { .. } | RunError::Controller { .. } => 3,
            RunError::Oracle { .. } | RunError::InvariantViolated { .. } => 3,
            RunError::Io(_) => 1,
        }
    }
}

/// One exact solution frozen at a sampled interval.
#[derive(Debug, Clone)]
pub struct OracleSample {
    pub step: usize,
    pub x_star: Vec<f64>,
    pub lambda_star: f64,
    pub cost_star: f64,
    /// All stationarity errors inside the converged band at this sample.
    pub gate_open: bool,
    /// Largest |alpha_i - dx*_i/dt| when the gate is open.
    pub alpha_err: f64,
}

/// Everything recorded for one response unit over a run.
#[derive(Debug)]
pub struct AruRunData {
    pub spec: ResolvedAru,
    pub oracle_assets: Vec<InstantAsset>,
    pub required: Vec<f64>,
    pub mismatch: Vec<f64>,
    /// Step-major delivered quantities, stride = asset count.
    pub x_flat: Vec<f64>,
    pub n_assets: usize,
    pub oracle: Vec<OracleSample>,
    pub diag: fvo::controller::StepDiagnostics,
    pub compute_ns: u128,
    pub controller_steps: u64,
}

impl AruRunData {
    pub fn x_at(&self, step: usize) -> &[f64] {
        &self.x_flat[step * self.n_assets..(step + 1) * self.n_assets]
    }

    pub fn cost_at(&self, step: usize, deviation_hz: f64) -> f64 {
        self.x_at(step)
            .iter()
            .zip(&self.oracle_assets)
            .map(|(x, a)| (a.a * x + a.b + a.c * deviation_hz) * x)
            .sum()
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub scenario: Scenario,
    pub dev_hz: Vec<f64>,
    pub arus: Vec<AruRunData>,
    pub metrics: Vec<RunMetrics>,
    pub warnings: Vec<String>,
    pub trace_path: Option<PathBuf>,
    pub manifest_path: Option<PathBuf>,
}

enum Unit {
    Central(Aru),
    Dist(DistributedAru),
}

impl Unit {
    fn states(&self) -> &[fvo::controller::AssetState] {
        match self {
            Unit::Central(a) => &a.states,
            Unit::Dist(d) => &d.states,
        }
    }

    fn lambda(&self) -> f64 {
        match self {
            Unit::Central(a) => a.multiplier.lambda,
            Unit::Dist(d) => {
                d.nodes.iter().map(|n| n.lambda).sum::<f64>() / d.nodes.len() as f64
            }
        }
    }

    fn diag(&self) -> &fvo::controller::StepDiagnostics {
        match self {
            Unit::Central(a) => &a.diag,
            Unit::Dist(d) => &d.diag,
        }
    }

    fn alpha_prime(&self) -> Option<&[f64]> {
        match self {
            Unit::Central(a) => Some(a.last_alpha_prime()),
            // Local feedforward estimates are not aggregated for the trace.
            Unit::Dist(_) => None,
        }
    }
}

fn build_unit(spec: &ResolvedAru) -> Result<Unit, RunError> {
    let gains = spec.controller.controller_gains();
    let params = spec.asset_params();
    let lambda0 = spec.controller.lambda0;
    let sigma0 = spec.controller.sigma0;
    match spec.mode {
        Mode::Centralized => {
            let aru = Aru::new(
                spec.algorithm,
                spec.plant,
                params,
                gains,
                lambda0,
                sigma0,
            )
            .map_err(|source| RunError::Controller {
                aru: spec.name.clone(),
                source,
                last_record: 0,
            })?;
            Ok(Unit::Central(aru))
        }
        Mode::Distributed => {
            let n = params.len();
            let graph = match spec.graph.as_str() {
                "ring" => CommGraph::ring(n),
                "complete" => CommGraph::complete(n),
                path => {
                    let text =
                        std::fs::read_to_string(path).map_err(RunError::Io)?;
                    let mut edges = Vec::new();
                    for line in text.lines() {
                        let line = line.trim();
                        if line.is_empty() || line.starts_with('#') {
                            continue;
                        }
                        let mut it = line.split(',').map(str::trim);
                        let a: usize = it.next().unwrap_or("").parse().unwrap_or(usize::MAX);
                        let b: usize = it.next().unwrap_or("").parse().unwrap_or(usize::MAX);
                        edges.push((a, b));
                    }
                    CommGraph::from_edges(n, &edges)
                }
            }
            .map_err(|source| RunError::Graph {
                aru: spec.name.clone(),
                source,
            })?;
            let unit = DistributedAru::new(
                spec.algorithm,
                spec.plant,
                params,
                gains,
                graph,
                spec.rounds_per_interval,
                lambda0,
                sigma0,
            )
            .map_err(|source| RunError::Controller {
                aru: spec.name.clone(),
                source,
                last_record: 0,
            })?;
            Ok(Unit::Dist(unit))
        }
    }
}

fn oracle_assets(spec: &ResolvedAru) -> Vec<InstantAsset> {
    spec.asset_params()
        .iter()
        .map(|p| {
            let b = p.deviation_box().expect("validated at load");
            InstantAsset {
                a: p.cost.a,
                b: p.cost.b,
                c: p.cost.c,
                lo: b.lo,
                hi: b.hi,
            }
        })
        .collect()
}

/// Executes a scenario. When `out_dir` is given, writes `trace.csv`,
/// `metrics.json`, and `manifest.toml` there.
pub fn run(
    scenario: &Scenario,
    warnings: Vec<String>,
    out_dir: Option<&Path>,
) -> Result<RunOutcome, RunError> {
    let dt = scenario.dt_s();
    let steps = scenario.steps();
    let mut grid = GridSimulator::new(scenario.grid_model()?)
        .map_err(|source| RunError::Grid {
            source,
            last_record: 0,
        })?;
    let mut grid_state = grid.model().initial_state();
    let base_mva = scenario.grid.base_mva;
    let n_buses = grid.model().buses.len();

    // Map 1-based bus ids to indexes once.
    let bus_index = |id: usize| -> usize {
        scenario
            .grid
            .bus
            .iter()
            .position(|b| b.id == id)
            .expect("asset buses validated at load")
    };

    let mut units = Vec::with_capacity(scenario.arus.len());
    let mut curves: Vec<DeliveryCurve> = Vec::with_capacity(scenario.arus.len());
    let mut asset_buses: Vec<Vec<usize>> = Vec::with_capacity(scenario.arus.len());
    let mut boxes: Vec<Vec<fvo::controller::BoxConstraint>> =
        Vec::with_capacity(scenario.arus.len());
    let mut data: Vec<AruRunData> = Vec::with_capacity(scenario.arus.len());
    for spec in &scenario.arus {
        for asset in &spec.assets {
            if !scenario.grid.bus.iter().any(|b| b.id == asset.bus) {
                return Err(RunError::Scenario(ScenarioError::Invalid {
                    path: format!("aru '{}'", spec.name),
                    message: format!("asset bus {} not in the grid", asset.bus),
                }));
            }
        }
        units.push(build_unit(spec)?);
        curves.push(spec.delivery_curve());
        asset_buses.push(spec.assets.iter().map(|a| bus_index(a.bus)).collect());
        boxes.push(
            spec.asset_params()
                .iter()
                .map(|p| p.deviation_box().expect("validated at load"))
                .collect(),
        );
        let n_assets = spec.assets.len();
        data.push(AruRunData {
            oracle_assets: oracle_assets(spec),
            spec: spec.clone(),
            required: Vec::with_capacity(steps),
            mismatch: Vec::with_capacity(steps),
            x_flat: Vec::with_capacity(steps * n_assets),
            n_assets,
            oracle: Vec::new(),
            diag: Default::default(),
            compute_ns: 0,
            controller_steps: 0,
        });
    }

    let mut writer = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let labels: Vec<(String, String, usize)> = scenario
                .arus
                .iter()
                .map(|s| {
                    (
                        s.name.clone(),
                        format!("{:?}", s.algorithm).to_lowercase(),
                        s.assets.len(),
                    )
                })
                .collect();
            Some(TraceWriter::create(&dir.join("trace.csv"), &labels)?)
        }
        None => None,
    };

    let mut dev_hz = Vec::with_capacity(steps);
    let mut applied_power_pu = vec![0.0; n_buses];
    let mut meas = FrequencyMeasurement::default();
    let mut raw_prev: Option<FrequencyMeasurement> = None;
    let mut acc_filtered = 0.0;
    let mut records = 0usize;

    let flush = |writer: Option<TraceWriter>| -> Result<(), RunError> {
        if let Some(w) = writer {
            w.finish()?;
        }
        Ok(())
    };

    for k in 0..steps {
        let t = k as f64 * dt;

        // Measurement refresh (decimation emulates slower telemetry).
        if k % scenario.measurement_decimation == 0 {
            let mut m = grid
                .coi_measurement(&grid_state, raw_prev.as_ref(), &applied_power_pu, t, dt)
                .map_err(|source| RunError::Grid {
                    source,
                    last_record: records,
                })?;
            raw_prev = Some(m);
            let alpha = scenario.grid.acc_filter_alpha;
            acc_filtered = alpha * m.acc_hzps2 + (1.0 - alpha) * acc_filtered;
            m.acc_hzps2 = acc_filtered;
            if let Some(noise) = &scenario.grid.measurement_noise {
                noise.apply(&mut m, k as u64);
            }
            meas = m;
            meas.timestamp_s = t;
        }
        dev_hz.push(meas.deviation_hz);

        let active = t >= scenario.controller_start_s - 1e-12;
        let oracle_due = k % scenario.oracle_sampling == 0;

        for (j, unit) in units.iter_mut().enumerate() {
            let curve = &curves[j];
            let c_agg = scenario.arus[j].service.c_agg_mw;
            let (required, mismatch) = if active {
                let started = Instant::now();
                let out = match unit {
                    Unit::Central(aru) => aru.step(&meas, curve, c_agg, dt),
                    Unit::Dist(d) => d.step(&meas, curve, c_agg, dt),
                }
                .map_err(|source| RunError::Controller {
                    aru: scenario.arus[j].name.clone(),
                    source,
                    last_record: records,
                })?;
                data[j].compute_ns += started.elapsed().as_nanos();
                data[j].controller_steps += 1;
                (out.required_mw, out.mismatch_mw)
            } else {
                let required = curve.evaluate(meas.deviation_hz) * c_agg;
                let sum_x: f64 = unit.states().iter().map(|s| s.x).sum();
                (required, sum_x - required)
            };
            let d = &mut data[j];
            d.required.push(required);
            d.mismatch.push(mismatch);
            for s in unit.states() {
                d.x_flat.push(s.x);
            }

            if oracle_due {
                let prob = InstantProblem {
                    assets: d.oracle_assets.clone(),
                    deviation_hz: meas.deviation_hz,
                    required_mw: required,
                };
                let sol = solve_instant(&prob).map_err(|source| RunError::Oracle {
                    aru: scenario.arus[j].name.clone(),
                    t_s: t,
                    source,
                })?;
                let cost_star: f64 = sol
                    .x
                    .iter()
                    .zip(&d.oracle_assets)
                    .map(|(x, a)| (a.a * x + a.b + a.c * meas.deviation_hz) * x)
                    .sum();
                let band = scenario.arus[j].controller.sig_tolerance_mw;
                let gate_open = active
                    && unit
                        .states()
                        .iter()
                        .all(|s| s.e.abs() <= band);
                let alpha_err = if gate_open {
                    match unit.alpha_prime() {
                        Some(alpha) => {
                            let slope = curve
                                .derivative(meas.deviation_hz, Some(meas.rate_hzps));
                            let (x_dot, _) = trajectory_rates(
                                &prob,
                                &sol,
                                meas.rate_hzps,
                                slope,
                                c_agg,
                            );
                            alpha
                                .iter()
                                .zip(&x_dot)
                                .map(|(a, r)| (a - r).abs())
                                .fold(0.0, f64::max)
                        }
                        None => 0.0,
                    }
                } else {
                    0.0
                };
                d.oracle.push(OracleSample {
                    step: k,
                    x_star: sol.x,
                    lambda_star: sol.lambda,
                    cost_star,
                    gate_open,
                    alpha_err,
                });
            }
        }

        // Trace row; recorded states are re-checked against their boxes
        // before they are written.
        if let Some(w) = writer.as_mut() {
            if k % scenario.trace_decimation == 0 {
                for (j, unit) in units.iter().enumerate() {
                    for (s, b) in unit.states().iter().zip(&boxes[j]) {
                        if b.violation(s.x) > 1e-9 || b.violation(s.r) > 1e-9 {
                            return Err(RunError::InvariantViolated {
                                aru: scenario.arus[j].name.clone(),
                                t_s: t,
                                detail: format!(
                                    "state ({}, {}) outside [{}, {}]",
                                    s.x, s.r, b.lo, b.hi
                                ),
                            });
                        }
                    }
                }
                let mut rows = Vec::with_capacity(units.len());
                let mut scratch: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<u8>, Vec<f64>)> =
                    Vec::with_capacity(units.len());
                for (j, unit) in units.iter().enumerate() {
                    let states = unit.states();
                    scratch.push((
                        states.iter().map(|s| s.x).collect(),
                        states.iter().map(|s| s.r).collect(),
                        states.iter().map(|s| s.u).collect(),
                        states.iter().map(|s| s.sigma).collect(),
                        states.iter().map(|s| s.e).collect(),
                    ));
                    let _ = j;
                }
                for (j, unit) in units.iter().enumerate() {
                    let d = &data[j];
                    let sample = d.oracle.last().filter(|s| s.step == k);
                    let (x, r, u, sigma, e) = &scratch[j];
                    rows.push(AruRow {
                        required_mw: d.required[k],
                        lambda: unit.lambda(),
                        mismatch_mw: d.mismatch[k],
                        cost: d.cost_at(k, meas.deviation_hz),
                        oracle: sample.map(|s| (s.lambda_star, s.cost_star)),
                        x,
                        r,
                        u,
                        sigma,
                        e,
                        x_star: sample.map(|s| s.x_star.as_slice()),
                    });
                }
                w.record(t, &meas, &rows)?;
                records += 1;
            }
        }

        // Close the loop: delivered deviations feed the swing equation.
        applied_power_pu.fill(0.0);
        for (j, unit) in units.iter().enumerate() {
            for (s, bus) in unit.states().iter().zip(&asset_buses[j]) {
                applied_power_pu[*bus] += s.x / base_mva;
            }
        }
        if let Err(source) = grid.step(&mut grid_state, &applied_power_pu, t, dt) {
            flush(writer)?;
            return Err(RunError::Grid {
                source,
                last_record: records,
            });
        }
    }

    // Final diagnostics snapshot.
    for (j, unit) in units.iter().enumerate() {
        data[j].diag = unit.diag().clone();
    }

    let metrics: Vec<RunMetrics> = data
        .iter()
        .map(|d| metrics::compute(scenario, &dev_hz, d))
        .collect();

    let mut manifest_path = None;
    if let Some(dir) = out_dir {
        let manifest = dir.join("manifest.toml");
        let mut body = String::new();
        for w in &warnings {
            body.push_str(&format!("# warning: {w}\n"));
        }
        body.push_str(&scenario.to_manifest_toml());
        std::fs::write(&manifest, body)?;
        std::fs::write(
            dir.join("metrics.json"),
            serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
        )?;
        manifest_path = Some(manifest);
    }
    let trace_path = out_dir.map(|d| d.join("trace.csv"));
    flush(writer)?;

    Ok(RunOutcome {
        scenario: scenario.clone(),
        dev_hz,
        arus: data,
        metrics,
        warnings,
        trace_path,
        manifest_path,
    })
}

/// Convenience: load by name/path and run.
pub fn load_and_run(
    name_or_path: &str,
    overrides: &crate::scenario::Overrides,
    out_dir: Option<&Path>,
) -> Result<RunOutcome, RunError> {
    let (scenario, warnings) = crate::scenario::load_scenario(name_or_path, overrides)?;
    run(&scenario, warnings, out_dir)
}
