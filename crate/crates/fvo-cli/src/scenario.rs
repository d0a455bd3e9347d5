//! Scenario files: a declarative TOML tree describing the grid, the load
//! events, and the aggregated response units.
//!
//! Loading resolves every default into a fully concrete [`Scenario`], which
//! serializes back to TOML as the run manifest; a manifest is itself a valid
//! scenario file, so any run can be reproduced from its manifest alone.
//! Randomized asset blocks are expanded at load time (seeded), so the
//! manifest lists the concrete assets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use fvo::controller::{AlgorithmKind, AssetParams, ControllerGains, PlantModel};
use fvo::costs::QuadraticCost;
use fvo::curves::{CurveKnot, DeliveryCurve, ServiceKind};
use fvo::grid::{AgcParams, BusParams, GridModel, LineParams, LoadSignal, MeasurementNoise};
use fvo::rng::SplitMix64;

use crate::assets;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("unknown scenario '{0}'; `fvo list-scenarios` shows the shipped ones")]
    Unknown(String),
}

fn invalid(path: impl fmt::Display, message: impl fmt::Display) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.to_string(),
        message: message.to_string(),
    }
}

/// Command-line overrides applied before resolution.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dt_ms: Option<f64>,
    pub horizon_s: Option<f64>,
}

// ---------------------------------------------------------------------------
// Raw (file) schema
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    #[serde(default)]
    description: String,
    horizon_s: f64,
    dt_ms: Option<f64>,
    seed: Option<u64>,
    oracle_sampling: Option<usize>,
    event_time_s: Option<f64>,
    controller_start_s: Option<f64>,
    trace_decimation: Option<usize>,
    measurement_decimation: Option<usize>,
    grid: RawGrid,
    #[serde(default)]
    events: Vec<RawEvent>,
    controller: Option<RawGains>,
    #[serde(rename = "aru")]
    arus: Vec<RawAru>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    /// Embedded topology name ("ieee14", "ieee39").
    topology: Option<String>,
    /// Alternatively, paths to bus/line tables relative to the scenario file.
    buses_file: Option<String>,
    lines_file: Option<String>,
    /// Or fully inline tables (the manifest form).
    bus: Option<Vec<RawBus>>,
    line: Option<Vec<RawLine>>,
    base_mva: Option<f64>,
    nominal_frequency_hz: Option<f64>,
    stability_band_hz: Option<f64>,
    agc: Option<AgcParams>,
    measurement_noise: Option<MeasurementNoise>,
    /// First-order low-pass coefficient for the acceleration estimate,
    /// in (0, 1]; 1 (default) keeps the raw backward difference.
    acc_filter_alpha: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawBus {
    pub id: usize,
    pub inertia_h_s: f64,
    pub damping_d_pu: f64,
    #[serde(default)]
    pub p_gen_pu: f64,
    #[serde(default)]
    pub p_load_pu: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLine {
    pub from: usize,
    pub to: usize,
    /// Either a reactance...
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_pu: Option<f64>,
    /// ...or an explicit admittance magnitude/phase pair.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_mag_pu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_phase_rad: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEvent {
    /// 1-based bus id.
    pub bus: usize,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t0_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub magnitude_pu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level_pu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_pu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGains {
    gamma1: Option<f64>,
    gamma2: Option<f64>,
    gamma3: Option<f64>,
    p: Option<u32>,
    q: Option<u32>,
    kappa_x: Option<f64>,
    kappa_lambda: Option<f64>,
    sig_tolerance_mw: Option<f64>,
    lambda0: Option<f64>,
    sigma0: Option<u8>,
    /// Derived field echoed by manifests; ignored on input.
    #[allow(dead_code)]
    t_max_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAru {
    name: Option<String>,
    algorithm: AlgorithmKind,
    plant: Option<PlantModel>,
    mode: Option<Mode>,
    graph: Option<String>,
    rounds_per_interval: Option<u32>,
    service: RawService,
    controller: Option<RawGains>,
    #[serde(rename = "asset", default)]
    assets: Vec<RawAsset>,
    random_assets: Option<RawRandomAssets>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawService {
    kind: ServiceKind,
    c_agg_mw: f64,
    curve: Option<RawCurve>,
    /// Derived field echoed by manifests; ignored on input.
    #[allow(dead_code)]
    max_delivery_time_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurve {
    knots: Vec<CurveKnot>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAsset {
    /// 1-based bus id the asset injects at.
    pub bus: usize,
    pub cost: RawCost,
    pub p_max_mw: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_min_mw: Option<f64>,
    #[serde(default)]
    pub baseline_mw: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_ms: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCost {
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub c: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRandomAssets {
    count: usize,
    buses: Vec<usize>,
    a_range: [f64; 2],
    #[serde(default)]
    b: f64,
    tau_range_ms: [f64; 2],
    p_max_range_mw: [f64; 2],
    baseline_range_mw: [f64; 2],
    /// Stream tag mixed with the scenario seed; identical tags produce
    /// identical parameter draws across units.
    seed_stream: u64,
}

// ---------------------------------------------------------------------------
// Resolved schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Centralized,
    Distributed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub horizon_s: f64,
    pub dt_ms: f64,
    pub seed: u64,
    pub oracle_sampling: usize,
    pub event_time_s: f64,
    pub controller_start_s: f64,
    pub trace_decimation: usize,
    pub measurement_decimation: usize,
    pub grid: ResolvedGrid,
    pub events: Vec<RawEvent>,
    #[serde(rename = "aru")]
    pub arus: Vec<ResolvedAru>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedGrid {
    pub base_mva: f64,
    pub nominal_frequency_hz: f64,
    pub stability_band_hz: f64,
    pub agc: AgcParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement_noise: Option<MeasurementNoise>,
    pub acc_filter_alpha: f64,
    pub bus: Vec<RawBus>,
    pub line: Vec<RawLine>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedAru {
    pub name: String,
    pub algorithm: AlgorithmKind,
    pub plant: PlantModel,
    pub mode: Mode,
    pub graph: String,
    pub rounds_per_interval: u32,
    pub service: ResolvedService,
    pub controller: ResolvedGains,
    #[serde(rename = "asset")]
    pub assets: Vec<RawAsset>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedService {
    pub kind: ServiceKind,
    pub c_agg_mw: f64,
    pub max_delivery_time_s: f64,
    pub curve: ResolvedCurve,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedCurve {
    pub knots: Vec<CurveKnot>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedGains {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub p: u32,
    pub q: u32,
    pub kappa_x: f64,
    pub kappa_lambda: f64,
    pub sig_tolerance_mw: f64,
    pub lambda0: f64,
    pub sigma0: u8,
    /// Fixed-time bound implied by the gains, recorded for reference.
    pub t_max_s: f64,
}

impl ResolvedGains {
    pub fn controller_gains(&self) -> ControllerGains {
        ControllerGains {
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            gamma3: self.gamma3,
            p: self.p,
            q: self.q,
            kappa_x: self.kappa_x,
            kappa_lambda: self.kappa_lambda,
            sig_tolerance_mw: self.sig_tolerance_mw,
        }
    }
}

impl ResolvedAru {
    pub fn delivery_curve(&self) -> DeliveryCurve {
        DeliveryCurve::new(self.service.kind, self.service.curve.knots.clone())
            .expect("curve validated at load")
    }

    pub fn asset_params(&self) -> Vec<AssetParams> {
        self.assets
            .iter()
            .map(|a| AssetParams {
                cost: QuadraticCost {
                    a: a.cost.a,
                    b: a.cost.b,
                    c: a.cost.c,
                },
                p_min_mw: a.p_min_mw.unwrap_or(-a.p_max_mw),
                p_max_mw: a.p_max_mw,
                baseline_mw: a.baseline_mw,
                tau_s: a.tau_ms.unwrap_or(100.0) / 1000.0,
            })
            .collect()
    }
}

impl Scenario {
    pub fn dt_s(&self) -> f64 {
        self.dt_ms / 1000.0
    }

    pub fn steps(&self) -> usize {
        (self.horizon_s / self.dt_s()).round() as usize
    }

    /// Builds the grid model, attaching the load events with seeds mixed
    /// from the scenario seed.
    pub fn grid_model(&self) -> Result<GridModel, ScenarioError> {
        let n = self.grid.bus.len();
        let index_of: BTreeMap<usize, usize> = self
            .grid
            .bus
            .iter()
            .enumerate()
            .map(|(k, b)| (b.id, k))
            .collect();
        if index_of.len() != n {
            return Err(invalid("grid.bus", "duplicate bus ids"));
        }
        let buses = self
            .grid
            .bus
            .iter()
            .map(|b| BusParams {
                inertia_h_s: b.inertia_h_s,
                damping_d_pu: b.damping_d_pu,
                p_gen_pu: b.p_gen_pu,
                p_load_pu: b.p_load_pu,
            })
            .collect();
        let mut lines = Vec::with_capacity(self.grid.line.len());
        for (k, l) in self.grid.line.iter().enumerate() {
            let (from, to) = (
                *index_of
                    .get(&l.from)
                    .ok_or_else(|| invalid(format!("grid.line[{k}].from"), "unknown bus id"))?,
                *index_of
                    .get(&l.to)
                    .ok_or_else(|| invalid(format!("grid.line[{k}].to"), "unknown bus id"))?,
            );
            let (y_mag_pu, y_phase_rad) = match (l.x_pu, l.y_mag_pu) {
                (Some(x), None) if x > 0.0 => (1.0 / x, std::f64::consts::FRAC_PI_2),
                (None, Some(mag)) => (
                    mag,
                    l.y_phase_rad
                        .unwrap_or(std::f64::consts::FRAC_PI_2),
                ),
                _ => {
                    return Err(invalid(
                        format!("grid.line[{k}]"),
                        "give either a positive x_pu or y_mag_pu (+ y_phase_rad)",
                    ))
                }
            };
            lines.push(LineParams {
                from,
                to,
                y_mag_pu,
                y_phase_rad,
            });
        }
        let mut load_events = Vec::with_capacity(self.events.len());
        for (k, ev) in self.events.iter().enumerate() {
            let bus = *index_of
                .get(&ev.bus)
                .ok_or_else(|| invalid(format!("events[{k}].bus"), "unknown bus id"))?;
            load_events.push((bus, self.event_signal(k)?));
        }
        let model = GridModel {
            buses,
            lines,
            agc: self.grid.agc.clone(),
            nominal_frequency_hz: self.grid.nominal_frequency_hz,
            base_mva: self.grid.base_mva,
            stability_band_hz: self.grid.stability_band_hz,
            load_events,
        };
        model
            .validate()
            .map_err(|e| invalid("grid", e))?;
        Ok(model)
    }

    /// Load signal of event k, with the noise seed mixed from the run seed
    /// so a seed override re-seeds every stream deterministically.
    pub fn event_signal(&self, k: usize) -> Result<LoadSignal, ScenarioError> {
        let ev = &self.events[k];
        let path = format!("events[{k}]");
        let signal = match ev.kind.as_str() {
            "step" => LoadSignal::Step {
                t0_s: ev
                    .t0_s
                    .ok_or_else(|| invalid(&path, "step events need t0_s"))?,
                magnitude_pu: ev
                    .magnitude_pu
                    .ok_or_else(|| invalid(&path, "step events need magnitude_pu"))?,
            },
            "constant" => LoadSignal::Constant {
                level_pu: ev
                    .level_pu
                    .ok_or_else(|| invalid(&path, "constant events need level_pu"))?,
            },
            "bounded_noise" => {
                let event_seed = ev
                    .seed
                    .ok_or_else(|| invalid(&path, "bounded_noise events need a seed"))?;
                let mut mixer = SplitMix64::new(self.seed ^ event_seed.rotate_left(17));
                LoadSignal::BoundedNoise {
                    seed: mixer.next_u64(),
                    band_pu: ev
                        .band_pu
                        .ok_or_else(|| invalid(&path, "bounded_noise events need band_pu"))?,
                    bandwidth_hz: ev
                        .bandwidth_hz
                        .ok_or_else(|| invalid(&path, "bounded_noise events need bandwidth_hz"))?,
                }
            }
            other => return Err(invalid(&path, format!("unknown event kind '{other}'"))),
        };
        signal.validate().map_err(|e| invalid(&path, e))?;
        Ok(signal)
    }

    /// Serializes the resolved scenario as a runnable manifest.
    pub fn to_manifest_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved scenario serializes")
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// Loads a scenario by shipped name or file path, applies overrides, and
/// resolves all defaults. Returns the scenario plus non-fatal warnings.
pub fn load_scenario(
    name_or_path: &str,
    overrides: &Overrides,
) -> Result<(Scenario, Vec<String>), ScenarioError> {
    let (text, base_dir, fallback_name) = if let Some(body) = assets::scenario(name_or_path) {
        (
            body.to_string(),
            std::path::PathBuf::new(),
            name_or_path.to_string(),
        )
    } else {
        let path = Path::new(name_or_path);
        if !path.exists() {
            if name_or_path.ends_with(".toml") {
                return Err(ScenarioError::Io {
                    path: name_or_path.into(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
                });
            }
            return Err(ScenarioError::Unknown(name_or_path.into()));
        }
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: name_or_path.into(),
            source,
        })?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        (
            text,
            path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            stem,
        )
    };
    let raw: RawScenario = toml::from_str(&text)
        .map_err(|e| invalid(name_or_path, e.message().to_string()))?;
    resolve(raw, &base_dir, fallback_name, overrides)
}

fn resolve(
    raw: RawScenario,
    base_dir: &Path,
    fallback_name: String,
    overrides: &Overrides,
) -> Result<(Scenario, Vec<String>), ScenarioError> {
    let mut warnings = Vec::new();
    let seed = overrides.seed.unwrap_or(raw.seed.unwrap_or(0));
    let dt_ms = overrides.dt_ms.unwrap_or(raw.dt_ms.unwrap_or(1.0));
    let horizon_s = overrides.horizon_s.unwrap_or(raw.horizon_s);
    if !(dt_ms > 0.0) {
        return Err(invalid("dt_ms", "must be positive"));
    }
    if !(horizon_s > 0.0) {
        return Err(invalid("horizon_s", "must be positive"));
    }
    let first_event_time = raw
        .events
        .iter()
        .filter_map(|e| e.t0_s)
        .fold(f64::INFINITY, f64::min);
    let event_time_s = raw.event_time_s.unwrap_or(if first_event_time.is_finite() {
        first_event_time
    } else {
        0.0
    });
    if horizon_s < event_time_s {
        return Err(invalid("horizon_s", "horizon ends before the event time"));
    }

    let grid = resolve_grid(raw.grid, base_dir)?;

    let mut arus = Vec::with_capacity(raw.arus.len());
    for (j, raw_aru) in raw.arus.into_iter().enumerate() {
        arus.push(resolve_aru(
            raw_aru,
            j,
            raw.controller.as_ref(),
            seed,
            &mut warnings,
        )?);
    }
    if arus.is_empty() {
        return Err(invalid("aru", "at least one response unit is required"));
    }

    let scenario = Scenario {
        name: raw.name.unwrap_or(fallback_name),
        description: raw.description,
        horizon_s,
        dt_ms,
        seed,
        oracle_sampling: raw.oracle_sampling.unwrap_or(10).max(1),
        event_time_s,
        controller_start_s: raw.controller_start_s.unwrap_or(0.0),
        trace_decimation: raw.trace_decimation.unwrap_or(1).max(1),
        measurement_decimation: raw.measurement_decimation.unwrap_or(1).max(1),
        grid,
        events: raw.events,
        arus,
    };
    // Build once to surface structural grid errors at load time.
    scenario.grid_model()?;
    Ok((scenario, warnings))
}

fn resolve_grid(raw: RawGrid, base_dir: &Path) -> Result<ResolvedGrid, ScenarioError> {
    let (bus, line) = match (&raw.topology, &raw.bus) {
        (Some(name), None) => {
            let (buses_csv, lines_csv) = assets::topology(name)
                .ok_or_else(|| invalid("grid.topology", format!("unknown topology '{name}'")))?;
            (parse_bus_csv(buses_csv)?, parse_line_csv(lines_csv)?)
        }
        (None, Some(bus)) => {
            let line = raw
                .line
                .clone()
                .ok_or_else(|| invalid("grid.line", "inline buses need inline lines"))?;
            (bus.clone(), line)
        }
        (None, None) => match (&raw.buses_file, &raw.lines_file) {
            (Some(bf), Some(lf)) => {
                let read = |rel: &str| -> Result<String, ScenarioError> {
                    let p = base_dir.join(rel);
                    std::fs::read_to_string(&p).map_err(|source| ScenarioError::Io {
                        path: p.display().to_string(),
                        source,
                    })
                };
                (parse_bus_csv(&read(bf)?)?, parse_line_csv(&read(lf)?)?)
            }
            _ => {
                return Err(invalid(
                    "grid",
                    "give a topology name, bus/line files, or inline tables",
                ))
            }
        },
        _ => {
            return Err(invalid(
                "grid",
                "topology name and inline tables are mutually exclusive",
            ))
        }
    };
    Ok(ResolvedGrid {
        base_mva: raw.base_mva.unwrap_or(100.0),
        nominal_frequency_hz: raw.nominal_frequency_hz.unwrap_or(50.0),
        stability_band_hz: raw.stability_band_hz.unwrap_or(5.0),
        agc: raw.agc.unwrap_or_default(),
        measurement_noise: raw.measurement_noise,
        acc_filter_alpha: raw.acc_filter_alpha.unwrap_or(1.0),
        bus,
        line,
    })
}

fn resolve_aru(
    raw: RawAru,
    index: usize,
    global_gains: Option<&RawGains>,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<ResolvedAru, ScenarioError> {
    let path = format!("aru[{index}]");
    let name = raw.name.unwrap_or_else(|| format!("aru{}", index + 1));
    let plant = raw.plant.unwrap_or(match raw.algorithm {
        AlgorithmKind::Tot2 => PlantModel::FirstOrder,
        _ => PlantModel::Direct,
    });
    let mode = raw.mode.unwrap_or(Mode::Centralized);
    if mode == Mode::Distributed && raw.algorithm == AlgorithmKind::Benchmark {
        return Err(invalid(
            format!("{path}.mode"),
            "the benchmark has no distributed form",
        ));
    }

    // Gains: per-unit override > global > defaults.
    let defaults = ControllerGains::default();
    let pick_f = |field: fn(&RawGains) -> Option<f64>, fallback: f64| -> f64 {
        raw.controller
            .as_ref()
            .and_then(field)
            .or_else(|| global_gains.and_then(field))
            .unwrap_or(fallback)
    };
    let pick_u = |field: fn(&RawGains) -> Option<u32>, fallback: u32| -> u32 {
        raw.controller
            .as_ref()
            .and_then(field)
            .or_else(|| global_gains.and_then(field))
            .unwrap_or(fallback)
    };
    let gains = ControllerGains {
        gamma1: pick_f(|g| g.gamma1, defaults.gamma1),
        gamma2: pick_f(|g| g.gamma2, defaults.gamma2),
        gamma3: pick_f(|g| g.gamma3, defaults.gamma3),
        p: pick_u(|g| g.p, defaults.p),
        q: pick_u(|g| g.q, defaults.q),
        kappa_x: pick_f(|g| g.kappa_x, defaults.kappa_x),
        kappa_lambda: pick_f(|g| g.kappa_lambda, defaults.kappa_lambda),
        sig_tolerance_mw: pick_f(|g| g.sig_tolerance_mw, defaults.sig_tolerance_mw),
    };
    gains
        .validate()
        .map_err(|e| invalid(format!("{path}.controller"), e))?;
    let lambda0 = pick_f(|g| g.lambda0, 0.0);
    let sigma0 = raw
        .controller
        .as_ref()
        .and_then(|g| g.sigma0)
        .or_else(|| global_gains.and_then(|g| g.sigma0))
        .unwrap_or(1);

    // Service and curve.
    let kind = raw.service.kind;
    let knots = match raw.service.curve {
        Some(c) => c.knots,
        None => DeliveryCurve::default_for(kind).knots().to_vec(),
    };
    let curve = DeliveryCurve::new(kind, knots.clone())
        .map_err(|e| invalid(format!("{path}.service.curve"), e))?;
    gains
        .check_deadline(curve.max_delivery_time_s())
        .map_err(|e| invalid(format!("{path}.controller"), e))?;
    let c_agg = raw.service.c_agg_mw;
    if !(c_agg > 0.0) {
        return Err(invalid(
            format!("{path}.service.c_agg_mw"),
            "must be positive",
        ));
    }
    // Registration bounds: minimum 1 MW per unit, service-dependent maximum.
    let max_allowed = match kind {
        ServiceKind::Dc => 100.0,
        _ => 50.0,
    };
    if c_agg < 1.0 || c_agg > max_allowed {
        warnings.push(format!(
            "{path}.service.c_agg_mw = {c_agg} MW outside the registration bounds [1, {max_allowed}] MW for {}",
            kind.name()
        ));
    }

    // Assets: explicit list plus optional randomized block.
    let mut assets = raw.assets;
    if let Some(random) = raw.random_assets {
        let mut rng = SplitMix64::new(seed ^ random.seed_stream.rotate_left(32));
        if random.buses.is_empty() {
            return Err(invalid(
                format!("{path}.random_assets.buses"),
                "needs at least one bus",
            ));
        }
        for k in 0..random.count {
            let p_max = rng.uniform(random.p_max_range_mw[0], random.p_max_range_mw[1]);
            let mut baseline =
                rng.uniform(random.baseline_range_mw[0], random.baseline_range_mw[1]);
            baseline = baseline.clamp(-p_max, p_max);
            assets.push(RawAsset {
                bus: random.buses[k % random.buses.len()],
                cost: RawCost {
                    a: rng.uniform(random.a_range[0], random.a_range[1]),
                    b: random.b,
                    c: 0.0,
                },
                p_max_mw: p_max,
                p_min_mw: None,
                baseline_mw: baseline,
                tau_ms: Some(rng.uniform(random.tau_range_ms[0], random.tau_range_ms[1])),
            });
        }
    }
    if assets.is_empty() {
        return Err(invalid(format!("{path}.asset"), "needs at least one asset"));
    }

    let resolved = ResolvedAru {
        name,
        algorithm: raw.algorithm,
        plant,
        mode,
        graph: raw.graph.unwrap_or_else(|| "ring".into()),
        rounds_per_interval: raw.rounds_per_interval.unwrap_or(1),
        service: ResolvedService {
            kind,
            c_agg_mw: c_agg,
            max_delivery_time_s: curve.max_delivery_time_s(),
            curve: ResolvedCurve { knots },
        },
        controller: ResolvedGains {
            gamma1: gains.gamma1,
            gamma2: gains.gamma2,
            gamma3: gains.gamma3,
            p: gains.p,
            q: gains.q,
            kappa_x: gains.kappa_x,
            kappa_lambda: gains.kappa_lambda,
            sig_tolerance_mw: gains.sig_tolerance_mw,
            lambda0,
            sigma0,
            t_max_s: fvo::controller::t_max(&gains),
        },
        assets,
    };

    // Validate the asset set (baselines, boxes, headroom).
    let params = resolved.asset_params();
    let mut hi_sum = 0.0;
    let mut lo_sum = 0.0;
    for (i, p) in params.iter().enumerate() {
        p.validate(i)
            .map_err(|e| invalid(format!("{path}.asset[{i}]"), e))?;
        p.cost
            .validate()
            .map_err(|e| invalid(format!("{path}.asset[{i}].cost"), e))?;
        let b = p
            .deviation_box()
            .map_err(|e| invalid(format!("{path}.asset[{i}]"), e))?;
        hi_sum += b.hi;
        lo_sum += b.lo;
    }
    if hi_sum < c_agg || lo_sum > -c_agg {
        return Err(invalid(
            format!("{path}.asset"),
            format!(
                "aggregate headroom [{lo_sum:.2}, {hi_sum:.2}] MW cannot cover full delivery of +/-{c_agg} MW"
            ),
        ));
    }
    Ok(resolved)
}

fn parse_bus_csv(text: &str) -> Result<Vec<RawBus>, ScenarioError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(invalid(
                format!("bus table line {}", lineno + 1),
                "expected bus,inertia_h_s,damping_d_pu,p_gen_pu,p_load_pu",
            ));
        }
        let parse = |s: &str, what: &str| -> Result<f64, ScenarioError> {
            s.parse()
                .map_err(|_| invalid(format!("bus table line {}", lineno + 1), what))
        };
        out.push(RawBus {
            id: fields[0]
                .parse()
                .map_err(|_| invalid(format!("bus table line {}", lineno + 1), "bad bus id"))?,
            inertia_h_s: parse(fields[1], "bad inertia")?,
            damping_d_pu: parse(fields[2], "bad damping")?,
            p_gen_pu: parse(fields[3], "bad generation")?,
            p_load_pu: parse(fields[4], "bad load")?,
        });
    }
    Ok(out)
}

fn parse_line_csv(text: &str) -> Result<Vec<RawLine>, ScenarioError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(invalid(
                format!("line table line {}", lineno + 1),
                "expected from,to,x_pu",
            ));
        }
        let bad = |what: &str| invalid(format!("line table line {}", lineno + 1), what);
        out.push(RawLine {
            from: fields[0].parse().map_err(|_| bad("bad from bus"))?,
            to: fields[1].parse().map_err(|_| bad("bad to bus"))?,
            x_pu: Some(fields[2].parse().map_err(|_| bad("bad reactance"))?),
            y_mag_pu: None,
            y_phase_rad: None,
        });
    }
    Ok(out)
}
