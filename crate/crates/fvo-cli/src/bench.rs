//! Controller timing as a function of the asset count.
//!
//! Drives the controllers with a canned smooth measurement sequence (no grid
//! in the loop) so the measured time is the coordination work alone. Asset
//! parameters are drawn from the run seed, identically across configurations
//! of the same size. Reports the per-interval mean and, for a distributed
//! unit, the per-node share, plus fitted log-log scaling exponents.

use std::time::Instant;

use serde::Serialize;

use fvo::controller::{AlgorithmKind, Aru, AssetParams, PlantModel};
use fvo::costs::QuadraticCost;
use fvo::curves::DeliveryCurve;
use fvo::distributed::{CommGraph, DistributedAru};
use fvo::grid::FrequencyMeasurement;
use fvo::rng::SplitMix64;

use crate::scenario::{Mode, Scenario};

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub algorithm: AlgorithmKind,
    pub mode: Mode,
    pub n_assets: usize,
    pub mean_interval_us: f64,
    /// Per-node share for the distributed rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_node_us: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchExponent {
    pub algorithm: AlgorithmKind,
    pub mode: Mode,
    /// Slope of ln(time) against ln(n).
    pub exponent: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub counts: Vec<usize>,
    pub intervals: usize,
    pub rows: Vec<BenchRow>,
    pub exponents: Vec<BenchExponent>,
}

fn synth_assets(seed: u64, n: usize) -> Vec<AssetParams> {
    let mut rng = SplitMix64::new(seed ^ 0xBEAC_0FFE);
    (0..n)
        .map(|_| {
            let p_max = rng.uniform(2.0, 5.0);
            let baseline = rng.uniform(-1.0, 1.0).clamp(-p_max + 0.5, p_max - 0.5);
            AssetParams {
                cost: QuadraticCost::new(rng.uniform(2.0, 5.0), 1.0).unwrap(),
                p_min_mw: -p_max,
                p_max_mw: p_max,
                baseline_mw: baseline,
                tau_s: rng.uniform(0.05, 0.2),
            }
        })
        .collect()
}

fn canned_measurement(t: f64) -> FrequencyMeasurement {
    // Smooth sweep through the active range of the regulation curve.
    let w = 2.0 * std::f64::consts::PI * 0.2;
    FrequencyMeasurement {
        deviation_hz: -0.08 - 0.05 * (w * t).sin(),
        rate_hzps: -0.05 * w * (w * t).cos(),
        acc_hzps2: 0.05 * w * w * (w * t).sin(),
        timestamp_s: t,
    }
}

/// Time one configuration; returns the mean per-interval microseconds.
fn time_config(
    algorithm: AlgorithmKind,
    mode: Mode,
    n: usize,
    scenario: &Scenario,
    intervals: usize,
) -> f64 {
    let spec = &scenario.arus[0];
    let gains = spec.controller.controller_gains();
    let curve = DeliveryCurve::default_for(spec.service.kind);
    let c_agg = spec.service.c_agg_mw;
    let assets = synth_assets(scenario.seed, n);
    let dt = scenario.dt_s();
    let warmup = 200;

    match mode {
        Mode::Centralized => {
            let mut aru = Aru::new(algorithm, PlantModel::FirstOrder, assets, gains, 0.0, 1)
                .expect("bench unit");
            for k in 0..warmup {
                let m = canned_measurement(k as f64 * dt);
                aru.step(&m, &curve, c_agg, dt).expect("bench step");
            }
            let started = Instant::now();
            for k in 0..intervals {
                let m = canned_measurement((warmup + k) as f64 * dt);
                aru.step(&m, &curve, c_agg, dt).expect("bench step");
            }
            started.elapsed().as_secs_f64() * 1e6 / intervals as f64
        }
        Mode::Distributed => {
            let graph = CommGraph::ring(n).expect("ring");
            let mut aru = DistributedAru::new(
                algorithm,
                PlantModel::FirstOrder,
                assets,
                gains,
                graph,
                1,
                0.0,
                1,
            )
            .expect("bench unit");
            for k in 0..warmup {
                let m = canned_measurement(k as f64 * dt);
                aru.step(&m, &curve, c_agg, dt).expect("bench step");
            }
            let started = Instant::now();
            for k in 0..intervals {
                let m = canned_measurement((warmup + k) as f64 * dt);
                aru.step(&m, &curve, c_agg, dt).expect("bench step");
            }
            started.elapsed().as_secs_f64() * 1e6 / intervals as f64
        }
    }
}

fn fit_exponent(counts: &[usize], times_us: &[f64]) -> f64 {
    let n = counts.len() as f64;
    let xs: Vec<f64> = counts.iter().map(|c| (*c as f64).ln()).collect();
    let ys: Vec<f64> = times_us.iter().map(|t| t.max(1e-9).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

pub fn run_bench(
    scenario: &Scenario,
    counts: &[usize],
    modes: &[Mode],
    intervals: usize,
    repeats: usize,
) -> BenchReport {
    let mut rows = Vec::new();
    let mut exponents = Vec::new();
    for algorithm in [AlgorithmKind::Tot1, AlgorithmKind::Tot2] {
        for &mode in modes {
            let mut times = Vec::with_capacity(counts.len());
            for &n in counts {
                // Best-of-repeats damps scheduler noise.
                let best = (0..repeats.max(1))
                    .map(|_| time_config(algorithm, mode, n, scenario, intervals))
                    .fold(f64::INFINITY, f64::min);
                let per_node = match mode {
                    Mode::Distributed => Some(best / n as f64),
                    Mode::Centralized => None,
                };
                rows.push(BenchRow {
                    algorithm,
                    mode,
                    n_assets: n,
                    mean_interval_us: best,
                    per_node_us: per_node,
                });
                times.push(match mode {
                    Mode::Distributed => best / n as f64,
                    Mode::Centralized => best,
                });
            }
            if counts.len() >= 2 {
                exponents.push(BenchExponent {
                    algorithm,
                    mode,
                    exponent: fit_exponent(counts, &times),
                });
            }
        }
    }
    BenchReport {
        counts: counts.to_vec(),
        intervals,
        rows,
        exponents,
    }
}

impl BenchReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("algorithm  mode         n    interval_us  per_node_us\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{:<10} {:<12} {:<4} {:>11.3}  {}\n",
                format!("{:?}", row.algorithm).to_lowercase(),
                format!("{:?}", row.mode).to_lowercase(),
                row.n_assets,
                row.mean_interval_us,
                row.per_node_us
                    .map(|v| format!("{v:>10.4}"))
                    .unwrap_or_else(|| "-".into()),
            ));
        }
        for e in &self.exponents {
            out.push_str(&format!(
                "scaling exponent {:?}/{:?}: {:.3}\n",
                e.algorithm, e.mode, e.exponent
            ));
        }
        out
    }
}
