//! Command line for the frequency-response co-simulation harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fvo::curves::{DeliveryCurve, ServiceKind};
use fvo::oracle::{solve_instant, validate_theorem1, InstantAsset, InstantProblem};
use fvo_cli::scenario::{load_scenario, Mode, Overrides};
use fvo_cli::{assets, bench, compare, sim};

#[derive(Parser)]
#[command(
    name = "fvo",
    about = "Frequency-varying optimization: co-simulation of aggregated frequency-response units",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Shipped scenario name or path to a scenario/manifest file.
    scenario: String,
    /// Output directory for trace.csv, metrics.json, and manifest.toml.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the control interval, milliseconds.
    #[arg(long, alias = "dt")]
    dt_ms: Option<f64>,
    /// Override the horizon, seconds.
    #[arg(long, alias = "horizon")]
    horizon_s: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and report per-unit metrics.
    Run(RunArgs),
    /// Compare mismatch series across trace files (or units of one trace).
    Compare {
        /// Trace files produced by `run --out`.
        traces: Vec<PathBuf>,
        /// Window start, seconds.
        #[arg(long)]
        window_start: Option<f64>,
        /// Window end, seconds.
        #[arg(long)]
        window_end: Option<f64>,
    },
    /// Time the controllers against the asset count.
    Bench {
        /// Scenario supplying service and gains (first unit is the template).
        #[arg(long, default_value = "bench_scaling")]
        scenario: String,
        /// Comma-separated asset counts.
        #[arg(long, default_value = "30,60,120", value_delimiter = ',')]
        counts: Vec<usize>,
        /// Modes to time.
        #[arg(long, default_value = "centralized,distributed", value_delimiter = ',')]
        modes: Vec<String>,
        /// Timed intervals per configuration.
        #[arg(long, default_value_t = 2000)]
        intervals: usize,
        /// Repetitions (best-of) per configuration.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one frozen-instant problem from a TOML description.
    SolveInstant {
        /// Problem file: required_mw, optional deviation_hz, and [[asset]]
        /// rows with a, b, optional c, lo, hi.
        problem: PathBuf,
    },
    /// Check the analytic optimal-trajectory rates against oracle finite
    /// differences over a deviation sweep.
    ValidateTheorem1 {
        #[arg(long, default_value = "dm")]
        service: String,
        #[arg(long, default_value_t = 50.0)]
        c_agg_mw: f64,
        #[arg(long, default_value_t = -0.19, allow_negative_numbers = true)]
        from_hz: f64,
        #[arg(long, default_value_t = -0.11, allow_negative_numbers = true)]
        to_hz: f64,
        #[arg(long, default_value_t = 41)]
        steps: usize,
        #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
        rate_hzps: f64,
        #[arg(long, default_value_t = 1e-7)]
        eps_hz: f64,
        /// Optional TOML asset file (same format as solve-instant).
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// List the shipped scenarios.
    ListScenarios,
}

#[derive(serde::Deserialize)]
struct ProblemFile {
    #[serde(default)]
    deviation_hz: f64,
    required_mw: Option<f64>,
    #[serde(rename = "asset")]
    assets: Vec<InstantAsset>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err
                .downcast_ref::<sim::RunError>()
                .map(|e| e.exit_code())
                .unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => run_command(args),
        Command::Compare {
            traces,
            window_start,
            window_end,
        } => {
            anyhow::ensure!(!traces.is_empty(), "give at least one trace file");
            let report = compare::compare_traces(&traces, (window_start, window_end))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Bench {
            scenario,
            counts,
            modes,
            intervals,
            repeats,
            seed,
            out,
        } => {
            let overrides = Overrides {
                seed,
                ..Overrides::default()
            };
            let (scn, _) = load_scenario(&scenario, &overrides).map_err(sim::RunError::from)?;
            let modes: Vec<Mode> = modes
                .iter()
                .map(|m| match m.as_str() {
                    "centralized" => Ok(Mode::Centralized),
                    "distributed" => Ok(Mode::Distributed),
                    other => anyhow::bail!("unknown mode '{other}'"),
                })
                .collect::<anyhow::Result<_>>()?;
            let report = bench::run_bench(&scn, &counts, &modes, intervals, repeats);
            print!("{}", report.render_table());
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
                println!("report written to {}", path.display());
            }
            Ok(())
        }
        Command::SolveInstant { problem } => {
            let text = std::fs::read_to_string(&problem)?;
            let file: ProblemFile = toml::from_str(&text)?;
            let required = file
                .required_mw
                .ok_or_else(|| anyhow::anyhow!("problem file needs required_mw"))?;
            let prob = InstantProblem {
                assets: file.assets,
                deviation_hz: file.deviation_hz,
                required_mw: required,
            };
            let sol = solve_instant(&prob)?;
            println!("{}", serde_json::to_string_pretty(&sol)?);
            Ok(())
        }
        Command::ValidateTheorem1 {
            service,
            c_agg_mw,
            from_hz,
            to_hz,
            steps,
            rate_hzps,
            eps_hz,
            assets,
        } => {
            let kind = match service.as_str() {
                "dr" => ServiceKind::Dr,
                "dm" => ServiceKind::Dm,
                "dc" => ServiceKind::Dc,
                other => anyhow::bail!("unknown service '{other}'"),
            };
            let curve = DeliveryCurve::default_for(kind);
            let asset_list: Vec<InstantAsset> = match assets {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)?;
                    let file: ProblemFile = toml::from_str(&text)?;
                    file.assets
                }
                None => [2.0, 3.2, 3.0, 2.4, 4.0, 5.0]
                    .iter()
                    .map(|&a| InstantAsset {
                        a,
                        b: 1.0,
                        c: 0.0,
                        lo: -100.0,
                        hi: 100.0,
                    })
                    .collect(),
            };
            let report = validate_theorem1(
                &asset_list,
                &curve,
                c_agg_mw,
                from_hz,
                to_hz,
                steps,
                rate_hzps,
                eps_hz,
            )?;
            println!(
                "compared {} points, excluded {}, max relative error {:.3e}",
                report.compared, report.excluded, report.max_rel_error
            );
            Ok(())
        }
        Command::ListScenarios => {
            for name in assets::SCENARIO_NAMES {
                println!("{name:<22} {}", assets::scenario_description(name));
            }
            Ok(())
        }
    }
}

fn run_command(args: RunArgs) -> anyhow::Result<()> {
    let overrides = Overrides {
        seed: args.seed,
        dt_ms: args.dt_ms,
        horizon_s: args.horizon_s,
    };
    let (scenario, warnings) =
        load_scenario(&args.scenario, &overrides).map_err(sim::RunError::from)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let outcome = sim::run(&scenario, warnings, args.out.as_deref())?;
    for m in &outcome.metrics {
        let t = m
            .convergence_time_s
            .map(|t| format!("{t:.3} s"))
            .unwrap_or_else(|| "not reached".into());
        println!(
            "{}: algorithm {:?}, convergence {} (bound {:.3} s, gamma3 margin {:+.1}), rms mismatch {:.4} MW, mean step {:.2} us",
            m.aru,
            m.algorithm,
            t,
            m.t_max_bound_s,
            m.gamma3_margin,
            m.rms_mismatch_after_event_mw,
            m.mean_interval_compute_us,
        );
    }
    if args.out.is_none() {
        println!("{}", serde_json::to_string_pretty(&outcome.metrics)?);
    } else if let Some(dir) = &args.out {
        println!("artifacts in {}", dir.display());
    }
    Ok(())
}
