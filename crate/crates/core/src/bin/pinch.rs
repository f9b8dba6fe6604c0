//! Experiment runner: single optimizations, parameter sweeps, radiated
//! power-field maps, and brute-force oracle comparisons.
//!
//! Exit codes: 0 success, 2 parse/configuration error, 3 infeasible,
//! 4 numerical or internal failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use pinch_isac::driver::{DriverError, DriverSettings};
use pinch_isac::oracle::{enumerate, table_csv, OracleBudget};
use pinch_isac::outage::log_grid;
use pinch_isac::scenario::{load_scenario, ScenarioConfig};
use pinch_isac::sweep::{
    field_csv, field_map, run_scheme_by_name, run_sweep, sweep_csv, Scheme, SweepParam, SweepSpec,
};

#[derive(Parser)]
#[command(name = "pinch", about = "Clustered pinching-antenna ISAC optimizer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// RNG seed for Monte-Carlo evaluation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte-Carlo samples per evaluation.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Chernoff grid as lo:hi:n (defaults to 1e-3/Gth .. 1e3/Gth with 32
    /// points).
    #[arg(long, value_name = "LO:HI:N")]
    s_grid: Option<String>,
    /// Output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one scenario and emit the solution bundle as JSON.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Scheme to run (proposed or a baseline name).
        #[arg(long, default_value = "proposed")]
        scheme: String,
        /// Select the winning Chernoff candidate by Monte-Carlo outage.
        #[arg(long, default_value_t = false)]
        select_by_mc: bool,
    },
    /// Sweep one parameter over a set of schemes and emit CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Sweep request PARAM=v1,v2,... with PARAM in
        /// {p_t, kappa, r_min, n_t, t}.
        #[arg(long)]
        sweep: String,
        /// Comma-separated scheme list (default: all).
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Evaluate the normalized radiated power field of a solution.
    Field {
        #[command(flatten)]
        common: CommonArgs,
        /// Solution bundle JSON produced by `run`.
        #[arg(long)]
        solution: PathBuf,
        /// Grid resolution in meters.
        #[arg(long, default_value_t = 0.25)]
        field_res: f64,
    },
    /// Exhaustively enumerate a tiny instance and emit the candidate table.
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
        /// Position grid points per antenna (max 7).
        #[arg(long, default_value_t = 5)]
        grid_points: usize,
        /// Duration grid points (max 5).
        #[arg(long, default_value_t = 5)]
        tau_points: usize,
    },
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("PINCH_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

fn parse_err(message: impl Into<String>) -> CliError {
    CliError { code: 2, message: message.into() }
}

fn infeasible_err(message: impl Into<String>) -> CliError {
    CliError { code: 3, message: message.into() }
}

fn numerical_err(message: impl Into<String>) -> CliError {
    CliError { code: 4, message: message.into() }
}

fn load_cfg(path: &PathBuf) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| parse_err(format!("cannot read {}: {e}", path.display())))?;
    let (cfg, applied) = load_scenario(&text).map_err(|e| parse_err(e.to_string()))?;
    for note in applied {
        eprintln!("note: {note}");
    }
    Ok(cfg)
}

fn parse_s_grid(spec: &Option<String>) -> Result<Vec<f64>, CliError> {
    match spec {
        None => Ok(Vec::new()),
        Some(s) => {
            let parts: Vec<&str> = s.split(':').collect();
            if parts.len() != 3 {
                return Err(parse_err("--s-grid expects LO:HI:N"));
            }
            let lo: f64 = parts[0].parse().map_err(|_| parse_err("bad s-grid lower bound"))?;
            let hi: f64 = parts[1].parse().map_err(|_| parse_err("bad s-grid upper bound"))?;
            let n: usize = parts[2].parse().map_err(|_| parse_err("bad s-grid count"))?;
            if !(lo > 0.0 && hi > lo && n >= 2) {
                return Err(parse_err("s-grid needs 0 < lo < hi and n >= 2"));
            }
            Ok(log_grid(lo, hi, n))
        }
    }
}

fn emit(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| numerical_err(format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn driver_error(e: DriverError) -> CliError {
    match e {
        DriverError::Scenario(inner) => parse_err(inner.to_string()),
        DriverError::Schedule(m) => infeasible_err(m),
        DriverError::AllCandidatesFailed(m) => infeasible_err(format!(
            "all Chernoff candidates failed; tightest constraint: {m}"
        )),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common, scheme, select_by_mc } => {
            let cfg = load_cfg(&common.scenario)?;
            let settings = DriverSettings {
                s_grid: parse_s_grid(&common.s_grid)?,
                mc_samples: common.samples,
                seed: common.seed,
                select_by_mc,
                ..DriverSettings::default()
            };
            let sol = run_scheme_by_name(&cfg, &scheme, &settings)
                .map_err(|e| match e {
                    pinch_isac::sweep::NamedSchemeError::Unknown(m) => parse_err(m),
                    pinch_isac::sweep::NamedSchemeError::Driver(d) => driver_error(d),
                    pinch_isac::sweep::NamedSchemeError::Baseline(m) => infeasible_err(m),
                })?;
            let json = serde_json::to_string_pretty(&sol)
                .map_err(|e| numerical_err(format!("serialize: {e}")))?;
            emit(&common.out, &json)?;
            eprintln!(
                "scheme={scheme} s_star={} log_bound={:.6} mc_outage={:.6} +- {:.6} feasible={}",
                sol.s_star,
                sol.chernoff.log_bound,
                sol.mc_outage.p_hat,
                sol.mc_outage.std_err,
                sol.rate_feasible
            );
            Ok(())
        }
        Command::Sweep { common, sweep, scheme } => {
            let cfg = load_cfg(&common.scenario)?;
            let (param_str, values_str) = sweep
                .split_once('=')
                .ok_or_else(|| parse_err("--sweep expects PARAM=v1,v2,..."))?;
            let param = SweepParam::from_str(param_str).map_err(parse_err)?;
            let values: Vec<f64> = values_str
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| parse_err(format!("bad value `{v}`"))))
                .collect::<Result<_, _>>()?;
            let schemes: Vec<Scheme> = match scheme {
                None => Scheme::all().to_vec(),
                Some(list) => list
                    .split(',')
                    .map(|s| Scheme::from_str(s.trim()).map_err(parse_err))
                    .collect::<Result<_, _>>()?,
            };
            let spec = SweepSpec {
                param,
                values,
                samples: common.samples,
                schemes,
                seed: common.seed,
            };
            let settings = DriverSettings {
                s_grid: parse_s_grid(&common.s_grid)?,
                ..DriverSettings::default()
            };
            let rows = run_sweep(&cfg, &spec, &settings).map_err(|e| parse_err(e.to_string()))?;
            emit(&common.out, &sweep_csv(&rows))?;
            let failures = rows.iter().filter(|r| r.status != "ok").count();
            eprintln!("sweep complete: {} points, {failures} failed", rows.len());
            Ok(())
        }
        Command::Field { common, solution, field_res } => {
            let cfg = load_cfg(&common.scenario)?;
            let text = std::fs::read_to_string(&solution)
                .map_err(|e| parse_err(format!("cannot read {}: {e}", solution.display())))?;
            let sol: pinch_isac::driver::SolutionBundle =
                serde_json::from_str(&text).map_err(|e| parse_err(format!("solution JSON: {e}")))?;
            if field_res <= 0.0 {
                return Err(parse_err("--field-res must be positive"));
            }
            let cells = field_map(&cfg, &sol, field_res);
            emit(&common.out, &field_csv(&cells))?;
            Ok(())
        }
        Command::Oracle { common, grid_points, tau_points } => {
            let cfg = load_cfg(&common.scenario)?;
            let budget = OracleBudget { position_grid_points: grid_points, tau_grid_points: tau_points };
            let res = enumerate(&cfg, &budget, common.samples, common.seed)
                .map_err(|e| infeasible_err(e.to_string()))?;
            emit(&common.out, &table_csv(&res))?;
            eprintln!(
                "oracle: {} candidates, {} feasible; best log-bound {:.6}, best MC outage {:.6}",
                res.candidates, res.feasible, res.best_chernoff.log_bound, res.best_mc.mc_outage
            );
            Ok(())
        }
    }
}
