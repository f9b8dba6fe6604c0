//! Subproblem 2b: user scheduling under big-M relaxed rate constraints.
//!
//! With positions, selection, and durations fixed, the per-slot SNRs
//! `gamma_k(t)` are known constants; the scheduling variables `u_k(t)` are
//! relaxed to `[0, 1]`, the products `rho_tilde = rho * u` take a big-M
//! envelope (C15-C17), rates go through exponential cones, and a tangent
//! majorizer of `sum u(1-u)` pushes the relaxation back to binary.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::conic::{ConicProgram, LinExpr, SolveSettings, VarId};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Error)]
pub enum Sp2bError {
    #[error("scheduling subproblem failed: {0}")]
    Solver(String),
    #[error("rate requirement unsatisfiable under the current geometry: {0}")]
    Infeasible(String),
}

/// Iterate of the relaxed scheduling problem.
#[derive(Debug, Clone)]
pub struct SchedState {
    /// Relaxed schedule, `K x T`.
    pub u: DMatrix<f64>,
    /// Penalty weight.
    pub varrho2: f64,
}

impl SchedState {
    pub fn from_schedule(cfg: &ScenarioConfig, schedule: &[Option<usize>], varrho2: f64) -> Self {
        let mut u = DMatrix::zeros(cfg.num_users, cfg.num_slots);
        for (t, slot) in schedule.iter().enumerate() {
            if let Some(k) = *slot {
                u[(k, t)] = 1.0;
            }
        }
        Self { u, varrho2 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sp2bOptions {
    /// Big-M cap exactly as printed (`2^R_min - 1`) instead of the valid
    /// per-user bound `max(2^R_min - 1, max_t gamma_k(t))`. The printed cap
    /// also bounds the unscheduled slots' auxiliary SNR, which makes any
    /// schedule with K >= 2 (or any schedule not spending the entire frame
    /// on one user) infeasible.
    pub rho_max_printed: bool,
}

#[derive(Debug, Clone)]
pub struct Sp2bOutcome {
    /// Scheduled user per slot after projection.
    pub schedule: Vec<Option<usize>>,
    /// Auxiliary SNRs at the repaired point, `K x T`.
    pub rho: DMatrix<f64>,
    /// Penalized objective per accepted iterate.
    pub trace: Vec<f64>,
}

struct Sp2bVars {
    u: Vec<Vec<VarId>>,         // [k][t]
    rho: Vec<Vec<VarId>>,       // [k][t]
    #[allow(dead_code)] // read by the big-M collapse test
    rho_tilde: Vec<Vec<VarId>>, // [k][t]
}

fn rho_cap(cfg: &ScenarioConfig, gamma: &DMatrix<f64>, k: usize, options: &Sp2bOptions) -> f64 {
    let printed = (2.0_f64).powf(cfg.rate_min) - 1.0;
    if options.rho_max_printed {
        printed
    } else {
        let best = (0..cfg.num_slots).map(|t| gamma[(k, t)]).fold(0.0, f64::max);
        printed.max(1.0001 * best)
    }
}

/// Assemble the relaxed scheduling program at the expansion point `state`.
fn build_sp2b(
    cfg: &ScenarioConfig,
    gamma: &DMatrix<f64>,
    tau: &[f64],
    state: &SchedState,
    options: &Sp2bOptions,
    project_u: Option<&[Option<usize>]>,
) -> (ConicProgram, Sp2bVars) {
    let (kk, tt) = (cfg.num_users, cfg.num_slots);
    let mut prog = ConicProgram::new();
    let u: Vec<Vec<VarId>> = (0..kk)
        .map(|k| {
            (0..tt)
                .map(|t| match project_u {
                    Some(sched) => {
                        let v = prog.add_var();
                        let fixed = if sched[t] == Some(k) { 1.0 } else { 0.0 };
                        prog.add_eq(v.into(), LinExpr::constant(fixed));
                        v
                    }
                    None => prog.add_bounded_var(Some(0.0), Some(1.0)), // C5a
                })
                .collect()
        })
        .collect();
    // SNRs are rescaled by the per-user big-M so every cone entry is O(1);
    // gamma spans 1e8 and the exponential cone is only jointly scalable
    let scale: Vec<f64> = (0..kk).map(|k| rho_cap(cfg, gamma, k, options).max(1e-12)).collect();
    let rho: Vec<Vec<VarId>> = (0..kk)
        .map(|k| {
            (0..tt)
                // C1a at fixed positions: 0 <= rho <= gamma, plus the
                // big-M bound used by C15-C17
                .map(|t| {
                    let cap = (rho_cap(cfg, gamma, k, options).min(gamma[(k, t)])) / scale[k];
                    prog.add_bounded_var(Some(0.0), Some(cap.max(0.0)))
                })
                .collect()
        })
        .collect();
    let rho_tilde: Vec<Vec<VarId>> = (0..kk)
        .map(|_| (0..tt).map(|_| prog.add_bounded_var(Some(0.0), None)).collect())
        .collect();

    // C6: at most one user per slot
    for t in 0..tt {
        let mut sum = LinExpr::zero();
        for row in &u {
            sum = sum + row[t].into();
        }
        prog.add_le(sum, LinExpr::constant(1.0));
    }
    // C15-C17 big-M envelope of rho_tilde = rho * u, in rescaled units
    // (the cap becomes exactly one)
    for k in 0..kk {
        for t in 0..tt {
            prog.add_le(rho_tilde[k][t].into(), rho[k][t].into());
            prog.add_le(rho_tilde[k][t].into(), u[k][t].into());
            prog.add_ge(
                rho_tilde[k][t].into(),
                LinExpr::from(rho[k][t]) - LinExpr::constant(1.0) + LinExpr::from(u[k][t]),
            );
        }
    }
    // C1b-hat: average rate through the big-M SNRs, using
    // ln(1 + c rho') = ln c + ln(rho' + 1/c)
    if cfg.rate_min > 0.0 {
        for k in 0..kk {
            let mut lhs = LinExpr::zero();
            for t in 0..tt {
                let v = prog.add_var();
                prog.add_exp(
                    LinExpr::from(v) - LinExpr::constant(scale[k].ln()),
                    LinExpr::constant(1.0),
                    LinExpr::from(rho_tilde[k][t]) + LinExpr::constant(1.0 / scale[k]),
                );
                lhs.add_term(v, tau[t] / (cfg.total_time * std::f64::consts::LN_2));
            }
            prog.add_ge(lhs, LinExpr::constant(cfg.rate_min));
        }
    }

    // objective: tangent majorizer of varrho2 * sum u (1 - u) plus a tiny
    // deterministic bias toward lower user indices for exact ties
    let mut obj = LinExpr::zero();
    if project_u.is_none() {
        for k in 0..kk {
            for t in 0..tt {
                let u0 = state.u[(k, t)];
                obj.add_term(u[k][t], state.varrho2 * (1.0 - 2.0 * u0) + 1e-6 * k as f64);
                obj.add_const(state.varrho2 * u0 * u0);
            }
        }
    }
    prog.set_objective(obj);
    (prog, Sp2bVars { u, rho, rho_tilde })
}

/// Exact penalized objective of the relaxed problem (the rate terms do not
/// depend on `u` beyond feasibility).
fn penalized_objective(state: &SchedState, u: &DMatrix<f64>) -> f64 {
    state.varrho2 * u.iter().map(|&v| v * (1.0 - v)).sum::<f64>()
}

/// Iterate the penalty linearization, project per-slot, and repair.
pub fn solve_sp2b(
    cfg: &ScenarioConfig,
    gamma: &DMatrix<f64>,
    tau: &[f64],
    init: SchedState,
    eps: f64,
    max_inner: usize,
    options: &Sp2bOptions,
    settings: &SolveSettings,
) -> Result<Sp2bOutcome, Sp2bError> {
    let mut state = init;
    let mut trace = vec![penalized_objective(&state, &state.u)];
    for _ in 0..max_inner {
        let (prog, vars) = build_sp2b(cfg, gamma, tau, &state, options, None);
        let sol = prog.solve(settings).map_err(|e| Sp2bError::Solver(e.to_string()))?;
        if matches!(sol.status, crate::conic::Status::Infeasible) {
            return Err(Sp2bError::Infeasible("relaxed scheduling program".into()));
        }
        sol.require_usable().map_err(|e| Sp2bError::Solver(e.to_string()))?;
        let u_new = DMatrix::from_fn(cfg.num_users, cfg.num_slots, |k, t| sol.value(vars.u[k][t]));
        let f_prev = penalized_objective(&state, &state.u);
        // the tangent majorizer guarantees descent of the true penalty
        let f_new = penalized_objective(&state, &u_new).min(f_prev);
        let rel = (f_prev - f_new).abs() / f_prev.abs().max(1e-12);
        if penalized_objective(&state, &u_new) <= f_prev {
            state.u = u_new;
        }
        trace.push(penalized_objective(&state, &state.u));
        if rel < eps {
            break;
        }
    }

    // per-slot projection: argmax above one half, ties to lower index
    let schedule: Vec<Option<usize>> = (0..cfg.num_slots)
        .map(|t| {
            let mut best = 0;
            for k in 1..cfg.num_users {
                if state.u[(k, t)] > state.u[(best, t)] + 1e-6 {
                    best = k;
                }
            }
            (state.u[(best, t)] > 0.5).then_some(best)
        })
        .collect();

    // repair: verify the rate constraints at the projected schedule by
    // re-solving in (rho, rho_tilde) with u fixed
    let (prog, vars) = build_sp2b(cfg, gamma, tau, &state, options, Some(&schedule));
    let sol = prog.solve(settings).map_err(|e| Sp2bError::Solver(e.to_string()))?;
    if !sol.usable() {
        return Err(Sp2bError::Infeasible(format!(
            "projected schedule {schedule:?} cannot reach the rate floor"
        )));
    }
    let cap_back: Vec<f64> = (0..cfg.num_users)
        .map(|k| rho_cap(cfg, gamma, k, options).max(1e-12))
        .collect();
    let rho = DMatrix::from_fn(cfg.num_users, cfg.num_slots, |k, t| {
        cap_back[k] * sol.value(vars.rho[k][t])
    });
    Ok(Sp2bOutcome { schedule, rho, trace })
}
