//! Subproblem 1: cluster selection and slot-duration optimization.
//!
//! For fixed antenna positions and user schedule, minimizes the linearized
//! Chernoff surrogate over the relaxed selection matrix `b`, durations
//! `tau`, and the big-M products `p_m(t) = tau(t) b_m(t)`. The binary
//! constraint is moved to the objective as the tangent majorizer of the
//! concave violation `sum b(1-b)`, with a doubling penalty schedule. Each
//! LP step is followed by an exact line search on the true penalized
//! surrogate, so the recorded trace is non-increasing per penalty level.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::channel::psi_gain;
use crate::conic::{ConicProgram, LinExpr, SolveSettings, VarId};
use crate::outage::{logdet_i_plus_s_rq, symmetrized};
use crate::rcs::RcsModel;
use crate::scenario::ScenarioConfig;

#[derive(Debug, Error)]
pub enum Sp1Error {
    #[error("subproblem 1 infeasible: {0}")]
    Infeasible(String),
    #[error("subproblem 1 solver failure: {0}")]
    Solver(String),
}

/// Inputs precomputed from the current positions and schedule.
#[derive(Debug, Clone)]
pub struct Sp1Inputs {
    /// `rates[t][(k, m)]`: achievable rate of user `k` in slot `t` when
    /// cluster `m` is active, at the slot's current antenna positions.
    pub rates: Vec<DMatrix<f64>>,
    /// `gains[(m, t)]`: coherent sensing gain of cluster `m` in slot `t`.
    pub gains: DMatrix<f64>,
    /// Fixed user schedule, one optional user per slot.
    pub schedule: Vec<Option<usize>>,
}

/// Iterate of the relaxed selection problem.
#[derive(Debug, Clone)]
pub struct Sp1State {
    /// Relaxed selection, `M x T`, columns sum to one.
    pub b: DMatrix<f64>,
    /// Slot durations, length `T`.
    pub tau: DVector<f64>,
    /// Big-M surrogate `p_m(t)` for `tau(t) b_m(t)`, `M x T`.
    pub p: DMatrix<f64>,
}

impl Sp1State {
    /// Consistent state for an integral selection.
    pub fn from_selection(cfg: &ScenarioConfig, active: &[usize], tau: &[f64]) -> Self {
        let (m, t) = (cfg.num_clusters, cfg.num_slots);
        let mut b = DMatrix::zeros(m, t);
        let mut p = DMatrix::zeros(m, t);
        for (slot, &cl) in active.iter().enumerate() {
            b[(cl, slot)] = 1.0;
            p[(cl, slot)] = tau[slot];
        }
        Self { b, tau: DVector::from_row_slice(tau), p }
    }
}

/// Structural freezes used by the baseline schemes.
#[derive(Debug, Clone, Default)]
pub struct Sp1Options {
    /// Force `b_m(t) = b_m(1)` for all slots.
    pub same_cluster: bool,
    /// Freeze the slot durations.
    pub fixed_tau: Option<Vec<f64>>,
}

/// Result of the inner selection loop.
#[derive(Debug, Clone)]
pub struct Sp1Outcome {
    /// One-hot selection after projection, as the active cluster per slot.
    pub active: Vec<usize>,
    pub tau: DVector<f64>,
    /// True penalized surrogate value per accepted inner iterate, with the
    /// penalty level in force at that iterate.
    pub trace: Vec<(f64, f64)>,
    /// Chernoff surrogate (no penalty) at the projected, re-solved point.
    pub objective: f64,
}

/// Diagonal coefficients of the log-det linearization at `q_l`:
/// `g_m = s [(I + s R Q)^{-1} R]_{mm}`, the exact gradient of
/// `logdet(I + s R Q)` in `q_m`.
pub fn logdet_gradient(q_l: &[f64], model: &RcsModel, s: f64) -> Vec<f64> {
    let m = model.dim();
    let a = symmetrized(q_l, model, s);
    let chol = a.cholesky().expect("I + s F^T Q F is positive definite");
    // (I + s R Q)^{-1} R = F (I + s F^T Q F)^{-1} F^T
    let x = chol.solve(&model.factor().transpose());
    (0..m)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..m {
                acc += model.factor()[(i, j)] * x[(j, i)];
            }
            s * acc
        })
        .collect()
}

struct Sp1Vars {
    b: Vec<Vec<VarId>>,   // [m][t]
    tau: Vec<VarId>,      // [t]
    p: Vec<Vec<VarId>>,   // [m][t]
}

/// Assemble the linear program of one SCA iteration.
///
/// Objective: `s G_th - logdet(A_l) - sum_m g_m (q_m(p) - q_m^l) +
/// rho * sum (b^l (1-b^l) + (1-2 b^l)(b - b^l))`, all affine in `(b, p)`.
fn build_sp1(
    cfg: &ScenarioConfig,
    inputs: &Sp1Inputs,
    state: &Sp1State,
    model: &RcsModel,
    s: f64,
    rho: f64,
    options: &Sp1Options,
    project_b: Option<&[usize]>,
) -> (ConicProgram, Sp1Vars) {
    let (m_cl, t_sl) = (cfg.num_clusters, cfg.num_slots);
    let t_max = cfg.total_time;
    let psi = psi_gain(cfg);
    let q_l = weights_from_p(cfg, inputs, &state.p);
    let g = logdet_gradient(&q_l, model, s);
    let logdet_l = logdet_i_plus_s_rq(&q_l, model, s);

    let mut prog = ConicProgram::new();
    let b: Vec<Vec<VarId>> = (0..m_cl)
        .map(|m| {
            (0..t_sl)
                .map(|t| match project_b {
                    Some(active) => {
                        let v = prog.add_var();
                        let fixed = if active[t] == m { 1.0 } else { 0.0 };
                        prog.add_eq(v.into(), LinExpr::constant(fixed));
                        v
                    }
                    None => prog.add_bounded_var(Some(0.0), Some(1.0)), // C4a
                })
                .collect()
        })
        .collect();
    let tau: Vec<VarId> = (0..t_sl)
        .map(|t| match &options.fixed_tau {
            Some(vals) => {
                let v = prog.add_var();
                prog.add_eq(v.into(), LinExpr::constant(vals[t]));
                v
            }
            None => prog.add_bounded_var(Some(cfg.min_slot), Some(t_max)), // C3 lower part
        })
        .collect();
    let p: Vec<Vec<VarId>> = (0..m_cl)
        .map(|_| (0..t_sl).map(|_| prog.add_var()).collect())
        .collect();

    // C2: one cluster per slot
    for t in 0..t_sl {
        let mut sum = LinExpr::zero();
        for row in &b {
            sum = sum + row[t].into();
        }
        prog.add_eq(sum, LinExpr::constant(1.0));
    }
    // C3: total budget
    let mut total = LinExpr::zero();
    for &v in &tau {
        total = total + v.into();
    }
    prog.add_le(total, LinExpr::constant(t_max));
    // baseline freeze: identical selection across slots
    if options.same_cluster {
        for m in 0..m_cl {
            for t in 1..t_sl {
                prog.add_eq(b[m][t].into(), b[m][0].into());
            }
        }
    }
    // C8 and C9: big-M envelope of p = tau * b
    for m in 0..m_cl {
        for t in 0..t_sl {
            prog.add_ge(p[m][t].into(), LinExpr::constant(0.0));
            prog.add_le(p[m][t].into(), LinExpr::term(b[m][t], t_max));
            prog.add_le(p[m][t].into(), tau[t].into());
            prog.add_ge(
                p[m][t].into(),
                LinExpr::from(tau[t]) - LinExpr::constant(t_max) + LinExpr::term(b[m][t], t_max),
            );
        }
    }
    // valid cut from C2: sum_m p_m(t) = tau(t) (p = tau b and the columns
    // of b sum to one); removes the double-counting slack of the envelope
    // at fractional b
    for t in 0..t_sl {
        let mut sum = LinExpr::zero();
        for row in &p {
            sum = sum + row[t].into();
        }
        prog.add_eq(sum, tau[t].into());
    }
    // C1: average rate per user, summed over clusters
    if cfg.rate_min > 0.0 {
        for k in 0..cfg.num_users {
            let mut lhs = LinExpr::zero();
            let mut served = false;
            for (t, slot_user) in inputs.schedule.iter().enumerate() {
                if *slot_user == Some(k) {
                    served = true;
                    for m in 0..m_cl {
                        lhs.add_term(p[m][t], inputs.rates[t][(k, m)] / t_max);
                    }
                }
            }
            // an unserved user makes the program trivially infeasible;
            // encode it honestly so the solver certifies it
            if !served {
                lhs = LinExpr::zero();
            }
            prog.add_ge(lhs, LinExpr::constant(cfg.rate_min));
        }
    }

    // objective
    let mut obj = LinExpr::constant(s * cfg.snr_threshold - logdet_l);
    for m in 0..m_cl {
        let coef = -g[m] * psi / t_max;
        for t in 0..t_sl {
            obj.add_term(p[m][t], coef * inputs.gains[(m, t)]);
        }
        obj.add_const(g[m] * q_l[m]);
    }
    if project_b.is_none() {
        // deterministic tie-break: bias exactly-tied optima toward the
        // lowest cluster index, far below solver tolerance elsewhere
        let scale: f64 = (0..m_cl)
            .map(|m| g[m] * psi * inputs.gains.row(m).sum() / (m_cl * t_sl) as f64)
            .sum::<f64>()
            .abs()
            .max(1e-12);
        for m in 0..m_cl {
            for t in 0..t_sl {
                let b0 = state.b[(m, t)];
                obj.add_term(b[m][t], rho * (1.0 - 2.0 * b0) + 1e-6 * scale * m as f64);
                obj.add_const(rho * b0 * b0);
            }
        }
    }
    prog.set_objective(obj);
    (prog, Sp1Vars { b, tau, p })
}

fn weights_from_p(cfg: &ScenarioConfig, inputs: &Sp1Inputs, p: &DMatrix<f64>) -> Vec<f64> {
    let psi = psi_gain(cfg);
    (0..cfg.num_clusters)
        .map(|m| {
            let mut acc = 0.0;
            for t in 0..cfg.num_slots {
                acc += p[(m, t)] / cfg.total_time * inputs.gains[(m, t)];
            }
            psi * acc
        })
        .collect()
}

/// True penalized surrogate at a relaxed point (exact log-det, exact
/// concave penalty).
fn penalized_objective(
    cfg: &ScenarioConfig,
    inputs: &Sp1Inputs,
    model: &RcsModel,
    s: f64,
    rho: f64,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let q = weights_from_p(cfg, inputs, p);
    let mut pen = 0.0;
    for v in b.iter() {
        pen += v * (1.0 - v);
    }
    s * cfg.snr_threshold - logdet_i_plus_s_rq(&q, model, s) + rho * pen
}

/// Chernoff surrogate (no penalty) at an integral selection.
pub fn surrogate_at(
    cfg: &ScenarioConfig,
    inputs: &Sp1Inputs,
    model: &RcsModel,
    s: f64,
    active: &[usize],
    tau: &[f64],
) -> f64 {
    let state = Sp1State::from_selection(cfg, active, tau);
    let q = weights_from_p(cfg, inputs, &state.p);
    s * cfg.snr_threshold - logdet_i_plus_s_rq(&q, model, s)
}

/// Iterate linearize/solve/line-search to convergence, then project the
/// selection to one-hot columns and restore feasibility of `(tau, p)`.
pub fn solve_sp1(
    cfg: &ScenarioConfig,
    inputs: &Sp1Inputs,
    init: Sp1State,
    model: &RcsModel,
    s: f64,
    eps: f64,
    max_inner: usize,
    options: &Sp1Options,
    settings: &SolveSettings,
) -> Result<Sp1Outcome, Sp1Error> {
    let mut state = init;
    let f0 = penalized_objective(cfg, inputs, model, s, 0.0, &state.b, &state.p);
    let mut rho = 10.0 * f0.abs().max(1.0);
    let rho_cap = 1e6;
    let mut trace = vec![(rho, penalized_objective(cfg, inputs, model, s, rho, &state.b, &state.p))];

    for _ in 0..max_inner {
        let (prog, vars) = build_sp1(cfg, inputs, &state, model, s, rho, options, None);
        let sol = prog
            .solve(settings)
            .map_err(|e| Sp1Error::Solver(e.to_string()))?;
        if matches!(sol.status, crate::conic::Status::Infeasible) {
            return Err(Sp1Error::Infeasible("relaxed selection program".into()));
        }
        sol.require_usable().map_err(|e| Sp1Error::Solver(e.to_string()))?;
        let cand = Sp1State {
            b: DMatrix::from_fn(cfg.num_clusters, cfg.num_slots, |m, t| sol.value(vars.b[m][t])),
            tau: DVector::from_fn(cfg.num_slots, |t, _| sol.value(vars.tau[t])),
            p: DMatrix::from_fn(cfg.num_clusters, cfg.num_slots, |m, t| sol.value(vars.p[m][t])),
        };
        // exact descent step along the segment to the LP optimizer
        let f_prev = penalized_objective(cfg, inputs, model, s, rho, &state.b, &state.p);
        let eval = |alpha: f64| {
            let bx = &state.b * (1.0 - alpha) + &cand.b * alpha;
            let px = &state.p * (1.0 - alpha) + &cand.p * alpha;
            penalized_objective(cfg, inputs, model, s, rho, &bx, &px)
        };
        let alpha = golden_min_unit(&eval);
        let f_alpha = eval(alpha);
        let (f_new, accepted) = if eval(1.0) <= f_alpha.min(f_prev) {
            (eval(1.0), 1.0)
        } else if f_alpha < f_prev {
            (f_alpha, alpha)
        } else {
            (f_prev, 0.0)
        };
        if accepted > 0.0 {
            state = Sp1State {
                b: &state.b * (1.0 - accepted) + &cand.b * accepted,
                tau: &state.tau * (1.0 - accepted) + &cand.tau * accepted,
                p: &state.p * (1.0 - accepted) + &cand.p * accepted,
            };
        }
        trace.push((rho, f_new));
        let converged = (f_prev - f_new).abs() <= eps * f_prev.abs().max(1e-12);
        if converged {
            if is_integral(&state.b) || rho >= rho_cap {
                break;
            }
            rho = (rho * 2.0).min(rho_cap);
        }
    }

    // projection: per-slot argmax, ties to the lowest cluster index
    let active: Vec<usize> = (0..cfg.num_slots)
        .map(|t| {
            let col = state.b.column(t);
            let mut best = 0;
            for m in 1..cfg.num_clusters {
                if col[m] > col[best] + 1e-6 {
                    best = m;
                }
            }
            best
        })
        .collect();

    // feasibility-restoring resolve in (tau, p) with b fixed
    let (prog, vars) = build_sp1(cfg, inputs, &state, model, s, 0.0, options, Some(&active));
    let sol = prog
        .solve(settings)
        .map_err(|e| Sp1Error::Solver(e.to_string()))?;
    if !sol.usable() {
        return Err(Sp1Error::Infeasible(format!(
            "projected selection {active:?} cannot satisfy the rate constraints"
        )));
    }
    let mut refined = Sp1State {
        b: DMatrix::from_fn(cfg.num_clusters, cfg.num_slots, |m, t| sol.value(vars.b[m][t])),
        tau: DVector::from_fn(cfg.num_slots, |t, _| sol.value(vars.tau[t])),
        p: DMatrix::from_fn(cfg.num_clusters, cfg.num_slots, |m, t| sol.value(vars.p[m][t])),
    };
    let mut active = active;

    // single-switch descent on the integral selection: the penalty majorizer
    // pins the relaxation to its starting vertex, so scan cluster swaps that
    // the relaxation cannot reach; pure surrogate evaluations, rates checked
    for _ in 0..4 {
        let tau_now: Vec<f64> = refined.tau.iter().copied().collect();
        let mut improved = false;
        let mut best_val = surrogate_at(cfg, inputs, model, s, &active, &tau_now);
        if options.same_cluster {
            for m in 0..cfg.num_clusters {
                let cand = vec![m; cfg.num_slots];
                if !rates_feasible(cfg, inputs, &cand, &tau_now) {
                    continue;
                }
                let val = surrogate_at(cfg, inputs, model, s, &cand, &tau_now);
                if val < best_val - 1e-12 {
                    best_val = val;
                    active = cand;
                    improved = true;
                }
            }
        } else {
            for t in 0..cfg.num_slots {
                for m in 0..cfg.num_clusters {
                    if m == active[t] {
                        continue;
                    }
                    let mut cand = active.clone();
                    cand[t] = m;
                    if !rates_feasible(cfg, inputs, &cand, &tau_now) {
                        continue;
                    }
                    let val = surrogate_at(cfg, inputs, model, s, &cand, &tau_now);
                    if val < best_val - 1e-12 {
                        best_val = val;
                        active = cand;
                        improved = true;
                    }
                }
            }
        }
        if !improved {
            break;
        }
        let (prog, vars) = build_sp1(cfg, inputs, &refined, model, s, 0.0, options, Some(&active));
        match prog.solve(settings) {
            Ok(sol) if sol.usable() => {
                refined = Sp1State {
                    b: DMatrix::from_fn(cfg.num_clusters, cfg.num_slots, |m, t| sol.value(vars.b[m][t])),
                    tau: DVector::from_fn(cfg.num_slots, |t, _| sol.value(vars.tau[t])),
                    p: DMatrix::from_fn(cfg.num_clusters, cfg.num_slots, |m, t| sol.value(vars.p[m][t])),
                };
            }
            _ => break,
        }
    }
    // duration refinement: the surrogate is convex in p, so descend it by
    // repeated tangent LPs with exact line search until the linearization
    // gap closes
    for _ in 0..60 {
        let f_prev = penalized_objective(cfg, inputs, model, s, 0.0, &refined.b, &refined.p);
        let (prog, vars) = build_sp1(cfg, inputs, &refined, model, s, 0.0, options, Some(&active));
        let sol = match prog.solve(settings) {
            Ok(sol) if sol.usable() => sol,
            _ => break,
        };
        let gap = f_prev - sol.objective;
        let cand = Sp1State {
            b: refined.b.clone(),
            tau: DVector::from_fn(cfg.num_slots, |t, _| sol.value(vars.tau[t])),
            p: DMatrix::from_fn(cfg.num_clusters, cfg.num_slots, |m, t| sol.value(vars.p[m][t])),
        };
        let eval = |alpha: f64| {
            let px = &refined.p * (1.0 - alpha) + &cand.p * alpha;
            penalized_objective(cfg, inputs, model, s, 0.0, &refined.b, &px)
        };
        let alpha = golden_min_unit(&eval);
        let best = [alpha, 1.0]
            .into_iter()
            .min_by(|&a, &b| eval(a).partial_cmp(&eval(b)).unwrap())
            .unwrap();
        if eval(best) < f_prev {
            refined = Sp1State {
                b: refined.b.clone(),
                tau: &refined.tau * (1.0 - best) + &cand.tau * best,
                p: &refined.p * (1.0 - best) + &cand.p * best,
            };
        }
        if gap.abs() <= 1e-9 * f_prev.abs().max(1.0) {
            break;
        }
    }
    // snap the interior-point answer into the exact budget simplex
    let mut tau_slice: Vec<f64> = refined.tau.iter().map(|&v| v.max(cfg.min_slot)).collect();
    let total: f64 = tau_slice.iter().sum();
    if total > cfg.total_time {
        let floor = cfg.num_slots as f64 * cfg.min_slot;
        let scale = (cfg.total_time - floor) / (total - floor).max(1e-300);
        for v in &mut tau_slice {
            *v = cfg.min_slot + (*v - cfg.min_slot) * scale;
        }
    }
    let tau = DVector::from_row_slice(&tau_slice);
    let objective = surrogate_at(cfg, inputs, model, s, &active, &tau_slice);
    Ok(Sp1Outcome { active, tau, trace, objective })
}

fn is_integral(b: &DMatrix<f64>) -> bool {
    b.iter().all(|&v| v < 1e-6 || v > 1.0 - 1e-6)
}

/// Direct rate check of C1 at an integral selection with fixed durations.
fn rates_feasible(cfg: &ScenarioConfig, inputs: &Sp1Inputs, active: &[usize], tau: &[f64]) -> bool {
    if cfg.rate_min == 0.0 {
        return true;
    }
    (0..cfg.num_users).all(|k| {
        let r: f64 = inputs
            .schedule
            .iter()
            .enumerate()
            .filter(|(_, u)| **u == Some(k))
            .map(|(t, _)| tau[t] / cfg.total_time * inputs.rates[t][(k, active[t])])
            .sum();
        r >= cfg.rate_min - 1e-9
    })
}

/// Golden-section minimizer on the unit interval.
fn golden_min_unit(f: &impl Fn(f64) -> f64) -> f64 {
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..40 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{comm_rate, cluster_sensing_gain, AntennaLayout};
    use crate::rcs::build_covariance;
    use crate::scenario::load_scenario;
    use approx::assert_relative_eq;

    fn desk_cfg(m: usize, t: usize, k: usize, rate_min: f64) -> ScenarioConfig {
        let users = if k == 1 {
            r#"[{"x": 3.0, "y": 2.0}]"#.to_string()
        } else {
            r#"[{"x": 3.0, "y": 2.0}, {"x": 7.0, "y": 3.0}]"#.to_string()
        };
        let (cfg, _) = load_scenario(&format!(
            r#"{{
                "waveguide_length": 10.0, "height": 3.0, "num_clusters": {m},
                "antennas_per_cluster": 1, "receive_antennas": 8,
                "num_users": {k}, "user_positions": {users},
                "target_position": {{"x": 5.0, "y": 5.0}},
                "num_slots": {t}, "total_time": 0.008,
                "carrier": 3.0e10, "refractive_index": 1.4, "attenuation": 0.18,
                "transmit_power": 1.0e4, "noise_power": 1.0e-12,
                "snr_threshold": 10.0, "rate_min": {rate_min}, "rcs_mean": 1.0
            }}"#
        ))
        .unwrap();
        cfg
    }

    fn inputs_for(cfg: &ScenarioConfig, layout: &AntennaLayout, schedule: Vec<Option<usize>>) -> Sp1Inputs {
        let rates = (0..cfg.num_slots)
            .map(|_| {
                DMatrix::from_fn(cfg.num_users, cfg.num_clusters, |k, m| comm_rate(cfg, layout, m, k))
            })
            .collect();
        let gains = DMatrix::from_fn(cfg.num_clusters, cfg.num_slots, |m, _| {
            cluster_sensing_gain(cfg, layout, m)
        });
        Sp1Inputs { rates, gains, schedule }
    }

    fn model_for(cfg: &ScenarioConfig) -> RcsModel {
        build_covariance(&cfg.look_angles(), cfg.rcs_mean, cfg.rcs_decay).unwrap()
    }

    #[test]
    fn gradient_at_zero_weights_is_s_times_diagonal() {
        let model = build_covariance(&[0.2, 0.8, 1.4], 1.5, 0.3).unwrap();
        let g = logdet_gradient(&[0.0; 3], &model, 0.7);
        for gm in g {
            assert_relative_eq!(gm, 0.7 * 1.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn gradient_scalar_closed_form() {
        let model = build_covariance(&[0.5], 2.0, 0.1).unwrap();
        let (s, q) = (0.9, 3.0);
        let g = logdet_gradient(&[q], &model, s);
        assert_relative_eq!(g[0], s * 2.0 / (1.0 + s * 2.0 * q), epsilon = 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = build_covariance(&[0.1, 0.6, 1.1, 2.0], 1.0, 0.2).unwrap();
        let q = [0.4, 2.0, 0.0, 1.3];
        let s = 0.8;
        let g = logdet_gradient(&q, &model, s);
        for m in 0..4 {
            let h = 1e-5;
            let mut qp = q;
            qp[m] += h;
            let mut qm = q;
            qm[m] -= h;
            let fd = (logdet_i_plus_s_rq(&qp, &model, s) - logdet_i_plus_s_rq(&qm, &model, s)) / (2.0 * h);
            assert_relative_eq!(g[m], fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn single_cluster_is_forced_and_budget_fills() {
        let cfg = desk_cfg(1, 2, 1, 0.5);
        let layout = AntennaLayout::uniform(&cfg);
        let inputs = inputs_for(&cfg, &layout, vec![Some(0), Some(0)]);
        let model = model_for(&cfg);
        let init = Sp1State::from_selection(&cfg, &[0, 0], &[cfg.total_time / 2.0; 2]);
        let out = solve_sp1(&cfg, &inputs, init, &model, 0.1, 1e-4, 20, &Sp1Options::default(), &SolveSettings::default()).unwrap();
        assert_eq!(out.active, vec![0, 0]);
        let total: f64 = out.tau.iter().sum();
        assert_relative_eq!(total, cfg.total_time, max_relative = 1e-6);
    }

    /// Enumerate every one-hot selection with a fine duration grid. The
    /// surrogate is convex in the durations, so the grid (not a vertex
    /// rule) is the honest reference.
    fn enumeration_oracle(cfg: &ScenarioConfig, inputs: &Sp1Inputs, model: &RcsModel, s: f64) -> f64 {
        let mut best = f64::INFINITY;
        for a0 in 0..cfg.num_clusters {
            for a1 in 0..cfg.num_clusters {
                for i in 0..=200 {
                    let t1 = cfg.min_slot
                        + (cfg.total_time - 2.0 * cfg.min_slot) * i as f64 / 200.0;
                    let tau = [t1, cfg.total_time - t1];
                    if cfg.rate_min > 0.0 {
                        // user 0 is scheduled in both slots here
                        let r: f64 = (0..2)
                            .map(|t| tau[t] / cfg.total_time * inputs.rates[t][(0, [a0, a1][t])])
                            .sum();
                        if r < cfg.rate_min {
                            continue;
                        }
                    }
                    best = best.min(surrogate_at(cfg, inputs, model, s, &[a0, a1], &tau));
                }
            }
        }
        best
    }

    #[test]
    fn matches_duration_grid_oracle_without_rate_constraint() {
        let cfg = desk_cfg(3, 2, 1, 0.0);
        let layout = AntennaLayout::uniform(&cfg);
        let inputs = inputs_for(&cfg, &layout, vec![Some(0), Some(0)]);
        let model = model_for(&cfg);
        let init = Sp1State::from_selection(&cfg, &[0, 1], &[cfg.total_time / 2.0; 2]);
        let s = 0.1;
        let out = solve_sp1(&cfg, &inputs, init, &model, s, 1e-5, 40, &Sp1Options::default(), &SolveSettings::default()).unwrap();
        let best = enumeration_oracle(&cfg, &inputs, &model, s);
        assert!(
            out.objective <= best + 0.01 * best.abs().max(0.02),
            "{} vs oracle {best}",
            out.objective
        );
    }

    #[test]
    fn matches_duration_grid_oracle_with_rate_constraint() {
        let cfg = desk_cfg(3, 2, 1, 0.5);
        let layout = AntennaLayout::uniform(&cfg);
        let inputs = inputs_for(&cfg, &layout, vec![Some(0), Some(0)]);
        let model = model_for(&cfg);
        let s = 0.05;
        let init = Sp1State::from_selection(&cfg, &[0, 1], &[cfg.total_time / 2.0; 2]);
        let out = solve_sp1(&cfg, &inputs, init, &model, s, 1e-5, 40, &Sp1Options::default(), &SolveSettings::default()).unwrap();
        let best = enumeration_oracle(&cfg, &inputs, &model, s);
        assert!(
            out.objective <= best + 0.01 * best.abs().max(0.02),
            "{} vs oracle {best}",
            out.objective
        );
    }

    #[test]
    fn huge_penalty_pins_integral_initialization() {
        let cfg = desk_cfg(3, 2, 1, 0.0);
        let layout = AntennaLayout::uniform(&cfg);
        let inputs = inputs_for(&cfg, &layout, vec![Some(0), Some(0)]);
        let model = model_for(&cfg);
        let init = Sp1State::from_selection(&cfg, &[2, 1], &[cfg.total_time / 2.0; 2]);
        // single inner iteration with the penalty already enormous
        let (prog, vars) = build_sp1(&cfg, &inputs, &init, &model, 0.1, 1e9, &Sp1Options::default(), None);
        let sol = prog.solve(&SolveSettings::default()).unwrap();
        for (t, &cl) in [2usize, 1].iter().enumerate() {
            for m in 0..3 {
                let expect = if m == cl { 1.0 } else { 0.0 };
                assert!((sol.value(vars.b[m][t]) - expect).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn symmetric_gains_tie_break_to_lower_index() {
        let cfg = desk_cfg(2, 1, 1, 0.0);
        let layout = AntennaLayout::uniform(&cfg);
        let mut inputs = inputs_for(&cfg, &layout, vec![Some(0)]);
        // force an exact tie
        let g = inputs.gains[(0, 0)];
        inputs.gains[(1, 0)] = g;
        let model = build_covariance(&[0.5, 0.5], 1.0, 0.1).unwrap();
        let init = Sp1State {
            b: DMatrix::from_column_slice(2, 1, &[0.5, 0.5]),
            tau: DVector::from_element(1, cfg.total_time),
            p: DMatrix::from_column_slice(2, 1, &[cfg.total_time / 2.0, cfg.total_time / 2.0]),
        };
        let out = solve_sp1(&cfg, &inputs, init, &model, 0.1, 1e-4, 10, &Sp1Options::default(), &SolveSettings::default()).unwrap();
        assert_eq!(out.active, vec![0]);
    }

    #[test]
    fn trace_is_monotone_within_each_penalty_level() {
        let cfg = desk_cfg(4, 3, 2, 0.5);
        let layout = AntennaLayout::uniform(&cfg);
        let inputs = inputs_for(&cfg, &layout, vec![Some(0), Some(1), Some(0)]);
        let model = model_for(&cfg);
        let init = Sp1State::from_selection(&cfg, &[0, 1, 2], &[cfg.total_time / 3.0; 3]);
        let out = solve_sp1(&cfg, &inputs, init, &model, 0.2, 1e-5, 30, &Sp1Options::default(), &SolveSettings::default()).unwrap();
        for w in out.trace.windows(2) {
            let ((r0, f0), (r1, f1)) = (w[0], w[1]);
            if r0 == r1 {
                assert!(f1 <= f0 + 1e-6 * f0.abs().max(1.0), "{f0} -> {f1}");
            }
        }
    }

    #[test]
    fn big_m_collapses_at_integral_selection() {
        let cfg = desk_cfg(3, 2, 1, 0.5);
        let layout = AntennaLayout::uniform(&cfg);
        let inputs = inputs_for(&cfg, &layout, vec![Some(0), Some(0)]);
        let model = model_for(&cfg);
        let state = Sp1State::from_selection(&cfg, &[1, 2], &[4e-3, 4e-3]);
        let (prog, vars) = build_sp1(&cfg, &inputs, &state, &model, 0.1, 0.0, &Sp1Options::default(), Some(&[1, 2]));
        let sol = prog.solve(&SolveSettings::default()).unwrap();
        for t in 0..2 {
            let tau_t = sol.value(vars.tau[t]);
            for m in 0..3 {
                let p_mt = sol.value(vars.p[m][t]);
                let expect = if [1, 2][t] == m { tau_t } else { 0.0 };
                assert!((p_mt - expect).abs() < 1e-7, "p[{m}][{t}] = {p_mt}, tau = {tau_t}");
            }
        }
    }

    #[test]
    fn infeasible_rate_is_reported() {
        let mut cfg = desk_cfg(2, 2, 1, 0.5);
        cfg.rate_min = 1e3;
        let layout = AntennaLayout::uniform(&cfg);
        let inputs = inputs_for(&cfg, &layout, vec![Some(0), Some(0)]);
        let model = model_for(&cfg);
        let init = Sp1State::from_selection(&cfg, &[0, 1], &[cfg.total_time / 2.0; 2]);
        let err = solve_sp1(&cfg, &inputs, init, &model, 0.1, 1e-4, 10, &Sp1Options::default(), &SolveSettings::default());
        assert!(err.is_err());
    }

    #[test]
    fn same_cluster_option_locks_selection_across_slots() {
        let cfg = desk_cfg(3, 3, 1, 0.0);
        let layout = AntennaLayout::uniform(&cfg);
        let inputs = inputs_for(&cfg, &layout, vec![Some(0), Some(0), Some(0)]);
        let model = model_for(&cfg);
        let init = Sp1State::from_selection(&cfg, &[1, 1, 1], &[cfg.total_time / 3.0; 3]);
        let opts = Sp1Options { same_cluster: true, fixed_tau: None };
        let out = solve_sp1(&cfg, &inputs, init, &model, 0.1, 1e-4, 20, &opts, &SolveSettings::default()).unwrap();
        assert!(out.active.windows(2).all(|w| w[0] == w[1]));
    }
}
