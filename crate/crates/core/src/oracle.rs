//! Brute-force reference solver for tiny instances: exhaustive enumeration
//! over cluster selections, schedules, discretized antenna positions, and
//! discretized slot durations, evaluating the exact Chernoff bound and a
//! common-random-numbers Monte-Carlo outage for every candidate.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{psi_gain, AntennaLayout};
use crate::outage::{chernoff_bound, default_s_grid};
use crate::rcs::{build_covariance, RcsModel};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance outside the oracle budget: {0}")]
    Budget(String),
}

/// Enumeration limits; the guard rejects anything above ten million
/// candidates.
#[derive(Debug, Clone, Copy)]
pub struct OracleBudget {
    pub position_grid_points: usize,
    pub tau_grid_points: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self { position_grid_points: 5, tau_grid_points: 5 }
    }
}

/// One enumerated configuration.
#[derive(Debug, Clone, Serialize)]
pub struct OracleAssignment {
    pub active: Vec<usize>,
    pub tau: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub schedule: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub assignment: OracleAssignment,
    pub log_bound: f64,
    pub mc_outage: f64,
}

#[derive(Debug, Serialize)]
pub struct OracleResult {
    pub best_chernoff: OracleRow,
    pub best_mc: OracleRow,
    pub candidates: usize,
    pub feasible: usize,
    pub table: Vec<OracleRow>,
}

/// Grid positions for one cluster respecting the spacing constraint.
fn position_combos(cfg: &ScenarioConfig, m: usize, points: usize) -> Vec<Vec<f64>> {
    let (lo, hi) = cfg.aperture_interval(m);
    let grid: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64)
        .collect();
    let n = cfg.antennas_per_cluster;
    let mut combos = Vec::new();
    let mut stack = vec![0usize; n];
    fn rec(
        grid: &[f64],
        d_min: f64,
        n: usize,
        level: usize,
        start: usize,
        stack: &mut Vec<usize>,
        out: &mut Vec<Vec<f64>>,
    ) {
        if level == n {
            out.push(stack.iter().map(|&i| grid[i]).collect());
            return;
        }
        for i in start..grid.len() {
            if level > 0 && grid[i] - grid[stack[level - 1]] < d_min - 1e-12 {
                continue;
            }
            stack[level] = i;
            rec(grid, d_min, n, level + 1, i + 1, stack, out);
        }
    }
    rec(&grid, cfg.min_spacing, n, 0, 0, &mut stack, &mut combos);
    combos
}

fn tau_grid(cfg: &ScenarioConfig, points: usize) -> Vec<Vec<f64>> {
    // the full budget is always spent: more time never hurts either metric
    match cfg.num_slots {
        1 => vec![vec![cfg.total_time]],
        2 => (0..points)
            .map(|i| {
                let lo = cfg.min_slot;
                let hi = cfg.total_time - cfg.min_slot;
                let t1 = lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64;
                vec![t1, cfg.total_time - t1]
            })
            .collect(),
        _ => unreachable!("budget guard limits T to 2"),
    }
}

fn schedules(cfg: &ScenarioConfig) -> Vec<Vec<Option<usize>>> {
    if cfg.rate_min == 0.0 {
        return vec![vec![None; cfg.num_slots]];
    }
    let options: Vec<Option<usize>> =
        std::iter::once(None).chain((0..cfg.num_users).map(Some)).collect();
    let mut out = vec![Vec::new()];
    for _ in 0..cfg.num_slots {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<Option<usize>>| {
                options.iter().map(move |&o| {
                    let mut v = prefix.clone();
                    v.push(o);
                    v
                })
            })
            .collect();
    }
    // every user must appear somewhere, otherwise C1 cannot hold
    out.retain(|sched| (0..cfg.num_users).all(|k| sched.contains(&Some(k))));
    out
}

/// Exhaustively enumerate the instance and record both optima.
pub fn enumerate(
    cfg: &ScenarioConfig,
    budget: &OracleBudget,
    mc_n: usize,
    seed: u64,
) -> Result<OracleResult, OracleError> {
    if cfg.num_clusters > 3 || cfg.num_slots > 2 || cfg.antennas_per_cluster > 2 || cfg.num_users > 2
    {
        return Err(OracleError::Budget(format!(
            "limits are M <= 3, T <= 2, N_T <= 2, K <= 2; got M={}, T={}, N_T={}, K={}",
            cfg.num_clusters, cfg.num_slots, cfg.antennas_per_cluster, cfg.num_users
        )));
    }
    if budget.position_grid_points > 7 || budget.tau_grid_points > 5 {
        return Err(OracleError::Budget("grids limited to 7 positions and 5 durations".into()));
    }
    let model: RcsModel = build_covariance(&cfg.look_angles(), cfg.rcs_mean, cfg.rcs_decay)
        .expect("exponential kernel is PSD");

    let combos: Vec<Vec<Vec<f64>>> = (0..cfg.num_clusters)
        .map(|m| position_combos(cfg, m, budget.position_grid_points))
        .collect();
    let taus = tau_grid(cfg, budget.tau_grid_points);
    let scheds = schedules(cfg);

    // per (cluster, combo): sensing gain and user rates
    let base = AntennaLayout::uniform(cfg);
    let mut gain: Vec<Vec<f64>> = Vec::new();
    let mut rate: Vec<Vec<Vec<f64>>> = Vec::new(); // [m][combo][k]
    for m in 0..cfg.num_clusters {
        let mut g_row = Vec::new();
        let mut r_row = Vec::new();
        for xs in &combos[m] {
            let layout = base.with_cluster(cfg, m, xs.clone()).expect("grid respects constraints");
            g_row.push(crate::channel::cluster_sensing_gain(cfg, &layout, m));
            r_row.push(
                (0..cfg.num_users)
                    .map(|k| crate::channel::comm_rate(cfg, &layout, m, k))
                    .collect(),
            );
        }
        gain.push(g_row);
        rate.push(r_row);
    }

    // per-slot choice space: (cluster, combo index)
    let slot_choices: Vec<(usize, usize)> = (0..cfg.num_clusters)
        .flat_map(|m| (0..combos[m].len()).map(move |c| (m, c)))
        .collect();
    let total: usize = slot_choices
        .len()
        .checked_pow(cfg.num_slots as u32)
        .and_then(|v| v.checked_mul(taus.len()))
        .and_then(|v| v.checked_mul(scheds.len()))
        .ok_or_else(|| OracleError::Budget("overflowing candidate count".into()))?;
    if total > 10_000_000 {
        return Err(OracleError::Budget(format!("{total} candidates exceed the 1e7 guard")));
    }

    // common random numbers: |Sigma(m)|^2 per draw, shared by every candidate
    let mag_sq: Vec<Vec<f64>> = (0..mc_n as u64)
        .into_par_iter()
        .map(|i| {
            let s = model.sample_at(seed, i);
            (0..model.dim()).map(|m| s[m].norm_sqr()).collect()
        })
        .collect();

    let psi = psi_gain(cfg);
    let grid = default_s_grid(cfg.snr_threshold);
    let t_sl = cfg.num_slots;

    // candidate index -> (slot choices, tau, schedule)
    let n_choice = slot_choices.len();
    let decode = |mut idx: usize| -> (Vec<(usize, usize)>, usize, usize) {
        let mut picks = Vec::with_capacity(t_sl);
        for _ in 0..t_sl {
            picks.push(slot_choices[idx % n_choice]);
            idx /= n_choice;
        }
        let ti = idx % taus.len();
        idx /= taus.len();
        (picks, ti, idx)
    };

    let rows: Vec<Option<OracleRow>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let (picks, ti, si) = decode(idx);
            let tau = &taus[ti];
            let sched = &scheds[si];
            // C1 by direct evaluation
            if cfg.rate_min > 0.0 {
                for k in 0..cfg.num_users {
                    let r: f64 = (0..t_sl)
                        .filter(|&t| sched[t] == Some(k))
                        .map(|t| tau[t] / cfg.total_time * rate[picks[t].0][picks[t].1][k])
                        .sum();
                    if r < cfg.rate_min - 1e-12 {
                        return None;
                    }
                }
            }
            let mut q = vec![0.0; cfg.num_clusters];
            for t in 0..t_sl {
                let (m, c) = picks[t];
                q[m] += psi * tau[t] / cfg.total_time * gain[m][c];
            }
            let cb = chernoff_bound(&q, &model, cfg.snr_threshold, &grid);
            let hits = mag_sq
                .iter()
                .filter(|row| {
                    q.iter().zip(row.iter()).map(|(a, b)| a * b).sum::<f64>() < cfg.snr_threshold
                })
                .count();
            Some(OracleRow {
                assignment: OracleAssignment {
                    active: picks.iter().map(|p| p.0).collect(),
                    tau: tau.clone(),
                    positions: picks.iter().map(|&(m, c)| combos[m][c].clone()).collect(),
                    schedule: sched.clone(),
                },
                log_bound: cb.log_bound,
                mc_outage: hits as f64 / mc_n as f64,
            })
        })
        .collect();

    let feasible: Vec<OracleRow> = rows.into_iter().flatten().collect();
    if feasible.is_empty() {
        return Err(OracleError::Budget("every candidate violates the rate constraints".into()));
    }
    let best_chernoff = feasible
        .iter()
        .min_by(|a, b| a.log_bound.partial_cmp(&b.log_bound).unwrap())
        .unwrap()
        .clone();
    let best_mc = feasible
        .iter()
        .min_by(|a, b| (a.mc_outage, a.log_bound).partial_cmp(&(b.mc_outage, b.log_bound)).unwrap())
        .unwrap()
        .clone();
    Ok(OracleResult {
        best_chernoff,
        best_mc,
        candidates: total,
        feasible: feasible.len(),
        table: feasible,
    })
}

/// CSV dump of the full candidate table.
pub fn table_csv(result: &OracleResult) -> String {
    let mut out = String::from("active,tau,positions,schedule,log_bound,mc_outage\n");
    for row in &result.table {
        let sched: Vec<String> = row
            .assignment
            .schedule
            .iter()
            .map(|s| s.map_or("-".to_string(), |k| k.to_string()))
            .collect();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.assignment.active.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(";"),
            row.assignment.tau.iter().map(|t| format!("{t:.6e}")).collect::<Vec<_>>().join(";"),
            row.assignment
                .positions
                .iter()
                .map(|xs| xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("|"))
                .collect::<Vec<_>>()
                .join(";"),
            sched.join(";"),
            row.log_bound,
            row.mc_outage
        ));
    }
    out
}
