//! Guided + free-space channel coefficients, SNRs, and sensing weights.
//!
//! Every coefficient combines the waveguide hop from the feed point to the
//! pinching antenna (attenuation `exp(-alpha l)`, guided phase `2 pi l /
//! lambda_g`) with the free-space hop to a ground node (spreading `eta/d`,
//! phase `2 pi d / lambda`), normalized by `1/sqrt(N_T)` so the transmit
//! power does not scale with the cluster size.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::scenario::{Point, ScenarioConfig};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid antenna layout: {0}")]
    Layout(String),
    #[error("invalid cluster selection: {0}")]
    Selection(String),
}

/// Positions of all movable antennas, one sorted vector per cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaLayout {
    positions: Vec<Vec<f64>>,
}

impl AntennaLayout {
    /// Validate positions against the aperture and spacing constraints.
    pub fn new(cfg: &ScenarioConfig, positions: Vec<Vec<f64>>) -> Result<Self, ChannelError> {
        if positions.len() != cfg.num_clusters {
            return Err(ChannelError::Layout(format!(
                "expected {} clusters, got {}",
                cfg.num_clusters,
                positions.len()
            )));
        }
        let tol = 1e-9;
        for (m, xs) in positions.iter().enumerate() {
            if xs.len() != cfg.antennas_per_cluster {
                return Err(ChannelError::Layout(format!(
                    "cluster {m}: expected {} antennas, got {}",
                    cfg.antennas_per_cluster,
                    xs.len()
                )));
            }
            let (lo, hi) = cfg.aperture_interval(m);
            for &x in xs {
                if x < lo - tol || x > hi + tol {
                    return Err(ChannelError::Layout(format!(
                        "cluster {m}: position {x} outside aperture [{lo}, {hi}]"
                    )));
                }
            }
            for w in xs.windows(2) {
                if w[1] - w[0] < cfg.min_spacing - tol {
                    return Err(ChannelError::Layout(format!(
                        "cluster {m}: spacing {} below min_spacing {}",
                        w[1] - w[0],
                        cfg.min_spacing
                    )));
                }
            }
        }
        Ok(Self { positions })
    }

    /// Antennas evenly spread over each aperture (single antenna sits at the
    /// cluster center).
    pub fn uniform(cfg: &ScenarioConfig) -> Self {
        let n = cfg.antennas_per_cluster;
        let positions = (0..cfg.num_clusters)
            .map(|m| {
                let (lo, hi) = cfg.aperture_interval(m);
                if n == 1 {
                    vec![cfg.cluster_centers[m]]
                } else {
                    (0..n)
                        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                        .collect()
                }
            })
            .collect();
        Self { positions }
    }

    pub fn cluster(&self, m: usize) -> &[f64] {
        &self.positions[m]
    }

    pub fn clusters(&self) -> &[Vec<f64>] {
        &self.positions
    }

    /// Replace one cluster's positions without revalidating the others.
    pub fn with_cluster(&self, cfg: &ScenarioConfig, m: usize, xs: Vec<f64>) -> Result<Self, ChannelError> {
        let mut positions = self.positions.clone();
        positions[m] = xs;
        Self::new(cfg, positions)
    }
}

/// One channel coefficient from the feed through antenna `x` to node `p`.
fn coefficient(cfg: &ScenarioConfig, x: f64, p: Point) -> Complex64 {
    let guided = (x - cfg.feed_point).abs();
    let dist = cfg.node_distance(x, p);
    let nt = cfg.antennas_per_cluster as f64;
    let mag = cfg.eta() / (dist * nt.sqrt()) * (-cfg.attenuation * guided).exp();
    let phase = -(2.0 * std::f64::consts::PI / cfg.guided_wavelength() * guided
        + 2.0 * std::f64::consts::PI / cfg.wavelength() * dist);
    Complex64::from_polar(mag, phase)
}

/// Complex baseband channel from cluster `m` to user `k`, one entry per antenna.
pub fn comm_channel(cfg: &ScenarioConfig, layout: &AntennaLayout, m: usize, k: usize) -> Vec<Complex64> {
    let user = cfg.user_positions[k];
    layout.cluster(m).iter().map(|&x| coefficient(cfg, x, user)).collect()
}

/// Complex baseband sensing channel from cluster `m` to the target.
pub fn sensing_channel(cfg: &ScenarioConfig, layout: &AntennaLayout, m: usize) -> Vec<Complex64> {
    let target = cfg.target_position;
    layout.cluster(m).iter().map(|&x| coefficient(cfg, x, target)).collect()
}

/// Instantaneous received SNR at user `k` when cluster `m` is the active one.
pub fn comm_snr(cfg: &ScenarioConfig, layout: &AntennaLayout, m: usize, k: usize) -> f64 {
    let h: Complex64 = comm_channel(cfg, layout, m, k).into_iter().sum();
    cfg.transmit_power / cfg.noise_power * h.norm_sqr()
}

/// Achievable rate `log2(1 + gamma)` of user `k` under cluster `m`.
pub fn comm_rate(cfg: &ScenarioConfig, layout: &AntennaLayout, m: usize, k: usize) -> f64 {
    (1.0 + comm_snr(cfg, layout, m, k)).log2()
}

/// Coherent combining gain of cluster `m` toward the target.
pub fn cluster_sensing_gain(cfg: &ScenarioConfig, layout: &AntennaLayout, m: usize) -> f64 {
    let h: Complex64 = sensing_channel(cfg, layout, m).into_iter().sum();
    h.norm_sqr()
}

/// Upper bound on `|sum_n h|^2` for cluster `m`: all antennas co-phased at
/// the strongest per-antenna magnitude.
pub fn coherent_ceiling(cfg: &ScenarioConfig, layout: &AntennaLayout, m: usize) -> f64 {
    let target = cfg.target_position;
    let best = layout
        .cluster(m)
        .iter()
        .map(|&x| {
            let a = cfg.eta() * (-cfg.attenuation * (x - cfg.feed_point).abs()).exp()
                / cfg.node_distance(x, target);
            a * a
        })
        .fold(0.0_f64, f64::max);
    cfg.antennas_per_cluster as f64 * best
}

/// Deterministic sensing gain `psi`: transmit power over noise, two-way
/// spreading to the receive array, and the full array gain `N_R`.
pub fn psi_gain(cfg: &ScenarioConfig) -> f64 {
    let eta = cfg.eta();
    let d_er = cfg.target_range_to_feed();
    let steering_norm_sq = cfg.receive_antennas as f64;
    cfg.transmit_power / cfg.noise_power * eta * eta / (d_er * d_er) * steering_norm_sq
}

/// Per-cluster deterministic weights of the accumulated sensing SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingWeights {
    q: Vec<f64>,
}

impl SensingWeights {
    pub fn from_raw(q: Vec<f64>) -> Self {
        Self { q }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.q
    }

    pub fn diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&self.q))
    }
}

/// Sensing weights for a one-hot selection matrix `b` (M x T) and slot
/// durations `tau`, with a single layout shared by all slots:
/// `q_m = psi * sum_t (tau_t / T_max) b_m(t) |sum_n h_{e,m,n}|^2`.
pub fn sensing_weights(
    cfg: &ScenarioConfig,
    layout: &AntennaLayout,
    b: &DMatrix<f64>,
    tau: &[f64],
) -> Result<SensingWeights, ChannelError> {
    let active = selection_from_matrix(cfg, b, tau.len())?;
    let layouts = vec![layout.clone(); tau.len()];
    Ok(sensing_weights_per_slot(cfg, &layouts, &active, tau))
}

/// `sensing_weights` with per-slot layouts and the selection given as the
/// active cluster index of each slot.
pub fn sensing_weights_per_slot(
    cfg: &ScenarioConfig,
    layouts: &[AntennaLayout],
    active: &[usize],
    tau: &[f64],
) -> SensingWeights {
    let psi = psi_gain(cfg);
    let mut q = vec![0.0; cfg.num_clusters];
    for (t, (&m, &dt)) in active.iter().zip(tau).enumerate() {
        q[m] += psi * dt / cfg.total_time * cluster_sensing_gain(cfg, &layouts[t], m);
    }
    SensingWeights { q }
}

fn selection_from_matrix(
    cfg: &ScenarioConfig,
    b: &DMatrix<f64>,
    slots: usize,
) -> Result<Vec<usize>, ChannelError> {
    if b.nrows() != cfg.num_clusters || b.ncols() != slots {
        return Err(ChannelError::Selection(format!(
            "selection matrix is {}x{}, expected {}x{slots}",
            b.nrows(),
            b.ncols(),
            cfg.num_clusters
        )));
    }
    let mut active = Vec::with_capacity(slots);
    for t in 0..slots {
        let col = b.column(t);
        let mut hot = None;
        for (m, &v) in col.iter().enumerate() {
            if (v - 1.0).abs() < 1e-9 {
                if hot.is_some() {
                    return Err(ChannelError::Selection(format!("slot {t} selects two clusters")));
                }
                hot = Some(m);
            } else if v.abs() > 1e-9 {
                return Err(ChannelError::Selection(format!(
                    "slot {t} has fractional entry {v} for cluster {m}"
                )));
            }
        }
        active.push(hot.ok_or_else(|| ChannelError::Selection(format!("slot {t} selects no cluster")))?);
    }
    Ok(active)
}
