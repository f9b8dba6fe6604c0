//! Reference schemes: a fixed half-wavelength ULA, static cluster reuse,
//! equal slot durations, single-antenna clusters, and the target-aligned /
//! uniform placements used by the power-field comparison.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::AntennaLayout;
use crate::driver::{optimize, DriverError, DriverSettings, SchemeVariant, SolutionBundle};
use crate::scenario::ScenarioConfig;
use crate::sp2a::geometric_phase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Conventional transmit ULA of `M * N_T` half-wavelength elements,
    /// partitioned into `M` contiguous subarrays; positions fixed.
    FixedUla,
    /// The same cluster is active in all slots.
    SameCluster,
    /// All slot durations frozen to `T_max / T`.
    EqualSlots,
    /// One antenna per cluster.
    SingleAntenna,
    /// Antennas placed by greedy phase alignment toward the target; only
    /// selection, durations, and scheduling are optimized.
    TargetAligned,
    /// Antennas evenly spaced in each aperture; positions fixed.
    Uniform,
}

impl std::str::FromStr for BaselineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed_ula" => Ok(Self::FixedUla),
            "same_cluster" => Ok(Self::SameCluster),
            "equal_slots" => Ok(Self::EqualSlots),
            "single_antenna" => Ok(Self::SingleAntenna),
            "target_aligned" => Ok(Self::TargetAligned),
            "uniform" => Ok(Self::Uniform),
            other => Err(format!("unknown baseline `{other}`")),
        }
    }
}

/// Baseline selection plus its parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    /// Center of the fixed ULA along the waveguide (fixed_ula only).
    pub ula_center: Option<f64>,
}

impl BaselineSpec {
    pub fn new(kind: BaselineKind) -> Self {
        Self { kind, ula_center: None }
    }
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("baseline configuration invalid: {0}")]
    Config(String),
    #[error(transparent)]
    Driver(#[from] DriverError),
}

/// The fixed-ULA geometry: modified scenario (subarray centers become the
/// cluster centers) plus the frozen element positions.
pub fn fixed_ula_geometry(
    cfg: &ScenarioConfig,
    center: f64,
) -> Result<(ScenarioConfig, AntennaLayout), BaselineError> {
    let lam = cfg.wavelength();
    let spacing = lam / 2.0;
    let m = cfg.num_clusters;
    let nt = cfg.antennas_per_cluster;
    let total = m * nt;
    let first = center - (total as f64 - 1.0) / 2.0 * spacing;
    if first < 0.0 || first + (total as f64 - 1.0) * spacing > cfg.waveguide_length {
        return Err(BaselineError::Config(format!(
            "{total} half-wavelength elements centered at {center} leave the waveguide"
        )));
    }
    let mut modified = cfg.clone();
    let mut positions = Vec::with_capacity(m);
    let mut centers = Vec::with_capacity(m);
    for sub in 0..m {
        let xs: Vec<f64> = (0..nt).map(|i| first + (sub * nt + i) as f64 * spacing).collect();
        centers.push(xs.iter().sum::<f64>() / nt as f64);
        positions.push(xs);
    }
    modified.cluster_centers = centers;
    // subarrays span (N_T - 1) lambda/2 with lambda/2 gaps between them
    modified.aperture = ((nt as f64 - 1.0) * spacing).max(spacing / 2.0);
    modified.min_spacing = modified.min_spacing.min(spacing);
    modified
        .validate()
        .map_err(|e| BaselineError::Config(e.to_string()))?;
    let layout = AntennaLayout::new(&modified, positions)
        .map_err(|e| BaselineError::Config(e.to_string()))?;
    Ok((modified, layout))
}

/// Greedy per-antenna phase alignment toward the target: the first antenna
/// anchors at the left aperture edge; each next position minimizes the
/// wrapped gap between its sensing-channel phase and the anchor's, subject
/// to the spacing constraint.
pub fn target_aligned_layout(cfg: &ScenarioConfig) -> AntennaLayout {
    let target = cfg.target_position;
    let wrap = |d: f64| {
        let two_pi = 2.0 * std::f64::consts::PI;
        let r = d.rem_euclid(two_pi);
        r.min(two_pi - r)
    };
    let mut positions = Vec::with_capacity(cfg.num_clusters);
    for m in 0..cfg.num_clusters {
        let (lo, hi) = cfg.aperture_interval(m);
        let mut xs = vec![lo];
        let anchor = geometric_phase(cfg, lo, target);
        for _ in 1..cfg.antennas_per_cluster {
            let start = xs.last().unwrap() + cfg.min_spacing;
            let step = cfg.wavelength() / 50.0;
            let mut best = (f64::INFINITY, start);
            let mut x = start;
            while x <= hi + 1e-12 {
                let gap = wrap(geometric_phase(cfg, x, target) - anchor);
                if gap < best.0 {
                    best = (gap, x);
                }
                x += step;
            }
            // golden refinement of the wrapped gap inside the winning cell
            let (mut a, mut b) = ((best.1 - step).max(start), (best.1 + step).min(hi));
            let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
            let mut c = b - phi * (b - a);
            let mut d = a + phi * (b - a);
            let g = |x: f64| wrap(geometric_phase(cfg, x, target) - anchor);
            let (mut fc, mut fd) = (g(c), g(d));
            for _ in 0..50 {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - phi * (b - a);
                    fc = g(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + phi * (b - a);
                    fd = g(d);
                }
            }
            let refined = 0.5 * (a + b);
            xs.push(if g(refined) <= best.0 { refined } else { best.1 });
        }
        positions.push(xs);
    }
    AntennaLayout::new(cfg, positions).expect("greedy placement respects the constraints")
}

/// Run a baseline through the driver with the matching freezes.
pub fn run_baseline(
    cfg: &ScenarioConfig,
    spec: &BaselineSpec,
    settings: &DriverSettings,
) -> Result<SolutionBundle, BaselineError> {
    let mut settings = settings.clone();
    match spec.kind {
        BaselineKind::FixedUla => {
            let center = spec.ula_center.unwrap_or(cfg.waveguide_length / 2.0);
            let (modified, layout) = fixed_ula_geometry(cfg, center)?;
            settings.variant = SchemeVariant { skip_sp2a: true, ..settings.variant.clone() };
            settings.fixed_layout = Some(layout);
            Ok(optimize(&modified, &settings)?)
        }
        BaselineKind::SameCluster => {
            settings.variant.same_cluster = true;
            Ok(optimize(cfg, &settings)?)
        }
        BaselineKind::EqualSlots => {
            settings.variant.equal_slots = true;
            Ok(optimize(cfg, &settings)?)
        }
        BaselineKind::SingleAntenna => {
            let mut modified = cfg.clone();
            modified.antennas_per_cluster = 1;
            Ok(optimize(&modified, &settings)?)
        }
        BaselineKind::TargetAligned => {
            settings.variant.skip_sp2a = true;
            settings.fixed_layout = Some(target_aligned_layout(cfg));
            Ok(optimize(cfg, &settings)?)
        }
        BaselineKind::Uniform => {
            settings.variant.skip_sp2a = true;
            settings.fixed_layout = Some(AntennaLayout::uniform(cfg));
            Ok(optimize(cfg, &settings)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_scenario;

    fn cfg_for(m: usize, nt: usize, t: usize) -> ScenarioConfig {
        let (cfg, _) = load_scenario(&format!(
            r#"{{
                "waveguide_length": 10.0, "height": 3.0, "num_clusters": {m},
                "antennas_per_cluster": {nt}, "receive_antennas": 8,
                "num_users": 1, "user_positions": [{{"x": 3.0, "y": 2.0}}],
                "target_position": {{"x": 5.0, "y": 5.0}},
                "num_slots": {t}, "total_time": 0.008,
                "carrier": 3.0e10, "refractive_index": 1.4, "attenuation": 0.18,
                "transmit_power": 1.0e4, "noise_power": 1.0e-12,
                "snr_threshold": 10.0, "rate_min": 0.5, "rcs_mean": 1.0
            }}"#
        ))
        .unwrap();
        cfg
    }

    fn fast() -> DriverSettings {
        DriverSettings {
            s_grid: vec![0.05, 0.2],
            mc_samples: 10_000,
            max_outer: 6,
            ..DriverSettings::default()
        }
    }

    #[test]
    fn single_slot_equal_durations_is_the_proposed_scheme() {
        let cfg = cfg_for(2, 1, 1);
        let a = optimize(&cfg, &fast()).unwrap();
        let b = run_baseline(&cfg, &BaselineSpec::new(BaselineKind::EqualSlots), &fast()).unwrap();
        assert_eq!(a.mc_outage.p_hat, b.mc_outage.p_hat);
        assert_eq!(a.active_clusters, b.active_clusters);
    }

    #[test]
    fn single_cluster_static_selection_is_the_proposed_scheme() {
        let cfg = cfg_for(1, 1, 2);
        let a = optimize(&cfg, &fast()).unwrap();
        let b = run_baseline(&cfg, &BaselineSpec::new(BaselineKind::SameCluster), &fast()).unwrap();
        assert_eq!(a.mc_outage.p_hat, b.mc_outage.p_hat);
    }

    #[test]
    fn fixed_ula_partitions_into_subarrays() {
        let cfg = cfg_for(3, 2, 2);
        let (modified, layout) = fixed_ula_geometry(&cfg, 5.0).unwrap();
        let spacing = cfg.wavelength() / 2.0;
        let mut all: Vec<f64> = layout.clusters().iter().flatten().copied().collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(all.len(), 6);
        for w in all.windows(2) {
            approx::assert_relative_eq!(w[1] - w[0], spacing, max_relative = 1e-9);
        }
        let mid = 0.5 * (all[0] + all[5]);
        approx::assert_relative_eq!(mid, 5.0, epsilon = 1e-12);
        // subarray centers became the cluster centers (look angles shift)
        for (m, xs) in layout.clusters().iter().enumerate() {
            let c = xs.iter().sum::<f64>() / xs.len() as f64;
            approx::assert_relative_eq!(modified.cluster_centers[m], c, epsilon = 1e-12);
        }
    }

    #[test]
    fn target_aligned_layout_co_phases_each_cluster() {
        let cfg = cfg_for(3, 2, 2);
        let layout = target_aligned_layout(&cfg);
        let target = cfg.target_position;
        for xs in layout.clusters() {
            let anchor = geometric_phase(&cfg, xs[0], target);
            for &x in &xs[1..] {
                let two_pi = 2.0 * std::f64::consts::PI;
                let gap = (geometric_phase(&cfg, x, target) - anchor).rem_euclid(two_pi);
                let gap = gap.min(two_pi - gap);
                assert!(gap < 0.05, "wrapped gap {gap}");
            }
            for w in xs.windows(2) {
                assert!(w[1] - w[0] >= cfg.min_spacing - 1e-12);
            }
        }
    }

    #[test]
    fn baseline_solutions_respect_their_freezes() {
        let cfg = cfg_for(3, 2, 2);
        let eq = run_baseline(&cfg, &BaselineSpec::new(BaselineKind::EqualSlots), &fast()).unwrap();
        for &t in &eq.tau {
            approx::assert_relative_eq!(t, cfg.total_time / 2.0, max_relative = 1e-9);
        }
        let sc = run_baseline(&cfg, &BaselineSpec::new(BaselineKind::SameCluster), &fast()).unwrap();
        assert!(sc.active_clusters.windows(2).all(|w| w[0] == w[1]));
        let sa = run_baseline(&cfg, &BaselineSpec::new(BaselineKind::SingleAntenna), &fast()).unwrap();
        assert!(sa.positions.iter().all(|xs| xs.len() == 1));
        let un = run_baseline(&cfg, &BaselineSpec::new(BaselineKind::Uniform), &fast()).unwrap();
        let uniform = AntennaLayout::uniform(&cfg);
        for (t, &m) in un.active_clusters.iter().enumerate() {
            assert_eq!(un.positions[t], uniform.cluster(m).to_vec());
        }
    }
}
