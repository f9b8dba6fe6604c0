//! Parameter sweeps over schemes and the radiated power-field map, both
//! emitted as CSV.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{run_baseline, BaselineKind, BaselineSpec};
use crate::driver::{optimize, DriverSettings, SolutionBundle};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    Spec(String),
}

/// Swept scenario parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    TransmitPower,
    RcsDecay,
    RateMin,
    AntennasPerCluster,
    NumSlots,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::TransmitPower => "p_t",
            SweepParam::RcsDecay => "kappa",
            SweepParam::RateMin => "r_min",
            SweepParam::AntennasPerCluster => "n_t",
            SweepParam::NumSlots => "t",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "p_t" | "pt" | "power" => Ok(Self::TransmitPower),
            "kappa" | "rcs_decay" => Ok(Self::RcsDecay),
            "r_min" | "rmin" | "rate_min" => Ok(Self::RateMin),
            "n_t" | "nt" | "antennas" => Ok(Self::AntennasPerCluster),
            "t" | "slots" | "num_slots" => Ok(Self::NumSlots),
            other => Err(format!("unknown sweep parameter `{other}`")),
        }
    }
}

/// A scheme selectable in sweeps and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    FixedUla,
    SameCluster,
    EqualSlots,
    SingleAntenna,
    TargetAligned,
    Uniform,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::FixedUla => "fixed_ula",
            Scheme::SameCluster => "same_cluster",
            Scheme::EqualSlots => "equal_slots",
            Scheme::SingleAntenna => "single_antenna",
            Scheme::TargetAligned => "target_aligned",
            Scheme::Uniform => "uniform",
        }
    }

    pub fn all() -> &'static [Scheme] {
        &[
            Scheme::Proposed,
            Scheme::FixedUla,
            Scheme::SameCluster,
            Scheme::EqualSlots,
            Scheme::SingleAntenna,
            Scheme::TargetAligned,
            Scheme::Uniform,
        ]
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "proposed" {
            return Ok(Scheme::Proposed);
        }
        s.parse::<BaselineKind>().map(|k| match k {
            BaselineKind::FixedUla => Scheme::FixedUla,
            BaselineKind::SameCluster => Scheme::SameCluster,
            BaselineKind::EqualSlots => Scheme::EqualSlots,
            BaselineKind::SingleAntenna => Scheme::SingleAntenna,
            BaselineKind::TargetAligned => Scheme::TargetAligned,
            BaselineKind::Uniform => Scheme::Uniform,
        })
    }
}

/// Sweep request: one parameter, a value list, schemes, and MC sampling.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub samples: usize,
    pub schemes: Vec<Scheme>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub scheme: String,
    pub swept_param: String,
    pub value: f64,
    pub chernoff_bound: Option<f64>,
    pub mc_outage: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub runtime_s: f64,
    pub seed: u64,
    pub status: String,
}

/// Scenario with one parameter overridden.
pub fn apply_param(cfg: &ScenarioConfig, param: SweepParam, value: f64) -> Result<ScenarioConfig, SweepError> {
    let mut out = cfg.clone();
    match param {
        SweepParam::TransmitPower => out.transmit_power = value,
        SweepParam::RcsDecay => out.rcs_decay = value,
        SweepParam::RateMin => out.rate_min = value,
        SweepParam::AntennasPerCluster => {
            out.antennas_per_cluster = value as usize;
        }
        SweepParam::NumSlots => {
            out.num_slots = value as usize;
            // keep the budget structurally feasible with the default rule
            out.min_slot = out.min_slot.min(out.total_time / (4.0 * value));
        }
    }
    out.validate().map_err(|e| SweepError::Spec(e.to_string()))?;
    Ok(out)
}

#[derive(Debug, Error)]
pub enum NamedSchemeError {
    #[error("{0}")]
    Unknown(String),
    #[error(transparent)]
    Driver(#[from] crate::driver::DriverError),
    #[error("{0}")]
    Baseline(String),
}

/// Run a scheme selected by its CLI name.
pub fn run_scheme_by_name(
    cfg: &ScenarioConfig,
    name: &str,
    settings: &DriverSettings,
) -> Result<SolutionBundle, NamedSchemeError> {
    let scheme = name.parse::<Scheme>().map_err(NamedSchemeError::Unknown)?;
    match scheme {
        Scheme::Proposed => Ok(optimize(cfg, settings)?),
        other => {
            let kind = match other {
                Scheme::FixedUla => BaselineKind::FixedUla,
                Scheme::SameCluster => BaselineKind::SameCluster,
                Scheme::EqualSlots => BaselineKind::EqualSlots,
                Scheme::SingleAntenna => BaselineKind::SingleAntenna,
                Scheme::TargetAligned => BaselineKind::TargetAligned,
                Scheme::Uniform => BaselineKind::Uniform,
                Scheme::Proposed => unreachable!(),
            };
            run_baseline(cfg, &BaselineSpec::new(kind), settings)
                .map_err(|e| NamedSchemeError::Baseline(e.to_string()))
        }
    }
}

fn run_scheme(cfg: &ScenarioConfig, scheme: Scheme, settings: &DriverSettings) -> Result<SolutionBundle, String> {
    match scheme {
        Scheme::Proposed => optimize(cfg, settings).map_err(|e| e.to_string()),
        Scheme::FixedUla => run_baseline(cfg, &BaselineSpec::new(BaselineKind::FixedUla), settings)
            .map_err(|e| e.to_string()),
        Scheme::SameCluster => run_baseline(cfg, &BaselineSpec::new(BaselineKind::SameCluster), settings)
            .map_err(|e| e.to_string()),
        Scheme::EqualSlots => run_baseline(cfg, &BaselineSpec::new(BaselineKind::EqualSlots), settings)
            .map_err(|e| e.to_string()),
        Scheme::SingleAntenna => {
            run_baseline(cfg, &BaselineSpec::new(BaselineKind::SingleAntenna), settings)
                .map_err(|e| e.to_string())
        }
        Scheme::TargetAligned => {
            run_baseline(cfg, &BaselineSpec::new(BaselineKind::TargetAligned), settings)
                .map_err(|e| e.to_string())
        }
        Scheme::Uniform => run_baseline(cfg, &BaselineSpec::new(BaselineKind::Uniform), settings)
            .map_err(|e| e.to_string()),
    }
}

/// Run every (scheme, value) point; failures become rows with a status.
pub fn run_sweep(
    cfg: &ScenarioConfig,
    spec: &SweepSpec,
    settings: &DriverSettings,
) -> Result<Vec<SweepRow>, SweepError> {
    if spec.values.is_empty() {
        return Err(SweepError::Spec("empty value list".into()));
    }
    if spec.samples < 1000 {
        return Err(SweepError::Spec("need at least 1000 samples per point".into()));
    }
    let points: Vec<(Scheme, f64)> = spec
        .schemes
        .iter()
        .flat_map(|&s| spec.values.iter().map(move |&v| (s, v)))
        .collect();
    let rows: Vec<SweepRow> = points
        .par_iter()
        .map(|&(scheme, value)| {
            let started = std::time::Instant::now();
            let mut settings = settings.clone();
            settings.mc_samples = spec.samples;
            settings.seed = spec.seed;
            let outcome = apply_param(cfg, spec.param, value)
                .map_err(|e| e.to_string())
                .and_then(|cfg_v| run_scheme(&cfg_v, scheme, &settings));
            let runtime_s = started.elapsed().as_secs_f64();
            match outcome {
                Ok(sol) => SweepRow {
                    scheme: scheme.name().to_string(),
                    swept_param: spec.param.name().to_string(),
                    value,
                    chernoff_bound: Some(sol.chernoff.bound),
                    mc_outage: Some(sol.mc_outage.p_hat),
                    mc_stderr: Some(sol.mc_outage.std_err),
                    runtime_s,
                    seed: spec.seed,
                    status: "ok".to_string(),
                },
                Err(e) => SweepRow {
                    scheme: scheme.name().to_string(),
                    swept_param: spec.param.name().to_string(),
                    value,
                    chernoff_bound: None,
                    mc_outage: None,
                    mc_stderr: None,
                    runtime_s,
                    seed: spec.seed,
                    status: format!("error: {}", e.replace(',', ";").replace('\n', " ")),
                },
            }
        })
        .collect();
    Ok(rows)
}

/// CSV with one row per (scheme, value); `runtime_s` is wall time and is
/// the only column expected to differ between identical runs.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("scheme,swept_param,value,chernoff_bound,mc_outage,mc_stderr,runtime_s,seed,status\n");
    for r in rows {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.3},{},{}\n",
            r.scheme,
            r.swept_param,
            r.value,
            opt(r.chernoff_bound),
            opt(r.mc_outage),
            opt(r.mc_stderr),
            r.runtime_s,
            r.seed,
            r.status
        ));
    }
    out
}

/// One cell of the normalized radiated power map.
#[derive(Debug, Clone, Serialize)]
pub struct FieldCell {
    pub slot: usize,
    pub x: f64,
    pub y: f64,
    pub p_db: f64,
}

/// Normalized radiated sensing power over the square ground area of side
/// `waveguide_length`, per slot, at `resolution` meters per cell. Power at
/// a ground point is the coherent sum over the slot's active antennas,
/// normalized to the slot maximum. The lattice is anchored so one cell
/// center coincides with the target; interference fringes near the target
/// are narrower than any practical cell, so an unanchored grid would
/// sample them at an arbitrary phase.
pub fn field_map(cfg: &ScenarioConfig, solution: &SolutionBundle, resolution: f64) -> Vec<FieldCell> {
    field_map_positions(cfg, &solution.positions, resolution)
}

/// [`field_map`] over explicit per-slot active-antenna positions.
pub fn field_map_positions(cfg: &ScenarioConfig, positions: &[Vec<f64>], resolution: f64) -> Vec<FieldCell> {
    let side = cfg.waveguide_length;
    let off_x = cfg.target_position.x.rem_euclid(resolution);
    let off_y = cfg.target_position.y.rem_euclid(resolution);
    let nx = ((side - off_x) / resolution).floor().max(0.0) as usize + 1;
    let ny = ((side - off_y) / resolution).floor().max(0.0) as usize + 1;
    let mut cells = Vec::new();
    for (t, xs) in positions.iter().enumerate() {
        let mut slot_cells = Vec::with_capacity(nx * ny);
        let mut p_max = 0.0_f64;
        for iy in 0..ny {
            for ix in 0..nx {
                let gx = off_x + ix as f64 * resolution;
                let gy = off_y + iy as f64 * resolution;
                let p = point_power(cfg, xs, gx, gy);
                p_max = p_max.max(p);
                slot_cells.push((gx, gy, p));
            }
        }
        for (gx, gy, p) in slot_cells {
            cells.push(FieldCell {
                slot: t,
                x: gx,
                y: gy,
                p_db: 10.0 * (p / p_max).max(1e-300).log10(),
            });
        }
    }
    cells
}

/// Coherent power radiated by antennas at `xs` toward ground point (gx, gy).
pub fn point_power(cfg: &ScenarioConfig, xs: &[f64], gx: f64, gy: f64) -> f64 {
    let eta = cfg.eta();
    let lam = cfg.wavelength();
    let lam_g = cfg.guided_wavelength();
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut acc = num_complex::Complex64::ZERO;
    for &x in xs {
        let ell = (x - cfg.feed_point).abs();
        let d = ((x - gx).powi(2) + gy * gy + cfg.height * cfg.height).sqrt();
        acc += num_complex::Complex64::from_polar(
            eta / d * (-cfg.attenuation * ell).exp(),
            -(two_pi / lam_g * ell + two_pi / lam * d),
        );
    }
    acc.norm_sqr()
}

pub fn field_csv(cells: &[FieldCell]) -> String {
    let mut out = String::from("slot,x,y,p_db\n");
    for c in cells {
        out.push_str(&format!("{},{},{},{:.4}\n", c.slot, c.x, c.y, c.p_db));
    }
    out
}

/// Normalized power (dB) of the cell containing the target, per slot.
pub fn target_cell_db(cfg: &ScenarioConfig, cells: &[FieldCell]) -> Vec<f64> {
    let t = cfg.target_position;
    let slots = cells.iter().map(|c| c.slot).max().map_or(0, |m| m + 1);
    (0..slots)
        .map(|s| {
            cells
                .iter()
                .filter(|c| c.slot == s)
                .min_by(|a, b| {
                    let da = (a.x - t.x).abs().max((a.y - t.y).abs());
                    let db = (b.x - t.x).abs().max((b.y - t.y).abs());
                    da.partial_cmp(&db).unwrap()
                })
                .map(|c| c.p_db)
                .unwrap_or(f64::NEG_INFINITY)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_scenario;

    fn small_cfg() -> ScenarioConfig {
        let (cfg, _) = load_scenario(
            r#"{
                "waveguide_length": 10.0, "height": 3.0, "num_clusters": 2,
                "antennas_per_cluster": 1, "receive_antennas": 8,
                "num_users": 1, "user_positions": [{"x": 3.0, "y": 2.0}],
                "target_position": {"x": 5.0, "y": 5.0},
                "num_slots": 2, "total_time": 0.008,
                "carrier": 3.0e10, "refractive_index": 1.4, "attenuation": 0.18,
                "transmit_power": 1.0e4, "noise_power": 1.0e-12,
                "snr_threshold": 10.0, "rate_min": 0.5, "rcs_mean": 1.0
            }"#,
        )
        .unwrap();
        cfg
    }

    #[test]
    fn param_overrides_apply_and_validate() {
        let cfg = small_cfg();
        let c2 = apply_param(&cfg, SweepParam::TransmitPower, 5e4).unwrap();
        assert_eq!(c2.transmit_power, 5e4);
        let c3 = apply_param(&cfg, SweepParam::NumSlots, 4.0).unwrap();
        assert_eq!(c3.num_slots, 4);
        assert!(c3.num_slots as f64 * c3.min_slot <= c3.total_time);
        assert!(apply_param(&cfg, SweepParam::RcsDecay, -1.0).is_err());
    }

    #[test]
    fn single_antenna_field_is_radially_monotone() {
        let cfg = small_cfg();
        // ground projection of an antenna at x = 2: power decays with
        // distance from (2, 0)
        let xs = [2.0];
        let mut prev = f64::INFINITY;
        for r in [0.5, 1.0, 2.0, 4.0, 6.0] {
            let p = point_power(&cfg, &xs, 2.0 + r, 0.0);
            assert!(p < prev);
            prev = p;
        }
        let mut prev = f64::INFINITY;
        for r in [0.5, 1.0, 2.0, 4.0, 6.0] {
            let p = point_power(&cfg, &xs, 2.0, r);
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn co_phased_pair_doubles_amplitude_without_attenuation() {
        let mut cfg = small_cfg();
        cfg.attenuation = 0.0;
        // two antennas with guided-length difference of one guided
        // wavelength and equal distances to the probe point
        let lg = cfg.guided_wavelength();
        let gx = 5.0;
        let xs = [gx - lg / 2.0, gx + lg / 2.0];
        let p2 = point_power(&cfg, &xs, gx, 3.0);
        let p1 = point_power(&cfg, &[xs[0]], gx, 3.0);
        let ratio_db = 10.0 * (p2 / p1).log10();
        assert!((ratio_db - 6.02).abs() < 0.1, "ratio {ratio_db} dB");
    }

    #[test]
    fn sweep_rows_cover_every_point_and_survive_failures() {
        let cfg = small_cfg();
        let spec = SweepSpec {
            param: SweepParam::RateMin,
            // the second value is unattainable and must produce an error row
            values: vec![0.5, 1.0e3],
            samples: 1000,
            schemes: vec![Scheme::Proposed, Scheme::Uniform],
            seed: 5,
        };
        let settings = DriverSettings {
            s_grid: vec![0.05, 0.2],
            max_outer: 5,
            ..DriverSettings::default()
        };
        let rows = run_sweep(&cfg, &spec, &settings).unwrap();
        assert_eq!(rows.len(), 4);
        let ok = rows.iter().filter(|r| r.status == "ok").count();
        let err = rows.iter().filter(|r| r.status.starts_with("error")).count();
        assert_eq!(ok, 2);
        assert_eq!(err, 2);
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with("scheme,swept_param,value,chernoff_bound"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn field_csv_shape_and_normalization() {
        let cfg = small_cfg();
        let settings = DriverSettings {
            s_grid: vec![0.1],
            mc_samples: 1000,
            max_outer: 3,
            ..DriverSettings::default()
        };
        let sol = optimize(&cfg, &settings).unwrap();
        let cells = field_map(&cfg, &sol, 2.5);
        // 5x5 target-anchored grid per slot, 2 slots
        assert_eq!(cells.len(), 2 * 25);
        assert!(cells.iter().any(|c| c.x == 5.0 && c.y == 5.0));
        for slot in 0..2 {
            let max = cells
                .iter()
                .filter(|c| c.slot == slot)
                .map(|c| c.p_db)
                .fold(f64::MIN, f64::max);
            assert!((max - 0.0).abs() < 1e-9, "normalized max {max}");
        }
        let csv = field_csv(&cells);
        assert_eq!(csv.lines().count(), 51);
    }
}
