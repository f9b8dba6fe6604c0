//! Scenario configuration, geometry, and the JSON scenario file format.
//!
//! A scenario describes one transmission frame: a dielectric waveguide along
//! the x-axis at height `d` carrying `M` clusters of `N_T` movable pinching
//! antennas, `K` ground users, one ground target, a fixed receive ULA at the
//! feed point, and the time/power/statistics budgets. All values are SI and
//! linear (no dB anywhere in the file format).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A ground-plane position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invariant violation in `{field}`: {message}")]
    Invariant { field: &'static str, message: String },
}

fn invariant(field: &'static str, message: String) -> ScenarioError {
    ScenarioError::Invariant { field, message }
}

/// Full physical and optimization parameterization of one frame.
///
/// Field names double as the JSON keys of the scenario file; unknown keys
/// are rejected. Optional keys (`cluster_centers`, `aperture`,
/// `min_spacing`, `min_slot`, `feed_point`, `rcs_decay`) receive documented
/// defaults, reported by [`load_scenario`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Waveguide length `D_x` in meters.
    pub waveguide_length: f64,
    /// Waveguide height `d` above the ground plane, meters.
    pub height: f64,
    /// Feed point abscissa `x0` along the waveguide, meters.
    pub feed_point: f64,
    /// Number of PA clusters `M`.
    pub num_clusters: usize,
    /// Cluster center abscissas, length `M`, meters.
    pub cluster_centers: Vec<f64>,
    /// Intra-cluster movement aperture `L`, meters.
    pub aperture: f64,
    /// Minimum antenna separation `d_min`, meters.
    pub min_spacing: f64,
    /// Antennas per cluster `N_T`.
    pub antennas_per_cluster: usize,
    /// Receive ULA size `N_R`.
    pub receive_antennas: usize,
    /// Number of users `K`.
    pub num_users: usize,
    /// User ground positions, length `K`.
    pub user_positions: Vec<Point>,
    /// Target ground position.
    pub target_position: Point,
    /// Number of time slots `T`.
    pub num_slots: usize,
    /// Frame duration budget `T_max`, seconds.
    pub total_time: f64,
    /// Minimum slot duration `T_min`, seconds.
    pub min_slot: f64,
    /// Carrier frequency `f_c`, hertz.
    pub carrier: f64,
    /// Effective refractive index `n_eff` of the waveguide.
    pub refractive_index: f64,
    /// Waveguide attenuation `alpha`, nepers/meter.
    pub attenuation: f64,
    /// Transmit power `p_T`, watts.
    pub transmit_power: f64,
    /// Noise power `sigma^2` (users and radar alike), watts.
    pub noise_power: f64,
    /// Sensing detection threshold, linear SNR.
    pub snr_threshold: f64,
    /// Minimum average user rate `R_min`, bits/s/Hz.
    pub rate_min: f64,
    /// Average RCS power gain `zeta_av`, m^2.
    pub rcs_mean: f64,
    /// Angular RCS correlation decay rate `kappa`, 1/radian.
    pub rcs_decay: f64,
}

/// Raw document with the optional keys still optional.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    waveguide_length: f64,
    height: f64,
    feed_point: Option<f64>,
    num_clusters: usize,
    cluster_centers: Option<Vec<f64>>,
    aperture: Option<f64>,
    min_spacing: Option<f64>,
    antennas_per_cluster: usize,
    receive_antennas: usize,
    num_users: usize,
    user_positions: Vec<Point>,
    target_position: Point,
    num_slots: usize,
    total_time: f64,
    min_slot: Option<f64>,
    carrier: f64,
    refractive_index: f64,
    attenuation: f64,
    transmit_power: f64,
    noise_power: f64,
    snr_threshold: f64,
    rate_min: f64,
    rcs_mean: f64,
    rcs_decay: Option<f64>,
}

/// Parse and validate a scenario document.
///
/// Returns the validated config together with a note per defaulted key.
pub fn load_scenario(text: &str) -> Result<(ScenarioConfig, Vec<String>), ScenarioError> {
    let raw: RawScenario = serde_json::from_str(text)?;
    let mut applied = Vec::new();
    let lambda = SPEED_OF_LIGHT / raw.carrier;

    let feed_point = raw.feed_point.unwrap_or_else(|| {
        applied.push("feed_point defaulted to 0".to_string());
        0.0
    });
    let cluster_centers = raw.cluster_centers.unwrap_or_else(|| {
        applied.push("cluster_centers defaulted to uniform spacing".to_string());
        let m = raw.num_clusters as f64;
        (1..=raw.num_clusters)
            .map(|i| (i as f64 - 0.5) * raw.waveguide_length / m)
            .collect()
    });
    let aperture = raw.aperture.unwrap_or_else(|| {
        applied.push("aperture defaulted to 0.5 m".to_string());
        0.5
    });
    let min_spacing = raw.min_spacing.unwrap_or_else(|| {
        applied.push("min_spacing defaulted to lambda/2".to_string());
        lambda / 2.0
    });
    let min_slot = raw.min_slot.unwrap_or_else(|| {
        applied.push("min_slot defaulted to total_time/(4*num_slots)".to_string());
        raw.total_time / (4.0 * raw.num_slots as f64)
    });
    let rcs_decay = raw.rcs_decay.unwrap_or_else(|| {
        applied.push("rcs_decay defaulted to 0.1".to_string());
        0.1
    });

    let cfg = ScenarioConfig {
        waveguide_length: raw.waveguide_length,
        height: raw.height,
        feed_point,
        num_clusters: raw.num_clusters,
        cluster_centers,
        aperture,
        min_spacing,
        antennas_per_cluster: raw.antennas_per_cluster,
        receive_antennas: raw.receive_antennas,
        num_users: raw.num_users,
        user_positions: raw.user_positions,
        target_position: raw.target_position,
        num_slots: raw.num_slots,
        total_time: raw.total_time,
        min_slot,
        carrier: raw.carrier,
        refractive_index: raw.refractive_index,
        attenuation: raw.attenuation,
        transmit_power: raw.transmit_power,
        noise_power: raw.noise_power,
        snr_threshold: raw.snr_threshold,
        rate_min: raw.rate_min,
        rcs_mean: raw.rcs_mean,
        rcs_decay,
    };
    cfg.validate()?;
    Ok((cfg, applied))
}

impl ScenarioConfig {
    /// Check every structural invariant, reporting the offending field.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        fn positive(field: &'static str, v: f64) -> Result<(), ScenarioError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invariant(field, format!("must be strictly positive, got {v}")))
            }
        }
        positive("waveguide_length", self.waveguide_length)?;
        positive("height", self.height)?;
        positive("aperture", self.aperture)?;
        positive("carrier", self.carrier)?;
        positive("refractive_index", self.refractive_index)?;
        positive("transmit_power", self.transmit_power)?;
        positive("noise_power", self.noise_power)?;
        positive("snr_threshold", self.snr_threshold)?;
        positive("rcs_mean", self.rcs_mean)?;
        positive("total_time", self.total_time)?;
        if self.attenuation < 0.0 {
            return Err(invariant("attenuation", "must be nonnegative".into()));
        }
        if self.rcs_decay < 0.0 {
            return Err(invariant("rcs_decay", "must be nonnegative".into()));
        }
        if self.rate_min < 0.0 {
            return Err(invariant("rate_min", "must be nonnegative".into()));
        }
        if self.min_spacing < 0.0 {
            return Err(invariant("min_spacing", "must be nonnegative".into()));
        }
        if self.min_slot < 0.0 {
            return Err(invariant("min_slot", "must be nonnegative".into()));
        }
        if self.num_clusters == 0 {
            return Err(invariant("num_clusters", "need at least one cluster".into()));
        }
        if self.antennas_per_cluster == 0 {
            return Err(invariant("antennas_per_cluster", "need at least one antenna".into()));
        }
        if self.receive_antennas == 0 {
            return Err(invariant("receive_antennas", "need at least one element".into()));
        }
        if self.num_slots == 0 {
            return Err(invariant("num_slots", "need at least one slot".into()));
        }
        if self.user_positions.len() != self.num_users {
            return Err(invariant(
                "user_positions",
                format!(
                    "length {} does not match num_users {}",
                    self.user_positions.len(),
                    self.num_users
                ),
            ));
        }
        if self.cluster_centers.len() != self.num_clusters {
            return Err(invariant(
                "cluster_centers",
                format!(
                    "length {} does not match num_clusters {}",
                    self.cluster_centers.len(),
                    self.num_clusters
                ),
            ));
        }
        let t_need = self.num_slots as f64 * self.min_slot;
        if t_need > self.total_time * (1.0 + 1e-12) {
            return Err(invariant(
                "min_slot",
                format!(
                    "num_slots*min_slot = {t_need} exceeds total_time = {}",
                    self.total_time
                ),
            ));
        }
        let span = (self.antennas_per_cluster as f64 - 1.0) * self.min_spacing;
        if span > self.aperture * (1.0 + 1e-12) {
            return Err(invariant(
                "min_spacing",
                format!(
                    "(N_T-1)*min_spacing = {span} exceeds aperture = {}",
                    self.aperture
                ),
            ));
        }
        // Apertures inside the waveguide and pairwise disjoint.
        let half = self.aperture / 2.0;
        for (m, &xm) in self.cluster_centers.iter().enumerate() {
            if xm - half < -1e-12 || xm + half > self.waveguide_length + 1e-12 {
                return Err(invariant(
                    "cluster_centers",
                    format!(
                        "cluster {m} aperture [{}, {}] leaves the waveguide [0, {}]",
                        xm - half,
                        xm + half,
                        self.waveguide_length
                    ),
                ));
            }
        }
        let mut order: Vec<usize> = (0..self.num_clusters).collect();
        order.sort_by(|&a, &b| {
            self.cluster_centers[a]
                .partial_cmp(&self.cluster_centers[b])
                .unwrap()
        });
        for w in order.windows(2) {
            let (a, b) = (w[0], w[1]);
            if self.cluster_centers[a] + half > self.cluster_centers[b] - half + 1e-12 {
                return Err(invariant(
                    "cluster_centers",
                    format!("apertures of clusters {a} and {b} overlap"),
                ));
            }
        }
        if self.feed_point < 0.0 || self.feed_point > self.waveguide_length {
            return Err(invariant(
                "feed_point",
                format!("must lie on the waveguide [0, {}]", self.waveguide_length),
            ));
        }
        Ok(())
    }

    /// Free-space wavelength `lambda`, meters.
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier
    }

    /// Guided wavelength `lambda_g = lambda / n_eff`, meters.
    pub fn guided_wavelength(&self) -> f64 {
        self.wavelength() / self.refractive_index
    }

    /// Free-space pathloss constant `eta = c / (4 pi f_c)`, meters.
    pub fn eta(&self) -> f64 {
        SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * self.carrier)
    }

    /// Aperture interval of cluster `m` (0-based).
    pub fn aperture_interval(&self, m: usize) -> (f64, f64) {
        let half = self.aperture / 2.0;
        (self.cluster_centers[m] - half, self.cluster_centers[m] + half)
    }

    /// Ground-plane angle from the +x axis between cluster `m`'s center and
    /// the target. All antennas of a cluster share this look angle.
    pub fn look_angle(&self, m: usize) -> f64 {
        let t = self.target_position;
        (t.y).atan2(t.x - self.cluster_centers[m])
    }

    /// Look angles of all clusters, in cluster order.
    pub fn look_angles(&self) -> Vec<f64> {
        (0..self.num_clusters).map(|m| self.look_angle(m)).collect()
    }

    /// Target direction seen from the receive array at the feed point.
    pub fn target_look_angle_from_feed(&self) -> f64 {
        let t = self.target_position;
        (t.y).atan2(t.x - self.feed_point)
    }

    /// Distance from the target to the receive array at the feed point
    /// (3-D, including the waveguide height).
    pub fn target_range_to_feed(&self) -> f64 {
        let t = self.target_position;
        ((t.x - self.feed_point).powi(2) + t.y * t.y + self.height * self.height).sqrt()
    }

    /// Half-wavelength receive ULA response toward direction `theta_e`,
    /// element i: `exp(-j pi i cos theta_e)`. Every entry has unit modulus,
    /// so the squared norm is exactly `N_R`.
    pub fn receive_steering(&self, theta_e: f64) -> Vec<Complex64> {
        let c = theta_e.cos();
        (0..self.receive_antennas)
            .map(|i| Complex64::from_polar(1.0, -std::f64::consts::PI * i as f64 * c))
            .collect()
    }

    /// True when the feed sits left of every aperture, which makes the
    /// guided length `x - x0` affine in the antenna position. The position
    /// optimizer requires this arrangement.
    pub fn feed_left_of_apertures(&self) -> bool {
        (0..self.num_clusters).all(|m| self.aperture_interval(m).0 >= self.feed_point)
    }

    /// Distance from antenna abscissa `x` to ground node `p` (3-D).
    pub fn node_distance(&self, x: f64, p: Point) -> f64 {
        ((x - p.x).powi(2) + p.y * p.y + self.height * self.height).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn table_i_json() -> String {
        r#"{
            "waveguide_length": 10.0,
            "height": 3.0,
            "num_clusters": 10,
            "antennas_per_cluster": 4,
            "receive_antennas": 8,
            "num_users": 2,
            "user_positions": [{"x": 3.0, "y": 2.0}, {"x": 7.0, "y": 4.0}],
            "target_position": {"x": 5.0, "y": 5.0},
            "num_slots": 4,
            "total_time": 0.008,
            "carrier": 3.0e10,
            "refractive_index": 1.4,
            "attenuation": 0.18,
            "transmit_power": 1.0,
            "noise_power": 1.0e-12,
            "snr_threshold": 10.0,
            "rate_min": 0.5,
            "rcs_mean": 1.0
        }"#
        .to_string()
    }

    #[test]
    fn table_i_document_loads_with_defaults() {
        let (cfg, applied) = load_scenario(&table_i_json()).unwrap();
        assert_eq!(cfg.num_clusters, 10);
        assert_eq!(cfg.receive_antennas, 8);
        assert_relative_eq!(cfg.rcs_decay, 0.1);
        assert_relative_eq!(cfg.cluster_centers[0], 0.5);
        assert_relative_eq!(cfg.cluster_centers[9], 9.5);
        assert_relative_eq!(cfg.min_slot, 0.008 / 16.0);
        assert!(applied.iter().any(|s| s.contains("rcs_decay")));
        assert!(applied.iter().any(|s| s.contains("cluster_centers")));
    }

    #[test]
    fn time_budget_violation_is_reported() {
        let doc = table_i_json().replace("\"total_time\": 0.008", "\"total_time\": 0.008, \"min_slot\": 0.004");
        let err = load_scenario(&doc).unwrap_err();
        match err {
            ScenarioError::Invariant { field, .. } => assert_eq!(field, "min_slot"),
            other => panic!("expected invariant error, got {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = table_i_json().replace("\"rcs_mean\": 1.0", "\"rcs_mean\": 1.0, \"bogus\": 1");
        assert!(matches!(load_scenario(&doc), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn overlapping_apertures_are_rejected() {
        let doc = table_i_json().replace(
            "\"num_clusters\": 10",
            "\"num_clusters\": 2, \"cluster_centers\": [2.0, 2.3]",
        );
        assert!(matches!(
            load_scenario(&doc),
            Err(ScenarioError::Invariant { field: "cluster_centers", .. })
        ));
    }

    #[test]
    fn look_angle_matches_geometry() {
        let (cfg, _) = load_scenario(&table_i_json()).unwrap();
        // target broadside of a hypothetical cluster at x = 5
        let mut cfg2 = cfg.clone();
        cfg2.cluster_centers[0] = 5.0;
        assert_relative_eq!(cfg2.look_angle(0), std::f64::consts::FRAC_PI_2);
        // on-axis ahead
        cfg2.target_position = Point::new(7.0, 0.0);
        assert_relative_eq!(cfg2.look_angle(0), 0.0);
        // frozen value: atan2(5, 3) for a cluster at x = 2, target (5, 5)
        cfg2.target_position = Point::new(5.0, 5.0);
        cfg2.cluster_centers[0] = 2.0;
        assert_relative_eq!(cfg2.look_angle(0), 1.0303768265243125, epsilon = 1e-12);
    }

    #[test]
    fn look_angle_is_monotone_in_cluster_position() {
        // atan2(y_e, x_e - x_m) with y_e > 0 grows strictly as the cluster
        // slides right past the target; it is also continuous there.
        let (mut cfg, _) = load_scenario(&table_i_json()).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..40 {
            cfg.cluster_centers[0] = 0.25 * i as f64;
            let a = cfg.look_angle(0);
            assert!(a > prev);
            assert!((0.0..std::f64::consts::PI).contains(&a));
            prev = a;
        }
    }

    #[test]
    fn steering_norm_is_element_count() {
        let (cfg, _) = load_scenario(&table_i_json()).unwrap();
        for theta in [0.1, 0.7, std::f64::consts::FRAC_PI_2, 2.9] {
            let v = cfg.receive_steering(theta);
            let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            assert_relative_eq!(n2, cfg.receive_antennas as f64, epsilon = 1e-12);
        }
        let mut cfg1 = cfg.clone();
        cfg1.receive_antennas = 1;
        assert_eq!(cfg1.receive_steering(1.23), vec![Complex64::new(1.0, 0.0)]);
        // broadside: cos(pi/2) = 0 makes every entry 1
        let v = cfg.receive_steering(std::f64::consts::FRAC_PI_2);
        for z in v {
            assert_relative_eq!(z.re, 1.0, epsilon = 1e-12);
            assert_relative_eq!(z.im, 0.0, epsilon = 1e-12);
        }
    }
}
