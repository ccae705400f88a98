//! Wideband multi-user channels: scenario configuration, link budget,
//! a clustered-ray generator and the binary dataset format.

mod dataset;
mod generate;

pub use dataset::{read_dataset, write_dataset, Dataset, DatasetError, Split, DATASET_MAGIC, DATASET_VERSION};
pub use generate::{generate_dataset, generate_sample, generate_sample_with_positions, planar_layout};

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::config::{ConfigError, KeyValueWriter, KeyValues};

/// Where candidate users are dropped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UserArea {
    /// Uniform over a 120° sector between the minimum distance and the cell radius.
    UmaSector,
    /// Uniform over a square of side `side_m` whose center lies `center_m`
    /// from the BS along the sector boresight.
    CrowdedBox { center_m: f64, side_m: f64 },
}

impl fmt::Display for UserArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UserArea::UmaSector => write!(f, "uma-sector"),
            UserArea::CrowdedBox { center_m, side_m } => write!(f, "crowded-box({center_m},{side_m})"),
        }
    }
}

impl FromStr for UserArea {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "uma-sector" {
            return Ok(UserArea::UmaSector);
        }
        let inner = s
            .strip_prefix("crowded-box(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("unknown user area {s:?}"))?;
        let (c, side) = inner.split_once(',').ok_or_else(|| format!("bad crowded-box {s:?}"))?;
        let center_m = c.trim().parse().map_err(|_| format!("bad center in {s:?}"))?;
        let side_m = side.trim().parse().map_err(|_| format!("bad side in {s:?}"))?;
        Ok(UserArea::CrowdedBox { center_m, side_m })
    }
}

/// System and propagation parameters. Field names double as config keys.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub f_c_ghz: f64,
    pub bandwidth_mhz: f64,
    pub subcarrier_spacing_khz: f64,
    pub m_max: usize,
    /// RBs per sample.
    pub m: usize,
    /// Candidate users.
    pub k: usize,
    /// Users scheduled per RB.
    pub k_prime: usize,
    pub n_t: usize,
    pub n_r: usize,
    pub n_rf: usize,
    pub p_tot_dbm: f64,
    pub n0_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub cell_radius_m: f64,
    pub min_distance_m: f64,
    pub bs_height_m: f64,
    pub user_height_m: f64,
    pub shadowing_std_db: f64,
    pub cluster_count: usize,
    pub rays_per_cluster: usize,
    pub delay_spread_ns: f64,
    pub user_area: UserArea,
    /// The last `duplicate_users` users copy the strongest remaining users.
    pub duplicate_users: usize,
    /// Relative complex Gaussian perturbation added to each copy (0 = exact).
    pub duplicate_jitter: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            f_c_ghz: 28.0,
            bandwidth_mhz: 400.0,
            subcarrier_spacing_khz: 120.0,
            m_max: 264,
            m: 2,
            k: 6,
            k_prime: 2,
            n_t: 4,
            n_r: 1,
            n_rf: 2,
            p_tot_dbm: 46.0,
            n0_dbm_hz: -174.0,
            noise_figure_db: 7.0,
            cell_radius_m: 250.0,
            min_distance_m: 35.0,
            bs_height_m: 25.0,
            user_height_m: 1.5,
            shadowing_std_db: 6.0,
            cluster_count: 8,
            rays_per_cluster: 10,
            delay_spread_ns: 300.0,
            user_area: UserArea::UmaSector,
            duplicate_users: 0,
            duplicate_jitter: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.k_prime == 0 || self.k_prime > self.n_rf {
            return bad(format!("need 1 <= k_prime <= n_rf, got {} and {}", self.k_prime, self.n_rf));
        }
        if self.m == 0 || self.m > self.m_max {
            return bad(format!("need 1 <= m <= m_max, got {} and {}", self.m, self.m_max));
        }
        if self.k == 0 || self.n_t == 0 || self.n_r == 0 {
            return bad("k, n_t and n_r must be positive".into());
        }
        if self.cluster_count == 0 || self.rays_per_cluster == 0 {
            return bad("cluster_count and rays_per_cluster must be positive".into());
        }
        if self.duplicate_users >= self.k {
            return bad(format!("duplicate_users {} must be below k {}", self.duplicate_users, self.k));
        }
        let finite = [
            self.f_c_ghz,
            self.bandwidth_mhz,
            self.subcarrier_spacing_khz,
            self.p_tot_dbm,
            self.n0_dbm_hz,
            self.noise_figure_db,
            self.cell_radius_m,
            self.min_distance_m,
            self.bs_height_m,
            self.user_height_m,
            self.shadowing_std_db,
            self.delay_spread_ns,
            self.duplicate_jitter,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all real-valued parameters must be finite".into());
        }
        if self.bandwidth_mhz <= 0.0 || self.f_c_ghz <= 0.0 || self.min_distance_m <= 0.0 {
            return bad("bandwidth, carrier and minimum distance must be positive".into());
        }
        if self.cell_radius_m < self.min_distance_m {
            return bad("cell radius below minimum distance".into());
        }
        if self.delay_spread_ns < 0.0 || self.shadowing_std_db < 0.0 || self.duplicate_jitter < 0.0 {
            return bad("spreads must be non-negative".into());
        }
        Ok(())
    }

    pub fn p_tot_watts(&self) -> f64 {
        dbm_to_watts(self.p_tot_dbm)
    }

    pub fn noise_power_watts(&self) -> f64 {
        dbm_to_watts(noise_power_per_rb_dbm(self))
    }

    /// Frequency width of one RB (12 subcarriers).
    pub fn rb_bandwidth_hz(&self) -> f64 {
        12.0 * self.subcarrier_spacing_khz * 1e3
    }

    pub fn from_kv(mut kv: KeyValues) -> Result<Self, ConfigError> {
        let c = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(c)
    }

    /// Consumes the scenario keys of `kv`, leaving any others in place.
    pub fn take_from(kv: &mut KeyValues) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        kv.take("f_c_ghz", &mut c.f_c_ghz)?;
        kv.take("bandwidth_mhz", &mut c.bandwidth_mhz)?;
        kv.take("subcarrier_spacing_khz", &mut c.subcarrier_spacing_khz)?;
        kv.take("m_max", &mut c.m_max)?;
        kv.take("m", &mut c.m)?;
        kv.take("k", &mut c.k)?;
        kv.take("k_prime", &mut c.k_prime)?;
        kv.take("n_t", &mut c.n_t)?;
        kv.take("n_r", &mut c.n_r)?;
        kv.take("n_rf", &mut c.n_rf)?;
        kv.take("p_tot_dbm", &mut c.p_tot_dbm)?;
        kv.take("n0_dbm_hz", &mut c.n0_dbm_hz)?;
        kv.take("noise_figure_db", &mut c.noise_figure_db)?;
        kv.take("cell_radius_m", &mut c.cell_radius_m)?;
        kv.take("min_distance_m", &mut c.min_distance_m)?;
        kv.take("bs_height_m", &mut c.bs_height_m)?;
        kv.take("user_height_m", &mut c.user_height_m)?;
        kv.take("shadowing_std_db", &mut c.shadowing_std_db)?;
        kv.take("cluster_count", &mut c.cluster_count)?;
        kv.take("rays_per_cluster", &mut c.rays_per_cluster)?;
        kv.take("delay_spread_ns", &mut c.delay_spread_ns)?;
        if let Some(area) = kv.take_raw("user_area") {
            c.user_area = area
                .parse()
                .map_err(|_| ConfigError::BadValue { key: "user_area".into(), value: area })?;
        }
        kv.take("duplicate_users", &mut c.duplicate_users)?;
        kv.take("duplicate_jitter", &mut c.duplicate_jitter)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KeyValueWriter::default();
        w.put("f_c_ghz", self.f_c_ghz)
            .put("bandwidth_mhz", self.bandwidth_mhz)
            .put("subcarrier_spacing_khz", self.subcarrier_spacing_khz)
            .put("m_max", self.m_max)
            .put("m", self.m)
            .put("k", self.k)
            .put("k_prime", self.k_prime)
            .put("n_t", self.n_t)
            .put("n_r", self.n_r)
            .put("n_rf", self.n_rf)
            .put("p_tot_dbm", self.p_tot_dbm)
            .put("n0_dbm_hz", self.n0_dbm_hz)
            .put("noise_figure_db", self.noise_figure_db)
            .put("cell_radius_m", self.cell_radius_m)
            .put("min_distance_m", self.min_distance_m)
            .put("bs_height_m", self.bs_height_m)
            .put("user_height_m", self.user_height_m)
            .put("shadowing_std_db", self.shadowing_std_db)
            .put("cluster_count", self.cluster_count)
            .put("rays_per_cluster", self.rays_per_cluster)
            .put("delay_spread_ns", self.delay_spread_ns)
            .put("user_area", self.user_area)
            .put("duplicate_users", self.duplicate_users)
            .put("duplicate_jitter", self.duplicate_jitter);
        w.finish()
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("pathloss needs a positive distance, got {0} m")]
pub struct DistanceError(pub f64);

/// UMa NLOS pathloss in dB for a 3D distance in meters, carrier in GHz and
/// user height in meters.
pub fn pathloss_db(d_3d: f64, f_c_ghz: f64, h_u: f64) -> Result<f64, DistanceError> {
    if !(d_3d > 0.0) {
        return Err(DistanceError(d_3d));
    }
    Ok(13.54 + 39.08 * d_3d.log10() + 20.0 * f_c_ghz.log10() - 0.6 * (h_u - 1.5))
}

/// Whole-band noise spread evenly over `m_max` RBs, in dBm.
pub fn noise_power_per_rb_dbm(cfg: &ScenarioConfig) -> f64 {
    let p_n = cfg.n0_dbm_hz + 10.0 * (cfg.bandwidth_mhz * 1e6).log10() + cfg.noise_figure_db;
    p_n - 10.0 * (cfg.m_max as f64).log10()
}

/// Linear noise power per RB in watts.
pub fn noise_power_per_rb(cfg: &ScenarioConfig) -> f64 {
    dbm_to_watts(noise_power_per_rb_dbm(cfg))
}

/// Complex channel array of shape `M × (K·N_R) × N_T`; row `k·N_R + r` is
/// receive antenna `r` of user `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTensor {
    pub m: usize,
    pub k: usize,
    pub n_r: usize,
    pub n_t: usize,
    pub data: Vec<Complex64>,
}

impl ChannelTensor {
    pub fn zeros(m: usize, k: usize, n_r: usize, n_t: usize) -> Self {
        Self { m, k, n_r, n_t, data: vec![Complex64::new(0.0, 0.0); m * k * n_r * n_t] }
    }

    pub fn from_fn(m: usize, k: usize, n_r: usize, n_t: usize, mut f: impl FnMut(usize, usize, usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(m * k * n_r * n_t);
        for mi in 0..m {
            for ki in 0..k {
                for r in 0..n_r {
                    for n in 0..n_t {
                        data.push(f(mi, ki, r, n));
                    }
                }
            }
        }
        Self { m, k, n_r, n_t, data }
    }

    pub fn rows(&self) -> usize {
        self.k * self.n_r
    }

    #[inline]
    pub fn index(&self, m: usize, k: usize, r: usize, n: usize) -> usize {
        ((m * self.k + k) * self.n_r + r) * self.n_t + n
    }

    #[inline]
    pub fn get(&self, m: usize, k: usize, r: usize, n: usize) -> Complex64 {
        self.data[self.index(m, k, r, n)]
    }

    #[inline]
    pub fn set(&mut self, m: usize, k: usize, r: usize, n: usize, v: Complex64) {
        let i = self.index(m, k, r, n);
        self.data[i] = v;
    }

    /// Row `h_{m,kr}` as a slice of length `N_T`.
    pub fn row(&self, m: usize, k: usize, r: usize) -> &[Complex64] {
        let start = self.index(m, k, r, 0);
        &self.data[start..start + self.n_t]
    }

    /// `‖H_{m,k}‖_F`.
    pub fn user_norm(&self, m: usize, k: usize) -> f64 {
        let start = self.index(m, k, 0, 0);
        self.data[start..start + self.n_r * self.n_t].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.m, self.k, self.n_r, self.n_t)
    }

    /// Keeps the listed users in the given order (used when `K <= K'`
    /// bypasses scheduling or for subset baselines).
    pub fn select_users(&self, users: &[usize]) -> Self {
        Self::from_fn(self.m, users.len(), self.n_r, self.n_t, |m, k, r, n| self.get(m, users[k], r, n))
    }

    /// Single-RB slice.
    pub fn rb(&self, m: usize) -> Self {
        Self::from_fn(1, self.k, self.n_r, self.n_t, |_, k, r, n| self.get(m, k, r, n))
    }
}
