use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use super::{pathloss_db, ChannelTensor, ScenarioConfig, UserArea};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Delay scaling between the delay spread and exponential cluster delays.
const DELAY_SCALING: f64 = 2.3;
/// Per-cluster power fluctuation in dB.
const CLUSTER_SHADOWING_DB: f64 = 3.0;
const CLUSTER_AOD_SPREAD_DEG: f64 = 15.0;
const CLUSTER_EOD_SPREAD_DEG: f64 = 5.0;
const CLUSTER_EOA_SPREAD_DEG: f64 = 10.0;
const RAY_SPREAD_DEG: f64 = 2.0;

/// Rows × columns of a half-wavelength planar array holding `n` elements,
/// as close to square as the factorization allows.
pub fn planar_layout(n: usize) -> (usize, usize) {
    let mut rows = (n as f64).sqrt().floor() as usize;
    while rows > 1 && n % rows != 0 {
        rows -= 1;
    }
    (rows.max(1), n / rows.max(1))
}

fn steering(n: usize, azimuth: f64, elevation: f64) -> Vec<Complex64> {
    let (rows, cols) = planar_layout(n);
    let u = azimuth.sin() * elevation.cos();
    let v = elevation.sin();
    let mut out = Vec::with_capacity(n);
    for i in 0..rows {
        for j in 0..cols {
            out.push(Complex64::from_polar(1.0, PI * (j as f64 * u + i as f64 * v)));
        }
    }
    out
}

fn complex_normal(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

struct Ray {
    aod: f64,
    eod: f64,
    aoa: f64,
    eoa: f64,
    gain: Complex64,
}

struct Cluster {
    delay: f64,
    rays: Vec<Ray>,
}

fn draw_clusters(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, azimuth: f64, elevation: f64) -> Vec<Cluster> {
    let deg = PI / 180.0;
    let ds = cfg.delay_spread_ns * 1e-9;
    let mut delays: Vec<f64> = (0..cfg.cluster_count)
        .map(|_| -DELAY_SCALING * ds * (1.0 - rng.random::<f64>()).ln())
        .collect();
    let min = delays.iter().cloned().fold(f64::INFINITY, f64::min);
    delays.iter_mut().for_each(|d| *d -= min);
    delays.sort_by(f64::total_cmp);

    let shadow = Normal::new(0.0, CLUSTER_SHADOWING_DB).expect("finite std");
    let mut powers: Vec<f64> = delays
        .iter()
        .map(|&t| {
            let decay = if ds > 0.0 { (-t * (DELAY_SCALING - 1.0) / (DELAY_SCALING * ds)).exp() } else { 1.0 };
            decay * 10f64.powf(-shadow.sample(rng) / 10.0)
        })
        .collect();
    let total: f64 = powers.iter().sum();
    powers.iter_mut().for_each(|p| *p /= total);

    let normal = |std: f64| Normal::new(0.0, std).expect("finite std");
    let (aod_c, eod_c, eoa_c) = (
        normal(CLUSTER_AOD_SPREAD_DEG * deg),
        normal(CLUSTER_EOD_SPREAD_DEG * deg),
        normal(CLUSTER_EOA_SPREAD_DEG * deg),
    );
    let ray = normal(RAY_SPREAD_DEG * deg);
    let per_ray = 1.0 / cfg.rays_per_cluster as f64;

    delays
        .into_iter()
        .zip(powers)
        .map(|(delay, power)| {
            let aod = azimuth + aod_c.sample(rng);
            let eod = -elevation + eod_c.sample(rng);
            let aoa = rng.random_range(-PI..PI);
            let eoa = eoa_c.sample(rng);
            let rays = (0..cfg.rays_per_cluster)
                .map(|_| Ray {
                    aod: aod + ray.sample(rng),
                    eod: eod + ray.sample(rng),
                    aoa: aoa + ray.sample(rng),
                    eoa: eoa + ray.sample(rng),
                    gain: complex_normal(rng, power * per_ray),
                })
                .collect();
            Cluster { delay, rays }
        })
        .collect()
}

/// Horizontal position `(x, y)` in meters, x along the sector boresight.
fn drop_user(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> [f64; 2] {
    match cfg.user_area {
        UserArea::UmaSector => {
            let (r0, r1) = (cfg.min_distance_m, cfg.cell_radius_m);
            let r = (r0 * r0 + rng.random::<f64>() * (r1 * r1 - r0 * r0)).sqrt();
            let phi = rng.random_range(-PI / 3.0..PI / 3.0);
            [r * phi.cos(), r * phi.sin()]
        }
        UserArea::CrowdedBox { center_m, side_m } => [
            center_m + (rng.random::<f64>() - 0.5) * side_m,
            (rng.random::<f64>() - 0.5) * side_m,
        ],
    }
}

fn accumulate(
    h: &mut ChannelTensor,
    cfg: &ScenarioConfig,
    user: usize,
    amplitude: f64,
    clusters: &[Cluster],
    displacement: [f64; 2],
) {
    let wavenumber = 2.0 * PI * cfg.f_c_ghz * 1e9 / SPEED_OF_LIGHT;
    let rb_hz = cfg.rb_bandwidth_hz();
    for cluster in clusters {
        let rb_phase: Vec<Complex64> = (0..cfg.m)
            .map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 * rb_hz * cluster.delay))
            .collect();
        for ray in &cluster.rays {
            let bs = steering(cfg.n_t, ray.aod, ray.eod);
            let ue = steering(cfg.n_r, ray.aoa, ray.eoa);
            // phase of the user's offset from the shared reference point
            let shift = wavenumber * (displacement[0] * ray.aod.cos() + displacement[1] * ray.aod.sin());
            let g = ray.gain * Complex64::from_polar(amplitude, shift);
            for (m, p) in rb_phase.iter().enumerate() {
                let gm = g * p;
                for (r, a) in ue.iter().enumerate() {
                    let ga = gm * a;
                    for (n, b) in bs.iter().enumerate() {
                        let i = h.index(m, user, r, n);
                        h.data[i] += ga * b.conj();
                    }
                }
            }
        }
    }
}

/// Draws one channel realization; positions come from the configured user area.
pub fn generate_sample(cfg: &ScenarioConfig, seed: u64) -> ChannelTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<[f64; 2]> = (0..cfg.k).map(|_| drop_user(cfg, &mut rng)).collect();
    build(cfg, &mut rng, &positions)
}

/// Like [`generate_sample`] with fixed horizontal user positions `(x, y)` in meters.
pub fn generate_sample_with_positions(cfg: &ScenarioConfig, seed: u64, positions: &[[f64; 2]]) -> ChannelTensor {
    assert_eq!(positions.len(), cfg.k, "one position per user");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build(cfg, &mut rng, positions)
}

fn build(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, positions: &[[f64; 2]]) -> ChannelTensor {
    let mut h = ChannelTensor::zeros(cfg.m, cfg.k, cfg.n_r, cfg.n_t);
    let dh = cfg.bs_height_m - cfg.user_height_m;
    let shadowing = Normal::new(0.0, cfg.shadowing_std_db).expect("validated std");
    let link = |p: [f64; 2], rng: &mut ChaCha8Rng| {
        let d2 = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let d3 = (d2 * d2 + dh * dh).sqrt().max(1e-3);
        let pl = pathloss_db(d3, cfg.f_c_ghz, cfg.user_height_m).expect("positive distance");
        let gain_db = -pl - shadowing.sample(rng);
        (10f64.powf(gain_db / 20.0), p[1].atan2(p[0]), dh.atan2(d2))
    };

    match cfg.user_area {
        UserArea::UmaSector => {
            for (k, &p) in positions.iter().enumerate() {
                let (amp, az, el) = link(p, rng);
                let clusters = draw_clusters(cfg, rng, az, el);
                accumulate(&mut h, cfg, k, amp, &clusters, [0.0, 0.0]);
            }
        }
        UserArea::CrowdedBox { center_m, .. } => {
            // one scattering environment seen from the box center
            let (_, az, el) = link([center_m, 0.0], rng);
            let clusters = draw_clusters(cfg, rng, az, el);
            for (k, &p) in positions.iter().enumerate() {
                let (amp, _, _) = link(p, rng);
                accumulate(&mut h, cfg, k, amp, &clusters, [p[0] - center_m, p[1]]);
            }
        }
    }

    if cfg.duplicate_users > 0 {
        duplicate_strongest(&mut h, cfg, rng);
    }
    h
}

fn duplicate_strongest(h: &mut ChannelTensor, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) {
    let originals = cfg.k - cfg.duplicate_users;
    let strength: Vec<f64> = (0..cfg.k).map(|k| (0..cfg.m).map(|m| h.user_norm(m, k).powi(2)).sum()).collect();
    let mut order: Vec<usize> = (0..originals).collect();
    order.sort_by(|&a, &b| strength[b].total_cmp(&strength[a]).then(a.cmp(&b)));
    for d in 0..cfg.duplicate_users {
        let src = order[d % originals];
        let dst = originals + d;
        let rms = (strength[src] / (cfg.m * cfg.n_r * cfg.n_t) as f64).sqrt();
        for m in 0..cfg.m {
            for r in 0..cfg.n_r {
                for n in 0..cfg.n_t {
                    let mut v = h.get(m, src, r, n);
                    if cfg.duplicate_jitter > 0.0 {
                        v += complex_normal(rng, (cfg.duplicate_jitter * rms).powi(2));
                    }
                    h.set(m, dst, r, n, v);
                }
            }
        }
    }
}

/// `count` samples with seeds `base_seed + i`, in index order regardless of
/// how many threads generate them.
pub fn generate_dataset(cfg: &ScenarioConfig, base_seed: u64, count: usize) -> Vec<ChannelTensor> {
    (0..count)
        .into_par_iter()
        .map(|i| generate_sample(cfg, base_seed.wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{noise_power_per_rb_dbm, ScenarioConfig, UserArea};
    use super::*;

    fn correlation(a: &[Complex64], b: &[Complex64]) -> f64 {
        let dot: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        let na = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        dot.norm() / (na * nb)
    }

    #[test]
    fn layouts() {
        assert_eq!(planar_layout(1), (1, 1));
        assert_eq!(planar_layout(4), (2, 2));
        assert_eq!(planar_layout(8), (2, 4));
        assert_eq!(planar_layout(7), (1, 7));
        assert_eq!(planar_layout(64), (8, 8));
    }

    #[test]
    fn same_seed_same_bits() {
        let cfg = ScenarioConfig::default();
        let a = generate_sample(&cfg, 17);
        let b = generate_sample(&cfg, 17);
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
        assert_ne!(generate_sample(&cfg, 18), a);
        assert!(a.data.iter().all(|c| c.re.is_finite() && c.im.is_finite()));
        for k in 0..cfg.k {
            assert!(a.user_norm(0, k) > 0.0);
        }
    }

    #[test]
    fn single_cluster_without_delay_is_flat() {
        let cfg = ScenarioConfig { cluster_count: 1, delay_spread_ns: 0.0, m: 6, ..Default::default() };
        let h = generate_sample(&cfg, 3);
        for m in 1..cfg.m {
            for k in 0..cfg.k {
                assert_eq!(h.row(m, k, 0), h.row(0, k, 0));
            }
        }
    }

    #[test]
    fn adjacent_rbs_are_more_alike_than_random_users() {
        let cfg = ScenarioConfig { m: 4, ..Default::default() };
        let (mut adjacent, mut random) = (0.0, 0.0);
        let trials = 200;
        for s in 0..trials {
            let h = generate_sample(&cfg, s);
            adjacent += correlation(h.row(0, 0, 0), h.row(1, 0, 0));
            random += correlation(h.row(0, 0, 0), h.row(2, 3, 0));
        }
        assert!(adjacent > random, "{adjacent} vs {random}");
    }

    #[test]
    fn average_snr_matches_link_budget() {
        let cfg = ScenarioConfig { k: 1, m: 1, ..Default::default() };
        let dh = cfg.bs_height_m - cfg.user_height_m;
        let x = (100.0f64 * 100.0 - dh * dh).sqrt();
        let budget_db =
            cfg.p_tot_dbm - pathloss_db(100.0, cfg.f_c_ghz, cfg.user_height_m).unwrap() - noise_power_per_rb_dbm(&cfg);
        let sigma2 = cfg.noise_power_watts();
        let mut mean_db = 0.0;
        let n = 1000;
        for s in 0..n {
            let h = generate_sample_with_positions(&cfg, s, &[[x, 0.0]]);
            let per_entry = h.user_norm(0, 0).powi(2) / (cfg.n_t * cfg.n_r) as f64;
            mean_db += 10.0 * (cfg.p_tot_watts() * per_entry / sigma2).log10();
        }
        mean_db /= n as f64;
        assert!((mean_db - budget_db).abs() < 3.0, "{mean_db} vs {budget_db}");
    }

    #[test]
    fn entries_are_circularly_symmetric() {
        let cfg = ScenarioConfig::default();
        let per = cfg.m * cfg.k * cfg.n_r * cfg.n_t;
        let samples = 100_000 / per + 1;
        let mut re = Vec::new();
        let mut im = Vec::new();
        for s in 0..samples as u64 {
            let h = generate_sample(&cfg, 1000 + s);
            // scale out the per-user link gain so the draws are comparable
            for m in 0..cfg.m {
                for k in 0..cfg.k {
                    let scale = (cfg.n_t * cfg.n_r) as f64 / h.user_norm(m, k).powi(2);
                    for r in 0..cfg.n_r {
                        for c in h.row(m, k, r) {
                            re.push(c.re * scale.sqrt());
                            im.push(c.im * scale.sqrt());
                        }
                    }
                }
            }
        }
        for v in [re, im] {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 3.0 * (var / n).sqrt(), "mean {mean} se {}", (var / n).sqrt());
        }
    }

    #[test]
    fn crowded_box_is_more_correlated() {
        let avg = |area: UserArea| {
            let cfg = ScenarioConfig { user_area: area, ..Default::default() };
            let mut total = 0.0;
            let mut pairs = 0;
            for s in 0..100 {
                let h = generate_sample(&cfg, s);
                for i in 0..cfg.k {
                    for j in i + 1..cfg.k {
                        total += correlation(h.row(0, i, 0), h.row(0, j, 0));
                        pairs += 1;
                    }
                }
            }
            total / pairs as f64
        };
        let sector = avg(UserArea::UmaSector);
        let crowded = avg(UserArea::CrowdedBox { center_m: 100.0, side_m: 10.0 });
        assert!(crowded > sector, "{crowded} vs {sector}");
    }

    #[test]
    fn duplicates_copy_the_strongest_users() {
        let cfg = ScenarioConfig { k: 6, duplicate_users: 2, ..Default::default() };
        let h = generate_sample(&cfg, 5);
        let strength = |k: usize| (0..cfg.m).map(|m| h.user_norm(m, k).powi(2)).sum::<f64>();
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| strength(b).total_cmp(&strength(a)));
        for m in 0..cfg.m {
            assert_eq!(h.row(m, 4, 0), h.row(m, order[0], 0));
            assert_eq!(h.row(m, 5, 0), h.row(m, order[1], 0));
        }
    }

    #[test]
    fn dataset_order_is_independent_of_threads() {
        let cfg = ScenarioConfig::default();
        let par = generate_dataset(&cfg, 40, 8);
        let seq: Vec<_> = (0..8).map(|i| generate_sample(&cfg, 40 + i)).collect();
        assert_eq!(par, seq);
    }
}
