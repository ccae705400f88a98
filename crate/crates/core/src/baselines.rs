//! Reference schedulers and precoders, brute-force oracles, the structured
//! MISO precoder, two-pair power control and the empirical SPSD checker.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::channel::{generate_sample, ChannelTensor, ScenarioConfig};
use crate::precoder::{precode_samples, PrecoderParams};
use crate::report::{num, Csv};
use crate::scheduler::{hard_top, scores, SchedulerParams};
use crate::system::{extract_scheduled, sum_rate, HybridSolution, ScheduleBasis, SystemError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("effective channel is rank deficient (σ_min/σ_max = {0:e})")]
    RankDeficient(f64),
    #[error("{candidates} candidate schedules exceed the enumeration limit of {limit}")]
    Guard { candidates: f64, limit: f64 },
    #[error("invalid instance: {0}")]
    Instance(String),
    #[error("policy failed on sample seed {seed}: {message}")]
    Policy { seed: u64, message: String },
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// Largest number of candidate schedules [`exhaustive`] will enumerate.
pub const EXHAUSTIVE_LIMIT: f64 = 1e6;
/// Relative singular-value floor below which ZF is refused.
pub const RANK_TOL: f64 = 1e-12;
/// Ridge of the regularized fallback, relative to `trace / K'`.
pub const RIDGE: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

fn phase(c: Complex64) -> Complex64 {
    let r = c.norm();
    if r > 0.0 {
        c / r
    } else {
        ONE
    }
}

// ── Schedulers ──

/// Per RB, the `K'` users with the largest `‖H_{m,k}‖_F`, strongest first.
pub fn strongest(h: &ChannelTensor, k_prime: usize) -> ScheduleBasis {
    let z: Vec<f64> = (0..h.m).flat_map(|m| (0..h.k).map(move |k| (m, k))).map(|(m, k)| h.user_norm(m, k)).collect();
    hard_top(&z, h.m, h.k, k_prime.min(h.k))
}

/// A precoder for already scheduled channels under a total power budget.
pub type Precode<'a> = dyn Fn(&ChannelTensor, f64) -> Result<HybridSolution> + Sync + 'a;

/// Sum rate of the schedule `picks` (user lists per RB) under `precode`.
pub fn schedule_rate(h: &ChannelTensor, picks: &[Vec<usize>], precode: &Precode, p_tot: f64, sigma2: f64) -> Result<f64> {
    let basis = ScheduleBasis::from_indices(h.k, picks)?;
    let hs = extract_scheduled(h, &basis)?;
    let sol = precode(&hs, p_tot)?;
    Ok(sum_rate(&hs, None, &sol, sigma2)?.sum_rate)
}

/// Per RB, grows the user set one user at a time, keeping the addition
/// with the highest rate of that RB (with the RB's share `P_tot / M`).
pub fn greedy(h: &ChannelTensor, k_prime: usize, precode: &Precode, p_tot: f64, sigma2: f64) -> Result<ScheduleBasis> {
    let target = k_prime.min(h.k);
    let mut picks = Vec::with_capacity(h.m);
    for m in 0..h.m {
        let rb = h.rb(m);
        let mut chosen: Vec<usize> = Vec::with_capacity(target);
        while chosen.len() < target {
            let mut best: Option<(usize, f64)> = None;
            for u in (0..h.k).filter(|u| !chosen.contains(u)) {
                let mut trial = chosen.clone();
                trial.push(u);
                let r = schedule_rate(&rb, &[trial], precode, p_tot / h.m as f64, sigma2)?;
                if best.is_none_or(|(_, b)| r > b) {
                    best = Some((u, r));
                }
            }
            chosen.push(best.unwrap().0);
        }
        picks.push(chosen);
    }
    Ok(ScheduleBasis::from_indices(h.k, &picks)?)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(i) = (0..k).rev().find(|&i| cur[i] < n - k + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// The rate-maximizing schedule by enumeration.
///
/// With `per_rb` every RB is searched on its own with power `P_tot / M`,
/// which is exact for precoders that act per RB (digital ZF). Otherwise
/// the full cross-RB product is enumerated, as needed when the analog
/// stage couples the RBs. Users fill slots in ascending order; with a
/// shared analog stage another slot order of the same sets can rate
/// differently and is not searched.
pub fn exhaustive(
    h: &ChannelTensor,
    k_prime: usize,
    precode: &Precode,
    p_tot: f64,
    sigma2: f64,
    per_rb: bool,
) -> Result<(ScheduleBasis, f64)> {
    let kp = k_prime.min(h.k);
    let per = binomial(h.k, kp);
    let candidates = if per_rb { per * h.m as f64 } else { per.powi(h.m as i32) };
    if candidates > EXHAUSTIVE_LIMIT {
        return Err(BaselineError::Guard { candidates, limit: EXHAUSTIVE_LIMIT });
    }
    let sets = combinations(h.k, kp);
    if per_rb {
        let mut picks = Vec::with_capacity(h.m);
        let mut total = 0.0;
        for m in 0..h.m {
            let rb = h.rb(m);
            let mut best = (0, f64::NEG_INFINITY);
            for (i, s) in sets.iter().enumerate() {
                let r = schedule_rate(&rb, std::slice::from_ref(s), precode, p_tot / h.m as f64, sigma2)?;
                if r > best.1 {
                    best = (i, r);
                }
            }
            picks.push(sets[best.0].clone());
            total += best.1;
        }
        return Ok((ScheduleBasis::from_indices(h.k, &picks)?, total / h.m as f64));
    }
    let mut index = vec![0usize; h.m];
    let mut best = (index.clone(), f64::NEG_INFINITY);
    loop {
        let picks: Vec<Vec<usize>> = index.iter().map(|&i| sets[i].clone()).collect();
        let r = schedule_rate(h, &picks, precode, p_tot, sigma2)?;
        if r > best.1 {
            best = (index.clone(), r);
        }
        // odometer over RBs, last RB fastest
        let Some(pos) = (0..h.m).rev().find(|&p| index[p] + 1 < sets.len()) else {
            break;
        };
        index[pos] += 1;
        for i in &mut index[pos + 1..] {
            *i = 0;
        }
    }
    let picks: Vec<Vec<usize>> = best.0.iter().map(|&i| sets[i].clone()).collect();
    Ok((ScheduleBasis::from_indices(h.k, &picks)?, best.1))
}

// ── Precoders ──

/// Unit-modulus combiners: phases of the dominant left singular vector of
/// each stream's channel on the RB where it is strongest.
pub fn matched_combiners(h: &ChannelTensor) -> Vec<Complex64> {
    let mut v = Vec::with_capacity(h.k * h.n_r);
    for k in 0..h.k {
        if h.n_r == 1 {
            v.push(ONE);
            continue;
        }
        let m = (0..h.m).max_by(|&a, &b| h.user_norm(a, k).total_cmp(&h.user_norm(b, k))).unwrap_or(0);
        let mat = DMatrix::from_fn(h.n_r, h.n_t, |r, n| h.get(m, k, r, n));
        let svd = mat.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let best = (0..svd.singular_values.len()).max_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        let col = best.unwrap_or(0);
        // fix the global phase on the first nonzero entry
        let anchor = (0..h.n_r).map(|r| u[(r, col)]).find(|c| c.norm() > 0.0).map_or(ONE, |c| phase(c).conj());
        v.extend((0..h.n_r).map(|r| phase(u[(r, col)] * anchor)));
    }
    v
}

/// Combined rows `g_{m,k} = Σ_r conj(v_{k,r}) H[m,k,r,:]`.
pub fn effective_rows(h: &ChannelTensor, v: &[Complex64], m: usize) -> Vec<Vec<Complex64>> {
    (0..h.k)
        .map(|k| (0..h.n_t).map(|n| (0..h.n_r).map(|r| v[k * h.n_r + r].conj() * h.get(m, k, r, n)).sum()).collect())
        .collect()
}

/// Analog precoder with one matched-phase column per stream, taken from
/// the stream's strongest RB.
pub fn matched_analog(h: &ChannelTensor, v: &[Complex64]) -> Vec<Complex64> {
    let rows: Vec<Vec<Vec<Complex64>>> = (0..h.m).map(|m| effective_rows(h, v, m)).collect();
    let mut w = vec![ZERO; h.n_t * h.k];
    for k in 0..h.k {
        let energy = |m: usize| rows[m][k].iter().map(|c| c.norm_sqr()).sum::<f64>();
        let m = (0..h.m).max_by(|&a, &b| energy(a).total_cmp(&energy(b))).unwrap_or(0);
        for n in 0..h.n_t {
            w[n * h.k + k] = phase(rows[m][k][n].conj());
        }
    }
    w
}

/// Zero-forcing baseband columns for effective rows `g` (`K'' × L`)
/// behind the analog stage `a` (`N_T × L`, row-major), each normalized to
/// `‖A w_j‖² = power`.
pub fn zf_baseband(g: &[Vec<Complex64>], a: &[Complex64], n_t: usize, power: f64) -> Result<Vec<Vec<Complex64>>> {
    let eff = effective_matrix(g, a, n_t);
    let s = eff.clone().svd(false, false).singular_values;
    let (lo, hi) = s.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if eff.nrows() > eff.ncols() || !(hi > 0.0) || lo / hi < RANK_TOL {
        return Err(BaselineError::RankDeficient(if hi > 0.0 { lo / hi } else { 0.0 }));
    }
    let gram = &eff * eff.adjoint();
    let inv = gram.try_inverse().ok_or(BaselineError::RankDeficient(0.0))?;
    Ok(normalize_columns(&(eff.adjoint() * inv), a, n_t, power))
}

/// [`zf_baseband`] with the ridge `1e-6 · trace / K''` added to the Gram
/// matrix when the plain inverse is refused.
pub fn zf_or_ridge(g: &[Vec<Complex64>], a: &[Complex64], n_t: usize, power: f64) -> Vec<Vec<Complex64>> {
    if let Ok(w) = zf_baseband(g, a, n_t, power) {
        return w;
    }
    let eff = effective_matrix(g, a, n_t);
    let k = eff.nrows();
    let mut gram = &eff * eff.adjoint();
    let trace: f64 = (0..k).map(|i| gram[(i, i)].re).sum();
    if !(trace > 0.0) {
        return vec![vec![ZERO; a.len() / n_t]; k];
    }
    let ridge = RIDGE * trace / k as f64;
    for i in 0..k {
        gram[(i, i)] += ridge;
    }
    let inv = gram.try_inverse().unwrap_or_else(|| DMatrix::identity(k, k));
    normalize_columns(&(eff.adjoint() * inv), a, n_t, power)
}

fn effective_matrix(g: &[Vec<Complex64>], a: &[Complex64], n_t: usize) -> DMatrix<Complex64> {
    let l = a.len() / n_t;
    let gm = DMatrix::from_fn(g.len(), n_t, |i, n| g[i][n]);
    let am = DMatrix::from_row_slice(n_t, l, a);
    gm * am
}

fn normalize_columns(w: &DMatrix<Complex64>, a: &[Complex64], n_t: usize, power: f64) -> Vec<Vec<Complex64>> {
    let am = DMatrix::from_row_slice(n_t, a.len() / n_t, a);
    (0..w.ncols())
        .map(|j| {
            let col = w.column(j).into_owned();
            let norm = (&am * &col).norm();
            let c = if norm > 0.0 { power.sqrt() / norm } else { 0.0 };
            col.iter().map(|x| x * c).collect()
        })
        .collect()
}

/// Fully digital ZF with equal stream power `P_tot / (M K'')`, stored as a
/// solution with `W_RF = I` and `N_RF = N_T`.
pub fn digital_zf(h: &ChannelTensor, p_tot: f64) -> HybridSolution {
    let v = matched_combiners(h);
    let mut sol = HybridSolution::zeros(h.m, h.n_t, h.n_t, h.k, h.n_r);
    for n in 0..h.n_t {
        sol.w_rf[n * h.n_t + n] = ONE;
    }
    sol.v_rf = v.clone();
    let power = p_tot / (h.m * h.k) as f64;
    let eye = sol.w_rf.clone();
    for m in 0..h.m {
        let cols = zf_or_ridge(&effective_rows(h, &v, m), &eye, h.n_t, power);
        write_baseband(&mut sol, m, &cols);
    }
    sol
}

/// Matched-phase analog stage (`N_RF = K''`) followed by baseband ZF with
/// equal stream power `P_tot / (M K'')`.
pub fn hybrid_zf(h: &ChannelTensor, p_tot: f64) -> HybridSolution {
    let v = matched_combiners(h);
    let a = matched_analog(h, &v);
    let mut sol = HybridSolution::zeros(h.m, h.n_t, h.k, h.k, h.n_r);
    sol.w_rf = a.clone();
    sol.v_rf = v.clone();
    let power = p_tot / (h.m * h.k) as f64;
    for m in 0..h.m {
        let cols = zf_or_ridge(&effective_rows(h, &v, m), &a, h.n_t, power);
        write_baseband(&mut sol, m, &cols);
    }
    sol
}

fn write_baseband(sol: &mut HybridSolution, m: usize, cols: &[Vec<Complex64>]) {
    for (j, col) in cols.iter().enumerate() {
        for (f, &x) in col.iter().enumerate() {
            sol.w_bb[(m * sol.n_rf + f) * sol.k_prime + j] = x;
        }
    }
}

/// [`digital_zf`] as a [`Precode`] callback.
pub fn digital_zf_precode(h: &ChannelTensor, p_tot: f64) -> Result<HybridSolution> {
    Ok(digital_zf(h, p_tot))
}

/// [`hybrid_zf`] as a [`Precode`] callback.
pub fn hybrid_zf_precode(h: &ChannelTensor, p_tot: f64) -> Result<HybridSolution> {
    Ok(hybrid_zf(h, p_tot))
}

// ── Structured MISO precoder ──

#[derive(Clone, Debug, PartialEq)]
pub struct MisoPrecoderSpec {
    /// `h_1..h_K`, each of length `N_T`.
    pub channels: Vec<Vec<Complex64>>,
    pub lambda: Vec<f64>,
    pub power: Vec<f64>,
    pub sigma2: f64,
}

impl MisoPrecoderSpec {
    /// `λ_k = p_k = 1` for every user.
    pub fn unit(channels: Vec<Vec<Complex64>>, sigma2: f64) -> Self {
        let k = channels.len();
        Self { channels, lambda: vec![1.0; k], power: vec![1.0; k], sigma2 }
    }

    fn validate(&self) -> Result<usize> {
        let k = self.channels.len();
        let n_t = self.channels.first().map_or(0, Vec::len);
        let bad = k == 0
            || n_t == 0
            || self.channels.iter().any(|h| h.len() != n_t)
            || self.lambda.len() != k
            || self.power.len() != k
            || self.lambda.iter().chain(&self.power).any(|x| !(*x >= 0.0))
            || !(self.sigma2 > 0.0);
        if bad {
            return Err(BaselineError::Instance("MISO spec needs K ≥ 1 equal-length channels, λ, p ≥ 0, σ² > 0".into()));
        }
        Ok(n_t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MisoPrecoder {
    pub w: Vec<Vec<Complex64>>,
    /// Users whose unnormalized direction vanished (returned as zeros).
    pub zero: Vec<bool>,
}

/// Unnormalized directions `w'_k = h_k − U (I + UᴴU)⁻¹ Uᴴ h_k` with
/// `U = [h_1 √λ_1/σ, …]`.
pub fn miso_directions(spec: &MisoPrecoderSpec) -> Result<Vec<Vec<Complex64>>> {
    let n_t = spec.validate()?;
    let k = spec.channels.len();
    let sigma = spec.sigma2.sqrt();
    let u = DMatrix::from_fn(n_t, k, |n, l| spec.channels[l][n] * (spec.lambda[l].sqrt() / sigma));
    let inner = DMatrix::<Complex64>::identity(k, k) + u.adjoint() * &u;
    let inv = inner.try_inverse().ok_or_else(|| BaselineError::Instance("I + UᴴU is singular".into()))?;
    let proj = &u * inv * u.adjoint();
    Ok(spec
        .channels
        .iter()
        .map(|h| {
            let hv = DMatrix::from_column_slice(n_t, 1, h);
            (&hv - &proj * &hv).iter().copied().collect()
        })
        .collect())
}

/// `w_k = √p_k · w'_k / ‖w'_k‖` from [`miso_directions`].
pub fn miso_optimal_precoder(spec: &MisoPrecoderSpec) -> Result<MisoPrecoder> {
    let dirs = miso_directions(spec)?;
    let mut out = MisoPrecoder { w: Vec::with_capacity(dirs.len()), zero: Vec::with_capacity(dirs.len()) };
    for (w, &p) in dirs.into_iter().zip(&spec.power) {
        let norm = w.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.w.push(w.iter().map(|x| x * (p.sqrt() / norm)).collect());
            out.zero.push(false);
        } else {
            out.w.push(vec![ZERO; w.len()]);
            out.zero.push(true);
        }
    }
    Ok(out)
}

/// `Σ_k log2(1 + |h_kᴴ w_k|² / (Σ_{l≠k} |h_kᴴ w_l|² + σ²))`.
pub fn miso_sum_rate(channels: &[Vec<Complex64>], w: &[Vec<Complex64>], sigma2: f64) -> f64 {
    let gain = |h: &[Complex64], w: &[Complex64]| h.iter().zip(w).map(|(a, b)| a.conj() * b).sum::<Complex64>().norm_sqr();
    channels
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let interference: f64 = w.iter().enumerate().filter(|&(l, _)| l != k).map(|(_, wl)| gain(h, wl)).sum();
            (1.0 + gain(h, &w[k]) / (interference + sigma2)).log2()
        })
        .sum()
}

// ── Two-pair power control ──

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerControlInstance {
    pub h_t: f64,
    pub h_i: f64,
    pub sigma2: f64,
    pub p_max: f64,
}

/// Optimal power pattern of the symmetric two-pair channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PowerDecision {
    /// `(P_max, P_max)`.
    Both,
    /// `(P_max, 0)` and `(0, P_max)`.
    Single,
    /// All three candidates tie.
    Tie,
}

impl PowerDecision {
    pub fn points(self, p_max: f64) -> Vec<(f64, f64)> {
        match self {
            Self::Both => vec![(p_max, p_max)],
            Self::Single => vec![(p_max, 0.0), (0.0, p_max)],
            Self::Tie => vec![(p_max, 0.0), (0.0, p_max), (p_max, p_max)],
        }
    }
}

impl PowerControlInstance {
    fn validate(&self) -> Result<()> {
        if [self.h_t, self.h_i, self.sigma2, self.p_max].iter().all(|x| *x > 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(BaselineError::Instance(format!("power control fields must be positive: {self:?}")))
        }
    }

    pub fn rate(&self, p1: f64, p2: f64) -> f64 {
        (1.0 + self.h_t * p1 / (self.h_i * p2 + self.sigma2)).log2()
            + (1.0 + self.h_t * p2 / (self.h_i * p1 + self.sigma2)).log2()
    }

    /// `s_h = 2 / (√(h_T² + 4 h_I²) − h_T)`.
    pub fn threshold(&self) -> f64 {
        2.0 / ((self.h_t * self.h_t + 4.0 * self.h_i * self.h_i).sqrt() - self.h_t)
    }
}

/// Closed-form optimal pattern and the threshold `s_h`.
pub fn power_control_2pair(inst: &PowerControlInstance) -> Result<(PowerDecision, f64)> {
    inst.validate()?;
    let s = inst.threshold();
    let x = inst.p_max / inst.sigma2;
    let d = if s > x {
        PowerDecision::Both
    } else if s < x {
        PowerDecision::Single
    } else {
        PowerDecision::Tie
    };
    Ok((d, s))
}

/// Every point of the `n × n` grid on `[0, P_max]²` whose rate is within a
/// relative `1e-12` of the grid maximum.
pub fn power_control_grid(inst: &PowerControlInstance, n: usize) -> Result<Vec<(f64, f64)>> {
    inst.validate()?;
    if n < 2 {
        return Err(BaselineError::Instance("grid needs at least 2 points per axis".into()));
    }
    let step = |i: usize| inst.p_max * (i as f64 / (n - 1) as f64);
    let rates: Vec<(f64, f64, f64)> =
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (step(i), step(j), inst.rate(step(i), step(j)))).collect();
    let best = rates.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    Ok(rates.into_iter().filter(|r| r.2 >= best - 1e-12 * best.abs()).map(|r| (r.0, r.1)).collect())
}

// ── SPSD checker ──

/// Index set along which an element is duplicated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpsdAxis {
    Rb,
    UserGroup,
    /// Antennas within one user group.
    UeAntenna,
    BsAntenna,
}

impl fmt::Display for SpsdAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rb => "rb",
            Self::UserGroup => "user-group",
            Self::UeAntenna => "an-ue",
            Self::BsAntenna => "an-bs",
        })
    }
}

impl FromStr for SpsdAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rb" => Ok(Self::Rb),
            "user-group" => Ok(Self::UserGroup),
            "an-ue" => Ok(Self::UeAntenna),
            "an-bs" => Ok(Self::BsAntenna),
            _ => Err(format!("unknown axis {s:?} (rb, user-group, an-ue, an-bs)")),
        }
    }
}

/// Number of elements of `h` along `axis` (antennas of all groups for `UeAntenna`).
pub fn axis_len(h: &ChannelTensor, axis: SpsdAxis) -> usize {
    match axis {
        SpsdAxis::Rb => h.m,
        SpsdAxis::UserGroup => h.k,
        SpsdAxis::UeAntenna => h.k * h.n_r,
        SpsdAxis::BsAntenna => h.n_t,
    }
}

fn element_energy(h: &ChannelTensor, axis: SpsdAxis, e: usize) -> f64 {
    let (m, k, n_r, n_t) = h.dims();
    let mut s = 0.0;
    for a in 0..m {
        for u in 0..k {
            for r in 0..n_r {
                for n in 0..n_t {
                    let hit = match axis {
                        SpsdAxis::Rb => a == e,
                        SpsdAxis::UserGroup => u == e,
                        SpsdAxis::UeAntenna => u * n_r + r == e,
                        SpsdAxis::BsAntenna => n == e,
                    };
                    if hit {
                        s += h.get(a, u, r, n).norm_sqr();
                    }
                }
            }
        }
    }
    s
}

/// Copies element `src` onto `dst` along `axis`.
pub fn duplicate(h: &ChannelTensor, axis: SpsdAxis, src: usize, dst: usize) -> ChannelTensor {
    let n_r = h.n_r;
    ChannelTensor::from_fn(h.m, h.k, h.n_r, h.n_t, |a, u, r, n| match axis {
        SpsdAxis::Rb if a == dst => h.get(src, u, r, n),
        SpsdAxis::UserGroup if u == dst => h.get(a, src, r, n),
        SpsdAxis::UeAntenna if u * n_r + r == dst => h.get(a, src / n_r, src % n_r, n),
        SpsdAxis::BsAntenna if n == dst => h.get(a, u, r, src),
        _ => h.get(a, u, r, n),
    })
}

/// Picks the strongest element as the source and a seeded other element
/// as the target (within the same group for `UeAntenna`).
pub fn duplicate_pair(h: &ChannelTensor, axis: SpsdAxis, seed: u64) -> Option<(usize, usize)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (pool, base): (usize, usize) = match axis {
        SpsdAxis::UeAntenna => {
            let g = rng.random_range(0..h.k);
            (h.n_r, g * h.n_r)
        }
        _ => (axis_len(h, axis), 0),
    };
    if pool < 2 {
        return None;
    }
    let src = (base..base + pool).max_by(|&a, &b| element_energy(h, axis, a).total_cmp(&element_energy(h, axis, b)))?;
    let mut dst = base + rng.random_range(0..pool - 1);
    if dst >= src {
        dst += 1;
    }
    Some((src, dst))
}

/// A policy's decision for every element of the axis.
pub type Decisions = Vec<Vec<f64>>;
pub type Policy<'a> = dyn Fn(&ChannelTensor, SpsdAxis) -> Result<Decisions> + Sync + 'a;

#[derive(Clone, Debug, PartialEq)]
pub struct SpsdReport {
    pub axis: SpsdAxis,
    pub samples: usize,
    /// Fraction of samples whose duplicated pair got decisions within `tol`.
    pub agreement_rate: f64,
    pub max_deviation: f64,
    pub seed: u64,
    pub deviations: Vec<f64>,
}

pub const SPSD_SCHEMA: &str = "wbgnn-spsd v1";

impl SpsdReport {
    pub fn csv(reports: &[SpsdReport]) -> Csv {
        let mut csv = Csv::new(SPSD_SCHEMA, &["axis", "samples", "agreement_rate", "max_deviation", "seed"]);
        for r in reports {
            csv.push(vec![
                r.axis.to_string(),
                r.samples.to_string(),
                num(r.agreement_rate),
                num(r.max_deviation),
                r.seed.to_string(),
            ]);
        }
        csv
    }
}

/// Duplicates the strongest element of each generated sample onto another
/// element and measures how far the policy's two decisions differ.
pub fn spsd_check(
    policy: &Policy,
    axis: SpsdAxis,
    samples: usize,
    cfg: &ScenarioConfig,
    seed: u64,
    tol: f64,
) -> Result<SpsdReport> {
    let deviations = (0..samples)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            let h = generate_sample(cfg, s);
            spsd_deviation(policy, &h, axis, s)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(summarize(axis, seed, tol, deviations))
}

/// [`spsd_check`] on caller-supplied channels (sample `i` uses seed `seed + i`).
pub fn spsd_check_on(policy: &Policy, channels: &[ChannelTensor], axis: SpsdAxis, seed: u64, tol: f64) -> Result<SpsdReport> {
    let deviations = channels
        .par_iter()
        .enumerate()
        .map(|(i, h)| spsd_deviation(policy, h, axis, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(summarize(axis, seed, tol, deviations))
}

fn summarize(axis: SpsdAxis, seed: u64, tol: f64, deviations: Vec<f64>) -> SpsdReport {
    let samples = deviations.len();
    let agree = deviations.iter().filter(|&&d| d <= tol).count();
    SpsdReport {
        axis,
        samples,
        agreement_rate: if samples == 0 { 1.0 } else { agree as f64 / samples as f64 },
        max_deviation: deviations.iter().copied().fold(0.0, f64::max),
        seed,
        deviations,
    }
}

fn spsd_deviation(policy: &Policy, h: &ChannelTensor, axis: SpsdAxis, seed: u64) -> Result<f64> {
    let fail = |message: String| BaselineError::Policy { seed, message };
    let (src, dst) = duplicate_pair(h, axis, seed).ok_or_else(|| fail(format!("axis {axis} has fewer than two elements")))?;
    let hd = duplicate(h, axis, src, dst);
    let d = policy(&hd, axis).map_err(|e| fail(e.to_string()))?;
    if d.len() != axis_len(h, axis) {
        return Err(fail(format!("{} decisions for {} elements", d.len(), axis_len(h, axis))));
    }
    Ok(d[src].iter().zip(&d[dst]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

// ── Decision views ──

fn push_c(v: &mut Vec<f64>, c: Complex64) {
    v.push(c.re);
    v.push(c.im);
}

/// Per-element view of a precoding solution computed for all `K` users.
pub fn solution_decisions(sol: &HybridSolution, axis: SpsdAxis) -> Decisions {
    match axis {
        SpsdAxis::Rb => (0..sol.m)
            .map(|m| {
                let mut v = Vec::new();
                for j in 0..sol.k_prime {
                    sol.precoder(m, j).into_iter().for_each(|c| push_c(&mut v, c));
                }
                v
            })
            .collect(),
        SpsdAxis::UserGroup => (0..sol.k_prime)
            .map(|j| {
                let mut v = Vec::new();
                for m in 0..sol.m {
                    sol.precoder(m, j).into_iter().for_each(|c| push_c(&mut v, c));
                }
                sol.combiner(j).iter().for_each(|&c| push_c(&mut v, c));
                v
            })
            .collect(),
        SpsdAxis::UeAntenna => sol.v_rf.iter().map(|&c| vec![c.re, c.im]).collect(),
        SpsdAxis::BsAntenna => {
            let p: Vec<Vec<Complex64>> =
                (0..sol.m).flat_map(|m| (0..sol.k_prime).map(move |j| (m, j))).map(|(m, j)| sol.precoder(m, j)).collect();
            (0..sol.n_t)
                .map(|n| {
                    let mut v = Vec::new();
                    p.iter().for_each(|w| push_c(&mut v, w[n]));
                    v
                })
                .collect()
        }
    }
}

/// Per-element view of `M × K` user quantities (scores or activity).
pub fn user_decisions(values: &[f64], m: usize, k: usize, n_r: usize, n_t: usize, axis: SpsdAxis) -> Decisions {
    match axis {
        SpsdAxis::Rb => values.chunks(k).map(<[f64]>::to_vec).collect(),
        SpsdAxis::UserGroup => (0..k).map(|u| (0..m).map(|a| values[a * k + u]).collect()).collect(),
        SpsdAxis::UeAntenna => vec![values.to_vec(); k * n_r],
        SpsdAxis::BsAntenna => vec![values.to_vec(); n_t],
    }
}

/// The structured MISO precoder applied per RB to the first receive
/// antenna of every user (`h_k = conj(H[m,k,0,:])`).
pub fn miso_policy(sigma2: f64) -> impl Fn(&ChannelTensor, SpsdAxis) -> Result<Decisions> + Sync {
    move |h: &ChannelTensor, axis: SpsdAxis| {
        let mut sol = HybridSolution::zeros(h.m, h.n_t, h.n_t, h.k, h.n_r);
        for n in 0..h.n_t {
            sol.w_rf[n * h.n_t + n] = ONE;
        }
        sol.v_rf = vec![ONE; h.k * h.n_r];
        for m in 0..h.m {
            let channels = (0..h.k).map(|k| h.row(m, k, 0).iter().map(|c| c.conj()).collect()).collect();
            let w = miso_optimal_precoder(&MisoPrecoderSpec::unit(channels, sigma2))?;
            let cols: Vec<Vec<Complex64>> = w.w.into_iter().map(|c| c.into_iter().map(|x| x.conj()).collect()).collect();
            write_baseband(&mut sol, m, &cols);
        }
        Ok(solution_decisions(&sol, axis))
    }
}

/// Activity of the strongest-`K'` schedule.
pub fn strongest_policy(k_prime: usize) -> impl Fn(&ChannelTensor, SpsdAxis) -> Result<Decisions> + Sync {
    move |h: &ChannelTensor, axis: SpsdAxis| {
        let a = strongest(h, k_prime).activity();
        Ok(user_decisions(&a, h.m, h.k, h.n_r, h.n_t, axis))
    }
}

/// Scheduler scores `z` of the first network.
pub fn score_policy(params: &SchedulerParams) -> impl Fn(&ChannelTensor, SpsdAxis) -> Result<Decisions> + Sync + '_ {
    move |h: &ChannelTensor, axis: SpsdAxis| {
        let z = scores(params, &[h]).map_err(|e| BaselineError::Instance(e.to_string()))?;
        Ok(user_decisions(&z, h.m, h.k, h.n_r, h.n_t, axis))
    }
}

/// Precoder network applied to every user of the sample.
pub fn precoder_policy(
    params: &PrecoderParams,
    p_tot: f64,
    attention: bool,
) -> impl Fn(&ChannelTensor, SpsdAxis) -> Result<Decisions> + Sync + '_ {
    move |h: &ChannelTensor, axis: SpsdAxis| {
        let (sols, _) = precode_samples(params, &[h], p_tot, attention).map_err(|e| BaselineError::Instance(e.to_string()))?;
        Ok(solution_decisions(&sols[0], axis))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::check_constraints;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian(rng: &mut ChaCha8Rng, m: usize, k: usize, n_r: usize, n_t: usize) -> ChannelTensor {
        ChannelTensor::from_fn(m, k, n_r, n_t, |_, _, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn strongest_orders_by_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut h = gaussian(&mut rng, 2, 4, 1, 3);
        let all = strongest(&h, 4).indices();
        for (m, row) in all.iter().enumerate() {
            for w in row.windows(2) {
                assert!(h.user_norm(m, w[0]) >= h.user_norm(m, w[1]));
            }
        }
        for m in 0..2 {
            for n in 0..3 {
                let c = h.get(m, 2, 0, n);
                h.set(m, 2, 0, n, c * 10.0);
            }
        }
        assert!(strongest(&h, 1).indices().iter().all(|r| r == &[2]));
    }

    #[test]
    fn combinations_enumerate_subsets() {
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(combinations(5, 0), vec![Vec::<usize>::new()]);
        assert!(combinations(2, 3).is_empty());
        assert_eq!(binomial(6, 2), 15.0);
    }

    #[test]
    fn zf_nulls_interference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let g: Vec<Vec<Complex64>> = (0..2)
                .map(|_| (0..4).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
                .collect();
            let eye: Vec<Complex64> =
                (0..16).map(|i| if i % 5 == 0 { ONE } else { ZERO }).collect();
            let w = zf_baseband(&g, &eye, 4, 2.0).unwrap();
            let dot = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<Complex64>();
            let norm = |a: &[Complex64]| a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for i in 0..2 {
                assert!((norm(&w[i]).powi(2) - 2.0).abs() < 1e-12);
                for j in 0..2 {
                    if i != j {
                        assert!(dot(&g[i], &w[j]).norm() < 1e-9 * norm(&g[i]) * norm(&w[j]));
                    }
                }
            }
        }
    }

    #[test]
    fn zf_single_stream_is_matched_filter() {
        let g = vec![vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.3)]];
        let eye = vec![ONE, ZERO, ZERO, ONE];
        let w = zf_baseband(&g, &eye, 2, 1.0).unwrap();
        let n = (g[0][0].norm_sqr() + g[0][1].norm_sqr()).sqrt();
        for i in 0..2 {
            assert!((w[0][i] - g[0][i].conj() / n).norm() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_zf_is_refused_and_ridge_recovers() {
        let row = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        let g = vec![row.clone(), row];
        let eye = vec![ONE, ZERO, ZERO, ONE];
        assert!(matches!(zf_baseband(&g, &eye, 2, 1.0), Err(BaselineError::RankDeficient(_))));
        let w = zf_or_ridge(&g, &eye, 2, 1.0);
        assert!(w.iter().flatten().all(|c| c.re.is_finite() && c.im.is_finite()));
    }

    #[test]
    fn baseline_solutions_meet_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = gaussian(&mut rng, 3, 2, 2, 4);
        let d = digital_zf(&h, 5.0);
        assert!((d.transmit_power() - 5.0).abs() < 1e-9);
        let hy = hybrid_zf(&h, 5.0);
        let r = check_constraints(&hy, 5.0);
        assert!(r.max() < 1e-9, "{r:?}");
    }

    #[test]
    fn greedy_between_exhaustive_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut within, n) = (0, 200);
        for _ in 0..n {
            let h = gaussian(&mut rng, 1, 4, 1, 4);
            let g = greedy(&h, 2, &digital_zf_precode, 1.0, 0.1).unwrap();
            let rg = schedule_rate(&h, &g.indices(), &digital_zf_precode, 1.0, 0.1).unwrap();
            let (_, re) = exhaustive(&h, 2, &digital_zf_precode, 1.0, 0.1, true).unwrap();
            assert!(rg <= re + 1e-12);
            if rg >= 0.9 * re {
                within += 1;
            }
        }
        assert!(within as f64 >= 0.9 * n as f64, "{within}/{n}");
    }

    #[test]
    fn exhaustive_modes_agree_for_digital() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = gaussian(&mut rng, 2, 4, 1, 3);
        let (a, ra) = exhaustive(&h, 2, &digital_zf_precode, 2.0, 0.1, true).unwrap();
        let (b, rb) = exhaustive(&h, 2, &digital_zf_precode, 2.0, 0.1, false).unwrap();
        assert!((ra - rb).abs() < 1e-12);
        assert_eq!(a, b);
    }

    #[test]
    fn exhaustive_single_user_picks_best_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = gaussian(&mut rng, 1, 3, 1, 2);
        let (b, _) = exhaustive(&h, 1, &digital_zf_precode, 1.0, 0.1, true).unwrap();
        let best = (0..3).max_by(|&a, &c| h.user_norm(0, a).total_cmp(&h.user_norm(0, c))).unwrap();
        assert_eq!(b.indices(), vec![vec![best]]);
        let all = exhaustive(&h, 3, &digital_zf_precode, 1.0, 0.1, false).unwrap().0;
        assert_eq!(all.indices(), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn exhaustive_guard() {
        let h = ChannelTensor::zeros(4, 40, 1, 2);
        assert!(matches!(exhaustive(&h, 5, &digital_zf_precode, 1.0, 1.0, false), Err(BaselineError::Guard { .. })));
    }

    #[test]
    fn greedy_skips_zero_user() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut h = gaussian(&mut rng, 1, 3, 1, 4);
        for n in 0..4 {
            h.set(0, 0, 0, n, ZERO);
        }
        let picks = greedy(&h, 2, &digital_zf_precode, 1.0, 0.1).unwrap().indices();
        assert!(!picks[0].contains(&0));
        let all = greedy(&h, 3, &digital_zf_precode, 1.0, 0.1).unwrap().indices();
        let mut s = all[0].clone();
        s.sort();
        assert_eq!(s, [0, 1, 2]);
    }

    #[test]
    fn miso_hand_example() {
        let h = vec![vec![ONE, ONE]];
        let w = miso_optimal_precoder(&MisoPrecoderSpec::unit(h, 1.0)).unwrap();
        let e = std::f64::consts::FRAC_1_SQRT_2;
        assert!((w.w[0][0] - Complex64::new(e, 0.0)).norm() < 1e-12);
        assert!((w.w[0][1] - Complex64::new(e, 0.0)).norm() < 1e-12);
        // h / (1 + ‖h‖²)
        let d = miso_directions(&MisoPrecoderSpec::unit(vec![vec![ONE, ONE]], 1.0)).unwrap();
        for c in &d[0] {
            assert!((c - Complex64::new(1.0 / 3.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn miso_zero_lambda_is_matched_filter() {
        let h = vec![vec![Complex64::new(3.0, 4.0), ZERO], vec![ONE, Complex64::new(0.0, 1.0)]];
        let spec = MisoPrecoderSpec { lambda: vec![0.0, 0.0], ..MisoPrecoderSpec::unit(h.clone(), 1.0) };
        let w = miso_optimal_precoder(&spec).unwrap();
        for (wk, hk) in w.w.iter().zip(&h) {
            let n = hk.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for (a, b) in wk.iter().zip(hk) {
                assert!((a - b / n).norm() < 1e-12);
            }
        }
        let z = miso_optimal_precoder(&MisoPrecoderSpec::unit(vec![vec![ZERO, ZERO]], 1.0)).unwrap();
        assert_eq!(z.zero, [true]);
    }

    #[test]
    fn power_control_worked_instance() {
        let inst = PowerControlInstance { h_t: 1.0, h_i: 1.0, sigma2: 1.0, p_max: 2.0 };
        let (d, s) = power_control_2pair(&inst).unwrap();
        assert_eq!(s, 2.0 / (5f64.sqrt() - 1.0));
        assert!((s - 1.6180).abs() < 5e-5);
        assert_eq!(d, PowerDecision::Single);
        let mut grid = power_control_grid(&inst, 201).unwrap();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(grid, vec![(0.0, 2.0), (2.0, 0.0)]);

        let weak = PowerControlInstance { h_i: 1e-6, ..inst };
        assert_eq!(power_control_2pair(&weak).unwrap().0, PowerDecision::Both);
        assert!(power_control_2pair(&PowerControlInstance { h_t: -1.0, ..inst }).is_err());
    }

    #[test]
    fn spsd_axis_round_trip() {
        for a in [SpsdAxis::Rb, SpsdAxis::UserGroup, SpsdAxis::UeAntenna, SpsdAxis::BsAntenna] {
            assert_eq!(a.to_string().parse::<SpsdAxis>().unwrap(), a);
        }
        assert!("x".parse::<SpsdAxis>().is_err());
    }

    #[test]
    fn duplicate_copies_element() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = gaussian(&mut rng, 2, 3, 2, 3);
        let d = duplicate(&h, SpsdAxis::UeAntenna, 3, 2);
        assert_eq!(d.row(1, 1, 0), h.row(1, 1, 1));
        assert_eq!(d.row(1, 0, 1), h.row(1, 0, 1));
        let d = duplicate(&h, SpsdAxis::BsAntenna, 0, 2);
        assert_eq!(d.get(1, 2, 1, 2), h.get(1, 2, 1, 0));
        for axis in [SpsdAxis::Rb, SpsdAxis::UserGroup, SpsdAxis::UeAntenna, SpsdAxis::BsAntenna] {
            let (s, t) = duplicate_pair(&h, axis, 3).unwrap();
            assert_ne!(s, t);
            if axis == SpsdAxis::UeAntenna {
                assert_eq!(s / 2, t / 2);
            }
        }
    }

    #[test]
    fn spsd_examples() {
        let cfg = ScenarioConfig { m: 2, k: 4, n_t: 4, n_r: 1, ..ScenarioConfig::default() };
        let sigma2 = 1.0;
        let miso = miso_policy(sigma2);
        let r = spsd_check(&miso, SpsdAxis::BsAntenna, 20, &cfg, 11, 1e-10).unwrap();
        assert_eq!(r.agreement_rate, 1.0);
        assert_eq!(SpsdReport::csv(&[r]).rows.len(), 1);

        let top = strongest_policy(1);
        let r = spsd_check(&top, SpsdAxis::UserGroup, 20, &cfg, 11, 1e-6).unwrap();
        assert_eq!(r.agreement_rate, 0.0);
        assert_eq!(r.max_deviation, 1.0);
    }
}
