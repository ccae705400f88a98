//! The joint problem itself: schedules, hybrid solutions, the exact sum
//! rate, scheduled-channel extraction, model-based features, permutations
//! and the tape versions used for training.

mod features;
mod permute;
pub mod tape;

pub use features::{compute_features, FeatureTensors};
pub use permute::{permute_matrix, Axis, Permutation, Permute};

use num_complex::Complex64;
use thiserror::Error;

use crate::channel::ChannelTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("dimension mismatch: {0}")]
    Dims(String),
    #[error("noise power must be positive, got {0}")]
    Noise(f64),
    #[error("not a permutation: {0}")]
    Permutation(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

pub type Result<T, E = SystemError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisMode {
    Hard,
    Soft,
}

/// `M × K' × K` basis: row `(m, k')` says which user fills stream `k'` on RB `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleBasis {
    pub m: usize,
    pub k_prime: usize,
    pub k: usize,
    pub data: Vec<f64>,
    pub mode: BasisMode,
}

impl ScheduleBasis {
    /// Hard basis from the selected user of every `(m, k')`.
    pub fn from_indices(k: usize, picks: &[Vec<usize>]) -> Result<Self> {
        let m = picks.len();
        let k_prime = picks.first().map_or(0, Vec::len);
        let mut data = vec![0.0; m * k_prime * k];
        for (mi, row) in picks.iter().enumerate() {
            if row.len() != k_prime {
                return Err(SystemError::Schedule("ragged selection".into()));
            }
            for (j, &u) in row.iter().enumerate() {
                if u >= k || row[..j].contains(&u) {
                    return Err(SystemError::Schedule(format!("RB {mi}: bad or repeated user {u}")));
                }
                data[(mi * k_prime + j) * k + u] = 1.0;
            }
        }
        Ok(Self { m, k_prime, k, data, mode: BasisMode::Hard })
    }

    /// Soft basis from raw rows, checked to lie on the simplex.
    pub fn soft(m: usize, k_prime: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * k_prime * k {
            return Err(SystemError::Dims(format!("{} values for {m}×{k_prime}×{k}", data.len())));
        }
        for row in data.chunks(k.max(1)) {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                return Err(SystemError::Schedule("soft rows must be nonnegative and sum to 1".into()));
            }
        }
        Ok(Self { m, k_prime, k, data, mode: BasisMode::Soft })
    }

    pub fn get(&self, m: usize, kp: usize, k: usize) -> f64 {
        self.data[(m * self.k_prime + kp) * self.k + k]
    }

    pub fn row(&self, m: usize, kp: usize) -> &[f64] {
        let s = (m * self.k_prime + kp) * self.k;
        &self.data[s..s + self.k]
    }

    /// Argmax user of every row (the selection for a hard basis).
    pub fn indices(&self) -> Vec<Vec<usize>> {
        (0..self.m)
            .map(|m| {
                (0..self.k_prime)
                    .map(|kp| {
                        let row = self.row(m, kp);
                        (0..self.k).fold(0, |best, k| if row[k] > row[best] { k } else { best })
                    })
                    .collect()
            })
            .collect()
    }

    /// Scheduling matrix `a_m = Σ_{k'} b_{m,k'}`, `M × K` row-major.
    pub fn activity(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.m * self.k];
        for m in 0..self.m {
            for kp in 0..self.k_prime {
                for (k, v) in self.row(m, kp).iter().enumerate() {
                    a[m * self.k + k] += v;
                }
            }
        }
        a
    }
}

/// Analog precoder shared by all RBs, per-RB baseband precoders of the
/// scheduled streams and the per-stream analog combiners.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridSolution {
    pub m: usize,
    pub n_t: usize,
    pub n_rf: usize,
    /// Streams per RB (`K'`, or `K` in the unscheduled form).
    pub k_prime: usize,
    pub n_r: usize,
    /// `N_T × N_RF`, row-major.
    pub w_rf: Vec<Complex64>,
    /// `M × N_RF × K'`, row-major.
    pub w_bb: Vec<Complex64>,
    /// `K'·N_R`, stream-major.
    pub v_rf: Vec<Complex64>,
}

impl HybridSolution {
    pub fn zeros(m: usize, n_t: usize, n_rf: usize, k_prime: usize, n_r: usize) -> Self {
        let z = Complex64::new(0.0, 0.0);
        Self {
            m,
            n_t,
            n_rf,
            k_prime,
            n_r,
            w_rf: vec![z; n_t * n_rf],
            w_bb: vec![z; m * n_rf * k_prime],
            v_rf: vec![z; k_prime * n_r],
        }
    }

    pub fn w_rf_at(&self, n: usize, f: usize) -> Complex64 {
        self.w_rf[n * self.n_rf + f]
    }

    pub fn w_bb_at(&self, m: usize, f: usize, kp: usize) -> Complex64 {
        self.w_bb[(m * self.n_rf + f) * self.k_prime + kp]
    }

    /// Effective precoder `W_RF w_{m,k'}` of length `N_T`.
    pub fn precoder(&self, m: usize, kp: usize) -> Vec<Complex64> {
        (0..self.n_t)
            .map(|n| (0..self.n_rf).map(|f| self.w_rf_at(n, f) * self.w_bb_at(m, f, kp)).sum())
            .collect()
    }

    pub fn combiner(&self, kp: usize) -> &[Complex64] {
        &self.v_rf[kp * self.n_r..(kp + 1) * self.n_r]
    }

    /// `Σ_m Σ_{k'} ‖W_RF w_{m,k'}‖²`.
    pub fn transmit_power(&self) -> f64 {
        (0..self.m)
            .flat_map(|m| (0..self.k_prime).map(move |kp| (m, kp)))
            .map(|(m, kp)| self.precoder(m, kp).iter().map(|c| c.norm_sqr()).sum::<f64>())
            .sum()
    }

    fn check_against(&self, h: &ChannelTensor) -> Result<()> {
        if h.m != self.m || h.k != self.k_prime || h.n_r != self.n_r || h.n_t != self.n_t {
            return Err(SystemError::Dims(format!(
                "channel (M={}, K={}, N_R={}, N_T={}) vs solution (M={}, K'={}, N_R={}, N_T={})",
                h.m, h.k, h.n_r, h.n_t, self.m, self.k_prime, self.n_r, self.n_t
            )));
        }
        let ok = self.w_rf.len() == self.n_t * self.n_rf
            && self.w_bb.len() == self.m * self.n_rf * self.k_prime
            && self.v_rf.len() == self.k_prime * self.n_r;
        if !ok {
            return Err(SystemError::Dims("solution buffers do not match their dimensions".into()));
        }
        Ok(())
    }
}

/// Sum rate and its per-`(m, k)` terms.
#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    /// `(1/M) Σ_m Σ_k R_{m,k}` in bits/s/Hz.
    pub sum_rate: f64,
    /// `M × streams`, row-major.
    pub per_stream: Vec<f64>,
}

/// Rate of the streams of `h` (already the scheduled channel, or the full
/// channel with `K` streams) under `sol`.
///
/// With `activity = Some(a)` (`M × K`), `a_{m,k}` weights the signal and
/// interference power of stream `k` (continuous weights give the relaxed
/// schedule); `None` means every stream is active.
pub fn sum_rate(h: &ChannelTensor, activity: Option<&[f64]>, sol: &HybridSolution, sigma2: f64) -> Result<RateReport> {
    if !(sigma2 > 0.0) {
        return Err(SystemError::Noise(sigma2));
    }
    sol.check_against(h)?;
    let streams = h.k;
    if let Some(a) = activity {
        if a.len() != h.m * streams {
            return Err(SystemError::Dims(format!("activity has {} entries, need {}", a.len(), h.m * streams)));
        }
    }
    let noise = h.n_r as f64 * sigma2;
    let mut per_stream = vec![0.0; h.m * streams];
    for m in 0..h.m {
        let precoders: Vec<Vec<Complex64>> = (0..streams).map(|j| sol.precoder(m, j)).collect();
        let weight = |j: usize| activity.map_or(1.0, |a| a[m * streams + j]);
        for k in 0..streams {
            let v = sol.combiner(k);
            let g: Vec<Complex64> = (0..h.n_t)
                .map(|n| (0..h.n_r).map(|r| v[r].conj() * h.get(m, k, r, n)).sum())
                .collect();
            let power = |j: usize| -> f64 {
                let c: Complex64 = g.iter().zip(&precoders[j]).map(|(a, b)| a * b).sum();
                weight(j) * c.norm_sqr()
            };
            let signal = power(k);
            let interference: f64 = (0..streams).filter(|&j| j != k).map(power).sum();
            per_stream[m * streams + k] = (1.0 + signal / (interference + noise)).log2();
        }
    }
    let sum_rate = per_stream.iter().sum::<f64>() / h.m as f64;
    Ok(RateReport { sum_rate, per_stream })
}

/// `H'_m = (B_m ⊗ I_{N_R}) H_m`.
pub fn extract_scheduled(h: &ChannelTensor, basis: &ScheduleBasis) -> Result<ChannelTensor> {
    if basis.m != h.m || basis.k != h.k {
        return Err(SystemError::Dims(format!(
            "basis {}×{}×{} against channel with M={}, K={}",
            basis.m, basis.k_prime, basis.k, h.m, h.k
        )));
    }
    let mut out = ChannelTensor::zeros(h.m, basis.k_prime, h.n_r, h.n_t);
    for m in 0..h.m {
        for kp in 0..basis.k_prime {
            for (k, &b) in basis.row(m, kp).iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                for r in 0..h.n_r {
                    for n in 0..h.n_t {
                        let i = out.index(m, kp, r, n);
                        out.data[i] += h.get(m, k, r, n) * b;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Extract with the basis, then evaluate the scheduled rate.
pub fn scheduled_rate(h: &ChannelTensor, basis: &ScheduleBasis, sol: &HybridSolution, sigma2: f64) -> Result<RateReport> {
    sum_rate(&extract_scheduled(h, basis)?, None, sol, sigma2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintReport {
    /// `max | |W_RF[n,j]| - 1 |`.
    pub unit_modulus_rf: f64,
    /// `max | |v[k'r]| - 1 |`.
    pub unit_modulus_comb: f64,
    /// `|Σ‖W_RF w‖² - P_tot| / P_tot`.
    pub power_residual: f64,
}

impl ConstraintReport {
    pub fn max(&self) -> f64 {
        self.unit_modulus_rf.max(self.unit_modulus_comb).max(self.power_residual)
    }
}

pub fn check_constraints(sol: &HybridSolution, p_tot: f64) -> ConstraintReport {
    let dev = |v: &[Complex64]| v.iter().map(|c| (c.norm() - 1.0).abs()).fold(0.0, f64::max);
    ConstraintReport {
        unit_modulus_rf: dev(&sol.w_rf),
        unit_modulus_comb: dev(&sol.v_rf),
        power_residual: (sol.transmit_power() - p_tot).abs() / p_tot,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn scalar_link_has_unit_rate() {
        let h = ChannelTensor::from_fn(1, 1, 1, 1, |_, _, _, _| c(1.0, 0.0));
        let mut sol = HybridSolution::zeros(1, 1, 1, 1, 1);
        sol.w_rf[0] = c(1.0, 0.0);
        sol.w_bb[0] = c(1.0, 0.0);
        sol.v_rf[0] = c(1.0, 0.0);
        let r = sum_rate(&h, None, &sol, 1.0).unwrap();
        assert_eq!(r.sum_rate, 1.0);

        sol.w_bb[0] = c(0.0, 0.0);
        assert_eq!(sum_rate(&h, None, &sol, 1.0).unwrap().sum_rate, 0.0);
        assert_eq!(sum_rate(&h, None, &sol, 0.0), Err(SystemError::Noise(0.0)));
    }

    #[test]
    fn orthogonal_users_are_interference_free() {
        // e_1, e_2 channels, identity-phase analog stage, ZF baseband = I
        let h = ChannelTensor::from_fn(1, 2, 1, 2, |_, k, _, n| c(if k == n { 0.8 } else { 0.0 }, 0.0));
        let mut sol = HybridSolution::zeros(1, 2, 2, 2, 1);
        sol.w_rf = vec![c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)];
        // W_RF^{-1} = 0.5 [[1, 1], [1, -1]]
        sol.w_bb = vec![c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(-0.5, 0.0)];
        sol.v_rf = vec![c(1.0, 0.0), c(0.0, 1.0)];
        let sigma2 = 0.1;
        let r = sum_rate(&h, None, &sol, sigma2).unwrap();

        // brute-force SINR from the effective precoders
        let mut expect = 0.0;
        for k in 0..2 {
            let gains: Vec<f64> = (0..2)
                .map(|j| {
                    let p = sol.precoder(0, j);
                    let s: Complex64 = (0..2).map(|n| sol.v_rf[k].conj() * h.get(0, k, 0, n) * p[n]).sum();
                    s.norm_sqr()
                })
                .collect();
            let interference = gains[1 - k];
            assert!(interference < 1e-30);
            expect += (1.0 + gains[k] / (interference + sigma2)).log2();
        }
        let closed = 2.0 * (1.0 + 0.64 / sigma2).log2();
        assert!((r.sum_rate - expect).abs() < 1e-9);
        assert!((r.sum_rate - closed).abs() < 1e-9);
    }

    #[test]
    fn activity_weights_enter_signal_and_interference() {
        let h = ChannelTensor::from_fn(1, 2, 1, 1, |_, k, _, _| c(1.0 + k as f64, 0.0));
        let mut sol = HybridSolution::zeros(1, 1, 1, 2, 1);
        sol.w_rf[0] = c(1.0, 0.0);
        sol.w_bb = vec![c(1.0, 0.0), c(1.0, 0.0)];
        sol.v_rf = vec![c(1.0, 0.0); 2];
        let r = sum_rate(&h, Some(&[1.0, 0.0]), &sol, 1.0).unwrap();
        assert_eq!(r.per_stream, vec![1.0, 0.0]);
        let half = sum_rate(&h, Some(&[0.5, 0.5]), &sol, 1.0).unwrap();
        assert!((half.per_stream[0] - (1.0f64 + 0.5 / 1.5).log2()).abs() < 1e-15);
    }

    #[test]
    fn hard_and_soft_extraction() {
        let h = ChannelTensor::from_fn(1, 3, 1, 2, |_, k, _, n| c(k as f64 + 1.0, n as f64));
        let b = ScheduleBasis::from_indices(3, &[vec![1, 0]]).unwrap();
        let hp = extract_scheduled(&h, &b).unwrap();
        assert_eq!(hp.row(0, 0, 0), h.row(0, 1, 0));
        assert_eq!(hp.row(0, 1, 0), h.row(0, 0, 0));

        let s = ScheduleBasis::soft(1, 1, 3, vec![0.5, 0.5, 0.0]).unwrap();
        let hs = extract_scheduled(&h, &s).unwrap();
        assert_eq!(hs.row(0, 0, 0), &[c(1.5, 0.0), c(1.5, 1.0)]);
        assert_eq!(s.activity(), vec![0.5, 0.5, 0.0]);

        assert!(ScheduleBasis::from_indices(3, &[vec![1, 1]]).is_err());
        assert!(ScheduleBasis::soft(1, 1, 2, vec![0.7, 0.7]).is_err());
    }

    #[test]
    fn constraint_report() {
        let mut sol = HybridSolution::zeros(1, 2, 1, 1, 1);
        sol.w_rf = vec![c(1.0, 0.0), c(0.0, 2.0)];
        sol.w_bb = vec![c(1.0, 0.0)];
        sol.v_rf = vec![c(0.6, 0.8)];
        let r = check_constraints(&sol, 5.0);
        assert_eq!(r.unit_modulus_rf, 1.0);
        assert!(r.unit_modulus_comb < 1e-15);
        assert!(r.power_residual < 1e-15);

        sol.w_bb[0] *= 2.0;
        let r = check_constraints(&sol, 5.0);
        assert!((r.power_residual - 3.0).abs() < 1e-12);
    }
}
