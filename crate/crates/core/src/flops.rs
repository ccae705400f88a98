//! Closed-form inference FLOPs of one GNN layer and of whole networks.

use crate::precoder::PrecoderParams;
use crate::scheduler::SchedulerParams;

/// Problem sizes that enter the counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub m: u128,
    pub k: u128,
    pub k_prime: u128,
    pub n_t: u128,
    pub n_r: u128,
}

impl Dims {
    pub fn new(m: usize, k: usize, k_prime: usize, n_t: usize, n_r: usize) -> Self {
        Self { m: m as u128, k: k as u128, k_prime: k_prime as u128, n_t: n_t as u128, n_r: n_r as u128 }
    }

    fn positive(&self) -> bool {
        [self.m, self.k, self.k_prime, self.n_t, self.n_r].iter().all(|&x| x > 0)
    }
}

/// One scheduler layer mapping `c_in` to `c_out` channels:
///
/// `C'(2C−1)MKN_RN_T + 2C'C(KN_RN_T + MN_T + MKN_T + MKN_R)
///  + C[(M−1)KN_RN_T + (KN_R−1)MN_T + (N_R−1)MKN_T + (N_T−1)MKN_R] + 4C'`.
pub fn scheduler_layer(d: Dims, c_in: usize, c_out: usize) -> Option<u128> {
    let (c, co) = (c_in as u128, c_out as u128);
    if !d.positive() || c == 0 || co == 0 {
        return None;
    }
    let Dims { m, k, n_t, n_r, .. } = d;
    let edges = m * k * n_r * n_t;
    Some(
        co * (2 * c - 1) * edges
            + 2 * co * c * (k * n_r * n_t + m * n_t + m * k * n_t + m * k * n_r)
            + c * ((m - 1) * k * n_r * n_t + (k * n_r - 1) * m * n_t + (n_r - 1) * m * k * n_t + (n_t - 1) * m * k * n_r)
            + 4 * co,
    )
}

/// One precoder layer on `K'` streams mapping `d_in` to `d_out` channels:
///
/// `D'(2D−1)MK'N_RN_T + 2D'D(K'N_RN_T + 4MK'N_T + MK'N_R)
///  + D[(M−1)K'N_RN_T + (N_R−1)MK'N_T + (N_T−1)MK'N_R]
///  + D'MN_T(4K'² + 4K'N_R − K' + 1)`.
pub fn precoder_layer(d: Dims, d_in: usize, d_out: usize) -> Option<u128> {
    let (c, co) = (d_in as u128, d_out as u128);
    if !d.positive() || c == 0 || co == 0 {
        return None;
    }
    let Dims { m, k_prime: kp, n_t, n_r, .. } = d;
    Some(
        co * (2 * c - 1) * m * kp * n_r * n_t
            + 2 * co * c * (kp * n_r * n_t + 4 * m * kp * n_t + m * kp * n_r)
            + c * ((m - 1) * kp * n_r * n_t + (n_r - 1) * m * kp * n_t + (n_t - 1) * m * kp * n_r)
            + co * m * n_t * (4 * kp * kp + 4 * kp * n_r - kp + 1),
    )
}

/// Sum of [`scheduler_layer`] over consecutive widths.
pub fn scheduler_network(d: Dims, widths: &[usize]) -> Option<u128> {
    widths.windows(2).map(|w| scheduler_layer(d, w[0], w[1])).sum()
}

/// Sum of [`precoder_layer`] over consecutive widths.
pub fn precoder_network(d: Dims, widths: &[usize]) -> Option<u128> {
    widths.windows(2).map(|w| precoder_layer(d, w[0], w[1])).sum()
}

/// Every scheduler network (one for NGNN, `K'` for SGNN).
pub fn scheduler_params(d: Dims, params: &SchedulerParams) -> Option<u128> {
    params.nets.iter().map(|n| scheduler_network(d, &n.widths())).sum()
}

pub fn precoder_params(d: Dims, params: &PrecoderParams) -> Option<u128> {
    precoder_network(d, &params.net.widths())
}
