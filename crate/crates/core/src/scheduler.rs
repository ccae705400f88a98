//! Scheduler networks: the single equivariant network (NGNN) that scores
//! users per RB and picks the top `K'`, and the sequential variant (SGNN)
//! whose `K'` sub-networks pick one user each.

use std::fmt;
use std::str::FromStr;

use crate::channel::ChannelTensor;
use crate::gnn::{activate, aggregation_terms, check_widths, combine, Bound, Grid, Mode, Network};
use crate::system::{compute_features, BasisMode, ScheduleBasis};
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

/// Matrices per scheduler layer.
pub const SCHEDULER_WEIGHTS: usize = 5;
/// Floor of `1 - b̃` before the logarithm in the soft top-k recursion.
pub const SOFT_TOP_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Ngnn,
    Sgnn,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Ngnn => "ngnn",
            Variant::Sgnn => "sgnn",
        })
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ngnn" => Ok(Variant::Ngnn),
            "sgnn" => Ok(Variant::Sgnn),
            _ => Err(format!("unknown variant {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerParams {
    pub variant: Variant,
    /// One network for NGNN, `K'` for SGNN.
    pub nets: Vec<Network>,
}

impl SchedulerParams {
    /// `hidden` lists the hidden widths; input and output widths are implied.
    pub fn new(variant: Variant, hidden: &[usize], k_prime: usize, seed: u64) -> Self {
        let (count, c_in) = match variant {
            Variant::Ngnn => (1, 4),
            Variant::Sgnn => (k_prime, 5),
        };
        let mut widths = vec![c_in];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let nets = (0..count)
            .map(|i| Network::new(seed.wrapping_add(i as u64), &widths, SCHEDULER_WEIGHTS))
            .collect();
        Self { variant, nets }
    }

    pub fn input_width(&self) -> usize {
        match self.variant {
            Variant::Ngnn => 4,
            Variant::Sgnn => 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for net in &self.nets {
            check_widths(net, self.input_width(), 1, SCHEDULER_WEIGHTS)?;
        }
        if self.variant == Variant::Ngnn && self.nets.len() != 1 {
            return Err(TensorError::ShapeMismatch { op: "scheduler", detail: "NGNN has one network".into() });
        }
        Ok(())
    }
}

/// `[Re H, Im H, F_S, F_O]` per hyper-edge for a batch, `[B, M, K·N_R, N_T, 4]`.
/// Each channel is divided by its RMS entry magnitude.
pub fn scheduler_input(samples: &[&ChannelTensor]) -> Result<(Tensor, Grid)> {
    let first = samples.first().ok_or(TensorError::ShapeMismatch { op: "scheduler", detail: "empty batch".into() })?;
    let (m, k, n_r, n_t) = first.dims();
    let grid = Grid { batch: samples.len(), m, k, n_r, n_t };
    let mut data = Vec::with_capacity(samples.len() * first.data.len() * 4);
    for h in samples {
        if h.dims() != (m, k, n_r, n_t) {
            return Err(TensorError::ShapeMismatch { op: "scheduler", detail: "samples differ in dims".into() });
        }
        let f = compute_features(h);
        let inv = inverse_rms(h);
        for mi in 0..m {
            for ki in 0..k {
                for r in 0..n_r {
                    for (n, c) in h.row(mi, ki, r).iter().enumerate() {
                        debug_assert!(n < n_t);
                        data.push(c.re * inv);
                        data.push(c.im * inv);
                        data.push(f.f_s[mi * k + ki]);
                        data.push(f.f_o[mi * k * n_r + ki * n_r + r]);
                    }
                }
            }
        }
    }
    Ok((Tensor::new(&grid.shape(4), data)?, grid))
}

/// `1 / rms(|h|)`, or 1 for an all-zero channel.
pub fn inverse_rms(h: &ChannelTensor) -> f64 {
    let ms = h.data.iter().map(|c| c.norm_sqr()).sum::<f64>() / h.data.len() as f64;
    if ms > 0.0 {
        1.0 / ms.sqrt()
    } else {
        1.0
    }
}

/// Runs one scheduler network on `x` and compresses to scores `[B, M, K]`.
pub fn network_scores(tape: &mut Tape, net: &Network, bound: &mut Bound, x: Var, grid: Grid, mode: Mode) -> Result<Var> {
    let mut h = x;
    for l in 0..net.layers.len() {
        let terms = aggregation_terms(tape, h, grid)?;
        let pre = combine(tape, &terms, &bound.layers[l])?;
        h = activate(tape, net, bound, l, pre, mode)?;
    }
    let h = tape.mean(h, 3)?;
    let h = tape.reshape(h, &[grid.batch, grid.m, grid.k, grid.n_r])?;
    let h = tape.mean(h, 3)?;
    tape.reshape(h, &[grid.batch, grid.m, grid.k])
}

/// Indices of the `K'` largest scores, descending, ties to the lowest index.
pub fn top_indices(z: &[f64], k_prime: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..z.len()).collect();
    order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    order.truncate(k_prime);
    order
}

/// Hard top-`K'` basis from `M × K` scores.
pub fn hard_top(z: &[f64], m: usize, k: usize, k_prime: usize) -> ScheduleBasis {
    assert!(k_prime <= k, "K' = {k_prime} exceeds K = {k}");
    let picks: Vec<Vec<usize>> = z.chunks(k).take(m).map(|row| top_indices(row, k_prime)).collect();
    ScheduleBasis::from_indices(k, &picks).expect("top indices are distinct")
}

/// One-hot of the argmax (lowest index on ties) of every row of `[..., K]`.
fn onehot_rows(z: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for (row, o) in z.chunks(k).zip(out.chunks_mut(k)) {
        o[top_indices(row, 1)[0]] = 1.0;
    }
    out
}

/// Differentiable top-`K'` of scores `[B, M, K]` into `[B, M, K', K]`.
/// Returns the basis and whether the `1 - b̃` clamp engaged.
pub fn soft_top(tape: &mut Tape, z: Var, k_prime: usize, tau: f64) -> Result<(Var, bool)> {
    let shape = tape.shape(z).to_vec();
    let (b, m, k) = (shape[0], shape[1], shape[2]);
    if k_prime > k || k_prime == 0 {
        return Err(TensorError::ShapeMismatch { op: "soft_top", detail: format!("K' = {k_prime} with K = {k}") });
    }
    let mut clamped = false;
    let mut cur = z;
    let mut out: Option<Var> = None;
    for step in 0..k_prime {
        let row = tape.softmax(cur, tau)?;
        out = Some(match out {
            None => row,
            Some(prev) => tape.concat(prev, row)?,
        });
        if step + 1 < k_prime {
            let neg = tape.scale(row, -1.0)?;
            let rest = tape.add_scalar(neg, 1.0)?;
            let fix: Vec<f64> = tape.value(rest).data().iter().map(|&v| (SOFT_TOP_CLAMP - v).max(0.0)).collect();
            if fix.iter().any(|&v| v > 0.0) {
                clamped = true;
            }
            let fix = tape.constant(Tensor::new(&shape, fix)?);
            let rest = tape.add(rest, fix)?;
            let log = tape.log(rest)?;
            cur = tape.add(cur, log)?;
        }
    }
    let basis = tape.reshape(out.expect("k_prime >= 1"), &[b, m, k_prime, k])?;
    Ok((basis, clamped))
}

/// How scores become a basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Selection {
    /// Soft rows at temperature `tau` (training path).
    Soft { tau: f64 },
    /// Discrete top-`K'` / one-hot rows (test path).
    Hard,
}

/// Result of a scheduler forward over a batch.
pub struct Scheduled {
    /// `[B, M, K', K]`.
    pub basis: Var,
    /// Scores of each network, `[B, M, K]`.
    pub scores: Vec<Var>,
    /// Weight handles of each network.
    pub bound: Vec<Bound>,
    pub clamped: bool,
}

impl Scheduled {
    /// Numeric bases of every batch element.
    pub fn bases(&self, tape: &Tape) -> Vec<ScheduleBasis> {
        let shape = tape.shape(self.basis);
        let (m, kp, k) = (shape[1], shape[2], shape[3]);
        let per = m * kp * k;
        tape.value(self.basis)
            .data()
            .chunks(per)
            .map(|d| {
                let mode = if d.iter().all(|&v| v == 0.0 || v == 1.0) { BasisMode::Hard } else { BasisMode::Soft };
                ScheduleBasis { m, k_prime: kp, k, data: d.to_vec(), mode }
            })
            .collect()
    }
}

/// Settings of one scheduler pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleOptions {
    pub k_prime: usize,
    pub selection: Selection,
    pub mode: Mode,
    /// Whether the weights enter the tape as parameters.
    pub trainable: bool,
}

/// Full scheduler forward on the constant input `x` (`[B, M, K·N_R, N_T, 4]`).
pub fn schedule(tape: &mut Tape, params: &SchedulerParams, x: Var, grid: Grid, opts: ScheduleOptions) -> Result<Scheduled> {
    let ScheduleOptions { k_prime, selection, mode, trainable } = opts;
    params.validate()?;
    if k_prime > grid.k {
        return Err(TensorError::ShapeMismatch { op: "schedule", detail: format!("K' = {k_prime} > K = {}", grid.k) });
    }
    let (b, m, k) = (grid.batch, grid.m, grid.k);
    match params.variant {
        Variant::Ngnn => {
            let net = &params.nets[0];
            let mut bound = net.bind(tape, trainable);
            let z = network_scores(tape, net, &mut bound, x, grid, mode)?;
            let (basis, clamped) = match selection {
                Selection::Soft { tau } => soft_top(tape, z, k_prime, tau)?,
                Selection::Hard => {
                    let zs = tape.value(z).data().to_vec();
                    let data: Vec<f64> = zs.chunks(m * k).flat_map(|s| hard_top(s, m, k, k_prime).data).collect();
                    (tape.constant(Tensor::new(&[b, m, k_prime, k], data)?), false)
                }
            };
            Ok(Scheduled { basis, scores: vec![z], bound: vec![bound], clamped })
        }
        Variant::Sgnn => {
            let mut picked: Option<Var> = None;
            let mut rows: Option<Var> = None;
            let mut scores = Vec::new();
            let mut bounds = Vec::new();
            let spread = [b, m, k, grid.n_r * grid.n_t, 1];
            for net in params.nets.iter().take(k_prime) {
                let extra = match picked {
                    None => tape.constant(Tensor::zeros(&grid.shape(1))),
                    Some(p) => {
                        let p = tape.reshape(p, &[b, m, k, 1, 1])?;
                        let p = tape.broadcast(p, &spread)?;
                        tape.reshape(p, &grid.shape(1))?
                    }
                };
                let input = tape.concat(x, extra)?;
                let mut bound = net.bind(tape, trainable);
                let z = network_scores(tape, net, &mut bound, input, grid, mode)?;
                let row = match selection {
                    Selection::Soft { tau } => tape.softmax(z, tau)?,
                    Selection::Hard => {
                        let onehot = onehot_rows(tape.value(z).data(), k);
                        tape.constant(Tensor::new(&[b, m, k], onehot)?)
                    }
                };
                picked = Some(match picked {
                    None => row,
                    Some(p) => tape.add(p, row)?,
                });
                rows = Some(match rows {
                    None => row,
                    Some(r) => tape.concat(r, row)?,
                });
                scores.push(z);
                bounds.push(bound);
            }
            if scores.len() != k_prime {
                return Err(TensorError::ShapeMismatch {
                    op: "schedule",
                    detail: format!("SGNN has {} sub-networks for K' = {k_prime}", params.nets.len()),
                });
            }
            let basis = tape.reshape(rows.expect("k_prime >= 1"), &[b, m, k_prime, k])?;
            Ok(Scheduled { basis, scores, bound: bounds, clamped: false })
        }
    }
}

/// Scores of the first (or only) network for numeric inspection, `B × M × K`.
pub fn scores(params: &SchedulerParams, samples: &[&ChannelTensor]) -> Result<Vec<f64>> {
    let (x, grid) = scheduler_input(samples)?;
    let mut tape = Tape::new();
    let x = tape.constant(x);
    let x = if params.variant == Variant::Sgnn {
        let zeros = tape.constant(Tensor::zeros(&grid.shape(1)));
        tape.concat(x, zeros)?
    } else {
        x
    };
    let net = &params.nets[0];
    let mut bound = net.bind(&mut tape, false);
    let z = network_scores(&mut tape, net, &mut bound, x, grid, Mode::Eval)?;
    Ok(tape.value(z).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    #[test]
    fn hard_top_examples() {
        let b = hard_top(&[0.3, 0.9, 0.1, 0.5], 1, 4, 2);
        assert_eq!(b.row(0, 0), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(b.row(0, 1), &[0.0, 0.0, 0.0, 1.0]);
        let t = hard_top(&[0.5, 0.5], 1, 2, 2);
        assert_eq!(t.indices(), vec![vec![0, 1]]);
        let full = hard_top(&[0.2, 0.7, -1.0], 1, 3, 3);
        assert_eq!(full.indices(), vec![vec![1, 0, 2]]);
    }

    fn soft(z: &[f64], k_prime: usize, tau: f64) -> Vec<f64> {
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::new(&[1, 1, z.len()], z.to_vec()).unwrap());
        let (b, _) = soft_top(&mut tape, zv, k_prime, tau).unwrap();
        tape.value(b).data().to_vec()
    }

    #[test]
    fn soft_top_two_step_hand_values() {
        let b = soft(&[1.0, 0.0], 2, 1.0);
        let e = std::f64::consts::E;
        assert!((b[0] - e / (e + 1.0)).abs() < 1e-15 && (b[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        // z2 = [1 + ln(0.2689), ln(0.7311)] has equal entries
        assert!((b[2] - 0.5).abs() < 1e-12 && (b[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn soft_top_approaches_hard_top() {
        let z = [0.31, -0.2, 0.95, 0.4, 0.05];
        let b = soft(&z, 3, 1e-4);
        let h = hard_top(&z, 1, 5, 3);
        let d = b.iter().zip(&h.data).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn soft_top_gradient() {
        let r = grad_check(
            |tape: &mut Tape, v: &[Var]| -> Result<Var> {
                let (b, _) = soft_top(tape, v[0], 2, 0.7)?;
                let w = tape.constant(Tensor::new(&[1, 1, 2, 3], vec![0.3, -1.0, 2.0, 0.5, 0.1, -0.7]).unwrap());
                let p = tape.mul(b, w)?;
                let s = tape.sum_axes(p, &[3, 2])?;
                tape.reshape(s, &[1])
            },
            &[Tensor::new(&[1, 1, 3], vec![0.2, -0.4, 0.9]).unwrap()],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }

    #[test]
    fn soft_top_clamp_flags_saturation() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::new(&[1, 1, 2], vec![0.0, 100.0]).unwrap());
        let (b, clamped) = soft_top(&mut tape, z, 2, 1e-3).unwrap();
        assert!(clamped);
        assert!(tape.value(b).is_finite());
    }
}
