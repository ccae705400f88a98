//! Precoder network: an equivariant update whose other-user term is
//! weighted by learned pairwise attention, followed by output heads that
//! turn the last layer into a feasible hybrid precoder and combiner.

use crate::gnn::{activate, aggregation_terms, check_widths, combine, Bound, Grid, Mode, Network};
use crate::channel::ChannelTensor;
use crate::system::tape::{
    cbroadcast, channel_tensors, effective_precoders, solutions_from_tape, ComplexVar,
    SolutionVars,
};
use crate::system::HybridSolution;
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

/// Matrices per precoder layer (`Q_1..Q_7`).
pub const PRECODER_WEIGHTS: usize = 7;
/// Modulus below which a projection input is nudged along the real axis.
pub const PROJECTION_FLOOR: f64 = 1e-12;
/// Raw baseband power below which the normalization is treated as singular.
pub const POWER_FLOOR: f64 = 1e-24;

#[derive(Clone, Debug, PartialEq)]
pub struct PrecoderParams {
    pub net: Network,
    pub n_rf: usize,
}

impl PrecoderParams {
    /// Input width 2, output width `4·N_RF + 2`, `hidden` in between.
    pub fn new(hidden: &[usize], n_rf: usize, seed: u64) -> Self {
        let mut widths = vec![2];
        widths.extend_from_slice(hidden);
        widths.push(4 * n_rf + 2);
        Self { net: Network::new(seed, &widths, PRECODER_WEIGHTS), n_rf }
    }

    pub fn validate(&self) -> Result<()> {
        check_widths(&self.net, 2, 4 * self.n_rf + 2, PRECODER_WEIGHTS)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecoderOptions {
    /// `false` forces every attention coefficient to 1 (the linear ablation).
    pub attention: bool,
    pub mode: Mode,
}

impl Default for PrecoderOptions {
    fn default() -> Self {
        Self { attention: true, mode: Mode::Eval }
    }
}

/// Mean over each user's antennas, `[B·M, K', 1, N_T, C]`.
fn antenna_mean(tape: &mut Tape, y: Var, grid: Grid) -> Result<Var> {
    let c = *tape.shape(y).last().unwrap();
    let g = tape.reshape(y, &[grid.batch * grid.m, grid.k, grid.n_r, grid.n_t, c])?;
    tape.mean(g, 2)
}

/// `α_{m,t→k'} = tanh(mean_n (Q_6 ȳ_t) ⊙ (Q_7 ȳ_{k'}))` as `[B·M, K'(t), K'(k'), 1, D']`.
pub fn attention_coeffs(tape: &mut Tape, y: Var, grid: Grid, q6: Var, q7: Var) -> Result<Var> {
    let ybar = antenna_mean(tape, y, grid)?;
    let a6 = tape.matmul(ybar, q6)?;
    let a7 = tape.matmul(ybar, q7)?;
    let d = *tape.shape(a6).last().unwrap();
    let (bm, k, n_t) = (grid.batch * grid.m, grid.k, grid.n_t);
    let pair = [bm, k, k, n_t, d];
    let a6 = tape.reshape(a6, &[bm, k, 1, n_t, d])?;
    let a6 = tape.broadcast(a6, &pair)?;
    let a7 = tape.reshape(a7, &[bm, 1, k, n_t, d])?;
    let a7 = tape.broadcast(a7, &pair)?;
    let prod = tape.mul(a6, a7)?;
    let mean = tape.mean(prod, 3)?;
    tape.tanh(mean)
}

/// `(1/K') Σ_{t≠k'} α_{t→k'} ⊙ Q_3 ȳ_t`, broadcast over the user's antennas.
fn attention_term(tape: &mut Tape, y: Var, grid: Grid, q3: Var, alpha: Var) -> Result<Var> {
    let ybar = antenna_mean(tape, y, grid)?;
    let u = tape.matmul(ybar, q3)?;
    let d = *tape.shape(u).last().unwrap();
    let (bm, k, n_t) = (grid.batch * grid.m, grid.k, grid.n_t);
    let pair = [bm, k, k, n_t, d];
    let u = tape.reshape(u, &[bm, k, 1, n_t, d])?;
    let u = tape.broadcast(u, &pair)?;
    let a = tape.broadcast(alpha, &pair)?;
    let mut mask = vec![1.0; bm * k * k];
    for (i, v) in mask.iter_mut().enumerate() {
        if (i / k) % k == i % k {
            *v = 0.0;
        }
    }
    let mask = tape.constant(Tensor::new(&[bm, k, k, 1, 1], mask)?);
    let mask = tape.broadcast(mask, &pair)?;
    let w = tape.mul(a, mask)?;
    let t = tape.mul(u, w)?;
    let t = tape.sum(t, 1)?;
    let t = tape.scale(t, 1.0 / k as f64)?;
    let t = tape.reshape(t, &[bm, k, 1, n_t, d])?;
    let t = tape.broadcast(t, &[bm, k, grid.n_r, n_t, d])?;
    tape.reshape(t, &grid.shape(d))
}

/// Pre-activation of one layer.
pub fn layer_update(tape: &mut Tape, y: Var, grid: Grid, q: &[Var], attention: bool) -> Result<Var> {
    let [own, rb, users, ant, bs] = aggregation_terms(tape, y, grid)?;
    if !attention {
        return combine(tape, &[own, rb, users, ant, bs], &q[..5]);
    }
    let linear = combine(tape, &[own, rb, ant, bs], &[q[0], q[1], q[3], q[4]])?;
    let alpha = attention_coeffs(tape, y, grid, q[5], q[6])?;
    let user = attention_term(tape, y, grid, q[2], alpha)?;
    tape.add(linear, user)
}

/// Selects channels `[from, from + n)` of the last axis.
fn slots(tape: &mut Tape, y: Var, from: usize, n: usize) -> Result<Var> {
    let c = *tape.shape(y).last().unwrap();
    let mut sel = vec![0.0; n * c];
    for i in 0..n {
        sel[i * c + from + i] = 1.0;
    }
    let sel = tape.constant(Tensor::new(&[n, c], sel)?);
    tape.matmul(y, sel)
}

/// `x / |x|` with the singularity guard; returns whether it engaged.
fn unit_modulus(tape: &mut Tape, x: ComplexVar) -> Result<(ComplexVar, bool)> {
    let (re, im) = (tape.value(x.re).data(), tape.value(x.im).data());
    let fix: Vec<f64> = re
        .iter()
        .zip(im)
        .map(|(a, b)| if (a * a + b * b).sqrt() < PROJECTION_FLOOR { PROJECTION_FLOOR } else { 0.0 })
        .collect();
    let singular = fix.iter().any(|&v| v > 0.0);
    let shape = tape.shape(x.re).to_vec();
    let re = if singular {
        let f = tape.constant(Tensor::new(&shape, fix)?);
        tape.add(x.re, f)?
    } else {
        x.re
    };
    let r2 = tape.square(re)?;
    let i2 = tape.square(x.im)?;
    let m2 = tape.add(r2, i2)?;
    let modulus = tape.sqrt(m2)?;
    let inv = tape.reciprocal(modulus)?;
    Ok((ComplexVar { re: tape.mul(re, inv)?, im: tape.mul(x.im, inv)? }, singular))
}

/// Output of a precoder pass.
pub struct Precoded {
    pub solution: SolutionVars,
    pub bound: Bound,
    /// A modulus projection or the power normalization hit a zero.
    pub singular: bool,
}

/// Turns the last layer `[B, M, K'·N_R, N_T, 4·N_RF + 2]` into a feasible solution.
pub fn output_heads(tape: &mut Tape, y: Var, grid: Grid, n_rf: usize, p_tot: f64) -> Result<(SolutionVars, bool)> {
    let c = *tape.shape(y).last().unwrap();
    if c != 4 * n_rf + 2 {
        return Err(TensorError::ShapeMismatch { op: "heads", detail: format!("{c} channels for N_RF = {n_rf}") });
    }
    let (b, m, k, n_r, n_t) = (grid.batch, grid.m, grid.k, grid.n_r, grid.n_t);

    // analog precoder: mean over (m, k', r)
    let mut rf = Vec::with_capacity(2);
    for i in 0..2 {
        let s = slots(tape, y, i * n_rf, n_rf)?;
        let s = tape.mean_axes(s, &[1, 2])?;
        rf.push(tape.reshape(s, &[b, 1, 1, n_t, n_rf])?);
    }
    let (w_rf, sing_rf) = unit_modulus(tape, ComplexVar { re: rf[0], im: rf[1] })?;

    // baseband precoder: mean over (r, n)
    let mut bb = Vec::with_capacity(2);
    for i in 0..2 {
        let s = slots(tape, y, (2 + i) * n_rf, n_rf)?;
        let s = tape.mean(s, 3)?;
        let s = tape.reshape(s, &[b, m, k, n_r, n_rf])?;
        let s = tape.mean(s, 3)?;
        bb.push(tape.reshape(s, &[b, m, k, 1, n_rf])?);
    }
    let mut raw = ComplexVar { re: bb[0], im: bb[1] };
    let power = |tape: &mut Tape, w: ComplexVar| -> Result<Var> {
        let p = effective_precoders(tape, w_rf, w)?;
        let r2 = tape.square(p.re)?;
        let i2 = tape.square(p.im)?;
        let e = tape.add(r2, i2)?;
        tape.sum_axes(e, &[1, 2, 3])
    };
    let mut total = power(tape, raw)?;
    let dead: Vec<bool> = tape.value(total).data().iter().map(|&v| v < POWER_FLOOR).collect();
    let sing_bb = dead.iter().any(|&d| d);
    if sing_bb {
        let per = m * k * n_rf;
        let fix: Vec<f64> =
            dead.iter().flat_map(|&d| std::iter::repeat_n(if d { PROJECTION_FLOOR } else { 0.0 }, per)).collect();
        let fix = tape.constant(Tensor::new(&[b, m, k, 1, n_rf], fix)?);
        raw.re = tape.add(raw.re, fix)?;
        total = power(tape, raw)?;
    }
    let inv = tape.reciprocal(total)?;
    let scale = tape.sqrt(inv)?;
    let scale = tape.scale(scale, p_tot.sqrt())?;
    let w_bb = cbroadcast(tape, ComplexVar { re: scale, im: scale }, &[b, m, k, 1, n_rf])?;
    let w_bb = ComplexVar { re: tape.mul(raw.re, w_bb.re)?, im: tape.mul(raw.im, w_bb.im)? };

    // combiner: mean over (m, n)
    let mut vv = Vec::with_capacity(2);
    for i in 0..2 {
        let s = slots(tape, y, 4 * n_rf + i, 1)?;
        let s = tape.mean_axes(s, &[1, 3])?;
        vv.push(tape.reshape(s, &[b, 1, k, n_r, 1])?);
    }
    let (v_rf, sing_v) = unit_modulus(tape, ComplexVar { re: vv[0], im: vv[1] })?;
    Ok((SolutionVars { w_rf, w_bb, v_rf }, sing_rf || sing_bb || sing_v))
}

/// `[Re H', Im H']` divided by the per-sample RMS of `H'`, on the tape.
pub fn precoder_input(tape: &mut Tape, h: ComplexVar) -> Result<Var> {
    let shape = tape.shape(h.re).to_vec();
    let r2 = tape.square(h.re)?;
    let i2 = tape.square(h.im)?;
    let e = tape.add(r2, i2)?;
    let ms = tape.mean_axes(e, &[1, 2, 3])?;
    let ms = tape.add_scalar(ms, 1e-200)?;
    let rms = tape.sqrt(ms)?;
    let inv = tape.reciprocal(rms)?;
    let inv = tape.broadcast(inv, &shape)?;
    let re = tape.mul(h.re, inv)?;
    let im = tape.mul(h.im, inv)?;
    tape.concat(re, im)
}

/// Full precoder pass on scheduled channels `[B, M, K'·N_R, N_T, 1]`.
pub fn precode(
    tape: &mut Tape,
    params: &PrecoderParams,
    h: ComplexVar,
    n_r: usize,
    p_tot: f64,
    trainable: bool,
    opts: PrecoderOptions,
) -> Result<Precoded> {
    params.validate()?;
    let s = tape.shape(h.re).to_vec();
    if s.len() != 5 || s[2] % n_r != 0 {
        return Err(TensorError::ShapeMismatch { op: "precoder", detail: format!("channel {s:?} with N_R = {n_r}") });
    }
    let grid = Grid { batch: s[0], m: s[1], k: s[2] / n_r, n_r, n_t: s[3] };
    let mut bound = params.net.bind(tape, trainable);
    let mut y = precoder_input(tape, h)?;
    for l in 0..params.net.layers.len() {
        let pre = layer_update(tape, y, grid, &bound.layers[l], opts.attention)?;
        y = activate(tape, &params.net, &mut bound, l, pre, opts.mode)?;
    }
    let (solution, singular) = output_heads(tape, y, grid, params.n_rf, p_tot)?;
    Ok(Precoded { solution, bound, singular })
}

/// Eval-mode precoders for already scheduled channels (`K = K'`).
pub fn precode_samples(
    params: &PrecoderParams,
    scheduled: &[&ChannelTensor],
    p_tot: f64,
    attention: bool,
) -> Result<(Vec<HybridSolution>, bool)> {
    let n_r = scheduled.first().map_or(1, |h| h.n_r);
    let mut tape = Tape::new();
    let (re, im) = channel_tensors(scheduled, &vec![1.0; scheduled.len()])?;
    let h = ComplexVar { re: tape.constant(re), im: tape.constant(im) };
    let out = precode(&mut tape, params, h, n_r, p_tot, false, PrecoderOptions { attention, mode: Mode::Eval })?;
    Ok((solutions_from_tape(&tape, &out.solution), out.singular))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::tape::{rate_loss, scheduled_rate};
    use crate::system::{Axis, Permutation, Permute};
    use crate::system::{check_constraints, sum_rate};
    use crate::tensor::grad_check;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_channel(seed: u64, m: usize, k: usize, n_r: usize, n_t: usize) -> ChannelTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ChannelTensor::from_fn(m, k, n_r, n_t, |_, _, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn close(a: &HybridSolution, b: &HybridSolution) -> f64 {
        let d = |x: &[Complex64], y: &[Complex64]| x.iter().zip(y).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        d(&a.w_rf, &b.w_rf).max(d(&a.w_bb, &b.w_bb)).max(d(&a.v_rf, &b.v_rf))
    }

    #[test]
    fn forward_is_feasible_and_equivariant() {
        let (m, kp, n_r, n_t, n_rf) = (3, 3, 2, 4, 2);
        let h = random_channel(5, m, kp, n_r, n_t);
        for attention in [true, false] {
            let params = PrecoderParams::new(&[8, 8], n_rf, 17);
            let (base, singular) = precode_samples(&params, &[&h], 3.0, attention).unwrap();
            assert!(!singular);
            assert!(check_constraints(&base[0], 3.0).max() < 1e-10);
            let cases = [
                (Axis::Rb, Permutation::new(vec![2, 0, 1]).unwrap()),
                (Axis::UserGroup, Permutation::new(vec![1, 2, 0]).unwrap()),
                (Axis::Antenna { group: None }, Permutation::swap(n_r, 0, 1)),
                (Axis::Antenna { group: Some(1) }, Permutation::swap(n_r, 0, 1)),
                (Axis::BsAntenna, Permutation::new(vec![3, 1, 0, 2]).unwrap()),
            ];
            for (axis, p) in cases {
                let hp = h.permute(axis, &p).unwrap();
                let (out, _) = precode_samples(&params, &[&hp], 3.0, attention).unwrap();
                let want = base[0].permute(axis, &p).unwrap();
                assert!(close(&out[0], &want) < 1e-10, "{axis:?} attention={attention}");
                let r0 = sum_rate(&h, None, &base[0], 0.1).unwrap().sum_rate;
                let r1 = sum_rate(&hp, None, &out[0], 0.1).unwrap().sum_rate;
                assert!((r0 - r1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rate_gradient_matches_finite_differences() {
        let (m, kp, n_r, n_t, n_rf) = (2, 2, 1, 3, 2);
        let h = random_channel(8, m, kp, n_r, n_t);
        let params = PrecoderParams::new(&[4], n_rf, 3);
        let (re, im) = channel_tensors(&[&h], &[1.0]).unwrap();
        let point: Vec<Tensor> = params.net.tensors().cloned().collect();
        for attention in [true, false] {
            let report = grad_check(
                |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
                    let hv = ComplexVar { re: tape.constant(re.clone()), im: tape.constant(im.clone()) };
                    let mut p = params.clone();
                    for (w, v) in p.net.tensors_mut().zip(vars) {
                        *w = tape.value(*v).clone();
                    }
                    let grid = Grid { batch: 1, m, k: kp, n_r, n_t };
                    let mut y = precoder_input(tape, hv)?;
                    let per = PRECODER_WEIGHTS;
                    for l in 0..p.net.layers.len() {
                        let q = &vars[l * per..(l + 1) * per];
                        y = layer_update(tape, y, grid, q, attention)?;
                        if l + 1 < p.net.layers.len() {
                            y = tape.tanh(y)?;
                        }
                    }
                    let (sol, _) = output_heads(tape, y, grid, n_rf, 2.0)?;
                    let rate = scheduled_rate(tape, hv, &sol, n_r, &[4.0])?;
                    rate_loss(tape, rate)
                },
                &point,
                1e-6,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-5, "{report:?}");
        }
    }

    #[test]
    fn attention_hand_value() {
        // D = 1, N_R = 1, N_T = 2, two users with all-ones rows, Q6 = Q7 = 1
        let grid = Grid { batch: 1, m: 1, k: 2, n_r: 1, n_t: 2 };
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::full(&grid.shape(1), 1.0));
        let q = tape.constant(Tensor::new(&[1, 1], vec![1.0]).unwrap());
        let a = attention_coeffs(&mut tape, y, grid, q, q).unwrap();
        for &v in tape.value(a).data() {
            assert!((v - 1f64.tanh()).abs() < 1e-15);
            assert!((v - 0.7616).abs() < 5e-5);
        }

        let zero = tape.constant(Tensor::zeros(&grid.shape(1)));
        let a = attention_coeffs(&mut tape, zero, grid, q, q).unwrap();
        assert!(tape.value(a).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_user_has_no_interaction_term() {
        let grid = Grid { batch: 1, m: 2, k: 1, n_r: 1, n_t: 3 };
        let params = PrecoderParams::new(&[4], 1, 9);
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::new(&grid.shape(2), (0..12).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap());
        let q: Vec<Var> = params.net.layers[0].weights.iter().map(|w| tape.constant(w.clone())).collect();
        let with = layer_update(&mut tape, y, grid, &q, true).unwrap();
        let mut q_no3 = q.clone();
        q_no3[2] = tape.constant(Tensor::zeros(params.net.layers[0].weights[2].shape()));
        let without = layer_update(&mut tape, y, grid, &q_no3, false).unwrap();
        assert_eq!(tape.value(with), tape.value(without));
    }

    #[test]
    fn constant_last_layer_gives_diagonal_phases() {
        let grid = Grid { batch: 1, m: 2, k: 2, n_r: 2, n_t: 2 };
        let n_rf = 2;
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::full(&grid.shape(4 * n_rf + 2), 0.3));
        let (sol, singular) = output_heads(&mut tape, y, grid, n_rf, 5.0).unwrap();
        assert!(!singular);
        let s = &solutions_from_tape(&tape, &sol)[0];
        let e = std::f64::consts::FRAC_1_SQRT_2;
        for c in s.w_rf.iter().chain(&s.v_rf) {
            assert!((c.re - e).abs() < 1e-15 && (c.im - e).abs() < 1e-15);
        }
        let r = check_constraints(s, 5.0);
        assert!(r.power_residual < 1e-12, "{r:?}");
    }

    #[test]
    fn baseband_head_is_scale_invariant() {
        let grid = Grid { batch: 1, m: 2, k: 2, n_r: 1, n_t: 3 };
        let n_rf = 2;
        let c = 4 * n_rf + 2;
        let base: Vec<f64> = (0..grid.shape(c).iter().product()).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let mut scaled = base.clone();
        for (i, v) in scaled.iter_mut().enumerate() {
            if (2 * n_rf..4 * n_rf).contains(&(i % c)) {
                *v *= 10.0;
            }
        }
        let run = |data: Vec<f64>| {
            let mut tape = Tape::new();
            let y = tape.constant(Tensor::new(&grid.shape(c), data).unwrap());
            let (sol, _) = output_heads(&mut tape, y, grid, n_rf, 2.0).unwrap();
            solutions_from_tape(&tape, &sol).remove(0)
        };
        let (a, b) = (run(base), run(scaled));
        assert_eq!(a.w_rf, b.w_rf);
        assert_eq!(a.v_rf, b.v_rf);
        for (x, y) in a.w_bb.iter().zip(&b.w_bb) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn singular_projection_is_flagged() {
        let grid = Grid { batch: 1, m: 1, k: 1, n_r: 1, n_t: 2 };
        let mut tape = Tape::new();
        let y = tape.constant(Tensor::zeros(&grid.shape(6)));
        let (sol, singular) = output_heads(&mut tape, y, grid, 1, 1.0).unwrap();
        assert!(singular);
        let s = &solutions_from_tape(&tape, &sol)[0];
        assert!(check_constraints(s, 1.0).max() < 1e-9);
    }
}
