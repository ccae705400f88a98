//! Tape versions of extraction and the scheduled rate over a batch.
//!
//! Complex quantities travel as separate real and imaginary variables:
//!
//! - channels `[B, M, K·N_R, N_T, 1]`,
//! - soft bases `[B, M, K', K]`,
//! - `W_RF` as `[B, 1, 1, N_T, N_RF]`, `W'_BB` as `[B, M, K', 1, N_RF]`,
//!   `v'_RF` as `[B, 1, K', N_R, 1]`.

use num_complex::Complex64;

use super::HybridSolution;
use crate::channel::ChannelTensor;
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug)]
pub struct ComplexVar {
    pub re: Var,
    pub im: Var,
}

/// Tape handles of a batch of hybrid solutions.
#[derive(Clone, Copy, Debug)]
pub struct SolutionVars {
    pub w_rf: ComplexVar,
    pub w_bb: ComplexVar,
    pub v_rf: ComplexVar,
}

/// Batch of channels as real/imag tensors `[B, M, K·N_R, N_T, 1]`, each
/// sample multiplied by its entry of `scale`.
pub fn channel_tensors(samples: &[&ChannelTensor], scale: &[f64]) -> Result<(Tensor, Tensor)> {
    let first = samples.first().ok_or(TensorError::ShapeMismatch { op: "batch", detail: "empty batch".into() })?;
    let (m, k, n_r, n_t) = first.dims();
    let mut re = Vec::with_capacity(samples.len() * first.data.len());
    let mut im = Vec::with_capacity(re.capacity());
    for (s, &c) in samples.iter().zip(scale) {
        if s.dims() != (m, k, n_r, n_t) {
            return Err(TensorError::ShapeMismatch { op: "batch", detail: "samples differ in dims".into() });
        }
        re.extend(s.data.iter().map(|v| v.re * c));
        im.extend(s.data.iter().map(|v| v.im * c));
    }
    let shape = [samples.len(), m, k * n_r, n_t, 1];
    Ok((Tensor::new(&shape, re)?, Tensor::new(&shape, im)?))
}

/// `H'_m = (B_m ⊗ I_{N_R}) H_m` for both parts; `basis` is `[B, M, K', K]`.
pub fn extract_scheduled(tape: &mut Tape, h: ComplexVar, basis: Var, n_r: usize) -> Result<ComplexVar> {
    let hs = tape.shape(h.re).to_vec();
    let bs = tape.shape(basis).to_vec();
    let (b, m, rows, n_t) = (hs[0], hs[1], hs[2], hs[3]);
    let (kp, k) = (bs[2], bs[3]);
    if bs[0] != b || bs[1] != m || k * n_r != rows {
        return Err(TensorError::ShapeMismatch { op: "extract", detail: format!("channel {hs:?} with basis {bs:?}") });
    }
    let inner = n_r * n_t;
    let full = [b * m, kp, k, inner];
    let w = tape.reshape(basis, &[b * m, kp, k, 1])?;
    let w = tape.broadcast(w, &full)?;
    let mut out = [h.re, h.im];
    for part in out.iter_mut() {
        let x = tape.reshape(*part, &[b * m, 1, k, inner])?;
        let x = tape.broadcast(x, &full)?;
        let y = tape.mul(x, w)?;
        let y = tape.sum(y, 2)?;
        *part = tape.reshape(y, &[b, m, kp * n_r, n_t, 1])?;
    }
    Ok(ComplexVar { re: out[0], im: out[1] })
}

pub(crate) fn cmul(tape: &mut Tape, a: ComplexVar, b: ComplexVar) -> Result<ComplexVar> {
    let rr = tape.mul(a.re, b.re)?;
    let ii = tape.mul(a.im, b.im)?;
    let ri = tape.mul(a.re, b.im)?;
    let ir = tape.mul(a.im, b.re)?;
    Ok(ComplexVar { re: tape.sub(rr, ii)?, im: tape.add(ri, ir)? })
}

pub(crate) fn cbroadcast(tape: &mut Tape, a: ComplexVar, shape: &[usize]) -> Result<ComplexVar> {
    Ok(ComplexVar { re: tape.broadcast(a.re, shape)?, im: tape.broadcast(a.im, shape)? })
}

pub(crate) fn creshape(tape: &mut Tape, a: ComplexVar, shape: &[usize]) -> Result<ComplexVar> {
    Ok(ComplexVar { re: tape.reshape(a.re, shape)?, im: tape.reshape(a.im, shape)? })
}

pub(crate) fn csum(tape: &mut Tape, a: ComplexVar, axis: usize) -> Result<ComplexVar> {
    Ok(ComplexVar { re: tape.sum(a.re, axis)?, im: tape.sum(a.im, axis)? })
}

/// Effective precoders `W_RF w_{m,k'}` as `[B, M, K', N_T, 1]`.
pub fn effective_precoders(tape: &mut Tape, w_rf: ComplexVar, w_bb: ComplexVar) -> Result<ComplexVar> {
    let rf = tape.shape(w_rf.re).to_vec();
    let bb = tape.shape(w_bb.re).to_vec();
    let (b, n_t, n_rf) = (rf[0], rf[3], rf[4]);
    let (m, kp) = (bb[1], bb[2]);
    let prod = [b, m, kp, n_t, n_rf];
    let wrf = cbroadcast(tape, w_rf, &prod)?;
    let wbb = cbroadcast(tape, w_bb, &prod)?;
    let p = cmul(tape, wrf, wbb)?;
    csum(tape, p, 4)
}

/// Per-sample scheduled sum rate `(1/M) Σ_m Σ_{k'} R'_{m,k'}` as `[B, 1, 1, 1, 1]`.
///
/// `inv_noise` is `1 / (N_R σ²)` for each sample, in the units of the
/// channel tensors (`1/(N_R σ² c²)` for channels multiplied by `c`).
pub fn scheduled_rate(tape: &mut Tape, h: ComplexVar, sol: &SolutionVars, n_r: usize, inv_noise: &[f64]) -> Result<Var> {
    let hs = tape.shape(h.re).to_vec();
    let (b, m, rows, n_t) = (hs[0], hs[1], hs[2], hs[3]);
    let kp = rows / n_r;
    if inv_noise.len() != b {
        return Err(TensorError::ShapeMismatch { op: "rate", detail: "one noise level per sample".into() });
    }
    let p = effective_precoders(tape, sol.w_rf, sol.w_bb)?;

    // combined channels conj(v_{k'})ᵀ H'_{m,k'} as [B, M, K', 1, N_T]
    let grid = [b, m, kp, n_r, n_t];
    let hh = creshape(tape, h, &grid)?;
    let v = cbroadcast(tape, sol.v_rf, &grid)?;
    let conj_v = ComplexVar { re: v.re, im: tape.scale(v.im, -1.0)? };
    let g = cmul(tape, conj_v, hh)?;
    let g = csum(tape, g, 3)?;

    // |g_{k'} · p_j|² as [B, M, K', K']
    let pair = [b, m, kp, kp, n_t];
    let g = cbroadcast(tape, g, &pair)?;
    let p = creshape(tape, p, &[b, m, 1, kp, n_t])?;
    let p = cbroadcast(tape, p, &pair)?;
    let gp = cmul(tape, g, p)?;
    let gp = csum(tape, gp, 4)?;
    let re2 = tape.square(gp.re)?;
    let im2 = tape.square(gp.im)?;
    let power = tape.add(re2, im2)?;
    let power = tape.reshape(power, &[b, m, kp, kp])?;
    let noise = Tensor::new(&[b, 1, 1, 1], inv_noise.to_vec())?;
    let noise = tape.constant(noise);
    let noise = tape.broadcast(noise, &[b, m, kp, kp])?;
    let snr = tape.mul(power, noise)?;

    let mut eye = vec![0.0; b * m * kp * kp];
    for (i, v) in eye.iter_mut().enumerate() {
        if (i / kp) % kp == i % kp {
            *v = 1.0;
        }
    }
    let eye = tape.constant(Tensor::new(&[b, m, kp, kp], eye)?);
    let signal = tape.mul(snr, eye)?;
    let total = tape.sum(snr, 3)?;
    let signal = tape.sum(signal, 3)?;
    let interference = tape.sub(total, signal)?;
    let num = tape.add_scalar(total, 1.0)?;
    let den = tape.add_scalar(interference, 1.0)?;
    let ln_num = tape.log(num)?;
    let ln_den = tape.log(den)?;
    let nats = tape.sub(ln_num, ln_den)?;
    let bits = tape.scale(nats, std::f64::consts::LOG2_E)?;
    let per_rb = tape.sum(bits, 2)?;
    let rate = tape.mean(per_rb, 1)?;
    tape.reshape(rate, &[b, 1, 1, 1, 1])
}

/// Batch-mean negative rate.
pub fn rate_loss(tape: &mut Tape, rate: Var) -> Result<Var> {
    let b = tape.shape(rate)[0];
    let flat = tape.reshape(rate, &[b])?;
    let mean = tape.mean(flat, 0)?;
    tape.scale(mean, -1.0)
}

/// Numeric solutions of every batch element from the tape values.
pub fn solutions_from_tape(tape: &Tape, sol: &SolutionVars) -> Vec<HybridSolution> {
    let rf = tape.shape(sol.w_rf.re).to_vec();
    let bb = tape.shape(sol.w_bb.re).to_vec();
    let v = tape.shape(sol.v_rf.re).to_vec();
    let (b, n_t, n_rf) = (rf[0], rf[3], rf[4]);
    let (m, kp, n_r) = (bb[1], bb[2], v[3]);
    let get = |c: ComplexVar| -> Vec<Complex64> {
        tape.value(c.re).data().iter().zip(tape.value(c.im).data()).map(|(&r, &i)| Complex64::new(r, i)).collect()
    };
    let (wrf, wbb, v) = (get(sol.w_rf), get(sol.w_bb), get(sol.v_rf));
    let (a, c, d) = (n_t * n_rf, m * n_rf * kp, kp * n_r);
    (0..b)
        .map(|i| {
            let mut s = HybridSolution::zeros(m, n_t, n_rf, kp, n_r);
            s.w_rf.copy_from_slice(&wrf[i * a..(i + 1) * a]);
            s.v_rf.copy_from_slice(&v[i * d..(i + 1) * d]);
            // tape order (m, k', f) to (m, f, k')
            let src = &wbb[i * c..(i + 1) * c];
            for mi in 0..m {
                for j in 0..kp {
                    for f in 0..n_rf {
                        s.w_bb[(mi * n_rf + f) * kp + j] = src[(mi * kp + j) * n_rf + f];
                    }
                }
            }
            s
        })
        .collect()
}

/// Places numeric solutions on the tape as constants (or parameters).
pub fn solution_leaves(tape: &mut Tape, sols: &[HybridSolution], requires_grad: bool) -> Result<SolutionVars> {
    let s = &sols[0];
    let b = sols.len();
    let mut leaf = |shape: &[usize], values: Vec<Complex64>| -> Result<ComplexVar> {
        let re = values.iter().map(|c| c.re).collect();
        let im = values.iter().map(|c| c.im).collect();
        Ok(ComplexVar {
            re: tape.leaf(Tensor::new(shape, re)?, requires_grad),
            im: tape.leaf(Tensor::new(shape, im)?, requires_grad),
        })
    };
    let bb: Vec<Complex64> = sols
        .iter()
        .flat_map(|x| {
            (0..x.m).flat_map(move |mi| {
                (0..x.k_prime).flat_map(move |j| (0..x.n_rf).map(move |f| x.w_bb_at(mi, f, j)))
            })
        })
        .collect();
    Ok(SolutionVars {
        w_rf: leaf(&[b, 1, 1, s.n_t, s.n_rf], sols.iter().flat_map(|x| x.w_rf.iter().cloned()).collect())?,
        w_bb: leaf(&[b, s.m, s.k_prime, 1, s.n_rf], bb)?,
        v_rf: leaf(&[b, 1, s.k_prime, s.n_r, 1], sols.iter().flat_map(|x| x.v_rf.iter().cloned()).collect())?,
    })
}
