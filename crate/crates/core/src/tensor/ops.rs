// Raw kernels on flat row-major buffers. Reductions always run in ascending
// index order; parallel kernels split only over independent outputs, so the
// result is bit-identical for any thread count.

use rayon::prelude::*;

/// Work (multiply-adds) below which the matmul kernels stay sequential.
const PAR_THRESHOLD: usize = 1 << 15;

/// `(outer, n, inner)` view of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn sum_axis(data: &[f64], outer: usize, n: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for j in 0..n {
            let src = &data[(o * n + j) * inner..(o * n + j + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

/// Repeats `data` along `axis` (which has size 1 in the source) `n` times.
pub(crate) fn repeat_axis(data: &[f64], outer: usize, n: usize, inner: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        let src = &data[o * inner..(o + 1) * inner];
        for _ in 0..n {
            out.extend_from_slice(src);
        }
    }
    out
}

/// Expands size-1 axes of `src_shape` to `dst_shape` (same rank).
pub(crate) fn broadcast(data: &[f64], src_shape: &[usize], dst_shape: &[usize]) -> Vec<f64> {
    let mut cur = data.to_vec();
    let mut shape = src_shape.to_vec();
    for axis in 0..dst_shape.len() {
        if shape[axis] != dst_shape[axis] {
            let (outer, _, inner) = split_axis(&shape, axis);
            cur = repeat_axis(&cur, outer, dst_shape[axis], inner);
            shape[axis] = dst_shape[axis];
        }
    }
    cur
}

/// Adjoint of [`broadcast`]: sums `grad` (in `dst_shape`) back onto `src_shape`.
pub(crate) fn unbroadcast(grad: &[f64], src_shape: &[usize], dst_shape: &[usize]) -> Vec<f64> {
    let mut cur = grad.to_vec();
    let mut shape = dst_shape.to_vec();
    for axis in (0..dst_shape.len()).rev() {
        if src_shape[axis] != shape[axis] {
            let (outer, n, inner) = split_axis(&shape, axis);
            cur = sum_axis(&cur, outer, n, inner);
            shape[axis] = 1;
        }
    }
    cur
}

/// `out[p, o] = sum_i x[p, i] * w[o, i]`.
pub(crate) fn matmul_rows(x: &[f64], w: &[f64], rows: usize, cin: usize, cout: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cout];
    let kernel = |(p, dst): (usize, &mut [f64])| {
        let xr = &x[p * cin..(p + 1) * cin];
        for (o, d) in dst.iter_mut().enumerate() {
            let wr = &w[o * cin..(o + 1) * cin];
            *d = dot(xr, wr);
        }
    };
    if rows * cin * cout >= PAR_THRESHOLD {
        out.par_chunks_mut(cout).enumerate().for_each(kernel);
    } else {
        out.chunks_mut(cout).enumerate().for_each(kernel);
    }
    out
}

/// `dx[p, i] = sum_o dy[p, o] * w[o, i]`.
pub(crate) fn matmul_grad_input(dy: &[f64], w: &[f64], rows: usize, cin: usize, cout: usize) -> Vec<f64> {
    let mut dx = vec![0.0; rows * cin];
    let kernel = |(p, dst): (usize, &mut [f64])| {
        let g = &dy[p * cout..(p + 1) * cout];
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let wr = &w[o * cin..(o + 1) * cin];
            for (d, wv) in dst.iter_mut().zip(wr) {
                *d += go * wv;
            }
        }
    };
    if rows * cin * cout >= PAR_THRESHOLD {
        dx.par_chunks_mut(cin).enumerate().for_each(kernel);
    } else {
        dx.chunks_mut(cin).enumerate().for_each(kernel);
    }
    dx
}

/// `dw[o, i] = sum_p dy[p, o] * x[p, i]`.
pub(crate) fn matmul_grad_weight(dy: &[f64], x: &[f64], rows: usize, cin: usize, cout: usize) -> Vec<f64> {
    let mut dw = vec![0.0; cout * cin];
    let kernel = |(o, dst): (usize, &mut [f64])| {
        for p in 0..rows {
            let go = dy[p * cout + o];
            if go == 0.0 {
                continue;
            }
            let xr = &x[p * cin..(p + 1) * cin];
            for (d, xv) in dst.iter_mut().zip(xr) {
                *d += go * xv;
            }
        }
    };
    if rows * cin * cout >= PAR_THRESHOLD {
        dw.par_chunks_mut(cin).enumerate().for_each(kernel);
    } else {
        dw.chunks_mut(cin).enumerate().for_each(kernel);
    }
    dw
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Softmax over contiguous rows of length `n` at temperature `tau`.
pub(crate) fn softmax_rows(z: &[f64], n: usize, tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    for (src, dst) in z.chunks(n).zip(out.chunks_mut(n)) {
        let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, s) in dst.iter_mut().zip(src) {
            *d = ((s - max) / tau).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

pub(crate) fn softmax_rows_grad(p: &[f64], g: &[f64], n: usize, tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    for ((pr, gr), dst) in p.chunks(n).zip(g.chunks(n)).zip(out.chunks_mut(n)) {
        let inner: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, pv), gv) in dst.iter_mut().zip(pr).zip(gr) {
            *d = pv * (gv - inner) / tau;
        }
    }
    out
}

/// Per-channel mean and population variance over all leading positions.
pub(crate) fn channel_stats(x: &[f64], channels: usize) -> (Vec<f64>, Vec<f64>) {
    let positions = x.len() / channels;
    let mut mean = vec![0.0; channels];
    for row in x.chunks(channels) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= positions as f64;
    }
    let mut var = vec![0.0; channels];
    for row in x.chunks(channels) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in &mut var {
        *s /= positions as f64;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_then_unbroadcast_counts_copies() {
        let src = [1.0, 2.0];
        let b = broadcast(&src, &[2, 1], &[2, 3]);
        assert_eq!(b, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let back = unbroadcast(&b, &[2, 1], &[2, 3]);
        assert_eq!(back, vec![3.0, 6.0]);
    }

    #[test]
    fn matmul_kernels_agree_with_naive_loops() {
        let (rows, cin, cout) = (3, 4, 2);
        let x: Vec<f64> = (0..rows * cin).map(|v| v as f64 * 0.5 - 1.0).collect();
        let w: Vec<f64> = (0..cout * cin).map(|v| (v as f64).sin()).collect();
        let out = matmul_rows(&x, &w, rows, cin, cout);
        for p in 0..rows {
            for o in 0..cout {
                let want: f64 = (0..cin).map(|i| x[p * cin + i] * w[o * cin + i]).sum();
                assert!((out[p * cout + o] - want).abs() < 1e-12);
            }
        }
    }
}
