use crate::channel::ChannelTensor;

/// Channel strength and averaged correlation features, standardized per RB.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensors {
    pub m: usize,
    pub k: usize,
    pub n_r: usize,
    /// `M × K`.
    pub f_s: Vec<f64>,
    /// `M × K·N_R`.
    pub f_o: Vec<f64>,
    /// Set when a zero-norm channel row made a correlation undefined.
    pub degenerate: bool,
}

/// Raw `(F̄_S, F̄_O)` before standardization.
pub fn raw_features(h: &ChannelTensor) -> (Vec<f64>, Vec<f64>, bool) {
    let rows = h.rows();
    let mut f_s = Vec::with_capacity(h.m * h.k);
    let mut f_o = Vec::with_capacity(h.m * rows);
    let mut degenerate = false;
    for m in 0..h.m {
        for k in 0..h.k {
            f_s.push(h.user_norm(m, k));
        }
        let norms: Vec<f64> = (0..rows)
            .map(|i| h.row(m, i / h.n_r, i % h.n_r).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
            .collect();
        for a in 0..rows {
            let ha = h.row(m, a / h.n_r, a % h.n_r);
            let mut total = 0.0;
            for b in 0..rows {
                if norms[a] == 0.0 || norms[b] == 0.0 {
                    degenerate = true;
                    continue;
                }
                let hb = h.row(m, b / h.n_r, b % h.n_r);
                let dot: num_complex::Complex64 = hb.iter().zip(ha).map(|(x, y)| x.conj() * y).sum();
                total += dot.norm() / (norms[a] * norms[b]);
            }
            f_o.push(total / rows as f64);
        }
    }
    (f_s, f_o, degenerate)
}

/// `(x - mean) / std` over each chunk (population std); constant chunks map to 0.
pub fn standardize_groups(values: &mut [f64], group: usize) {
    for chunk in values.chunks_mut(group.max(1)) {
        let n = chunk.len() as f64;
        let mean = chunk.iter().sum::<f64>() / n;
        let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1e-300) || chunk.len() < 2 {
            chunk.iter_mut().for_each(|v| *v = 0.0);
        } else {
            chunk.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
    }
}

pub fn compute_features(h: &ChannelTensor) -> FeatureTensors {
    let (mut f_s, mut f_o, degenerate) = raw_features(h);
    standardize_groups(&mut f_s, h.k);
    standardize_groups(&mut f_o, h.rows());
    FeatureTensors { m: h.m, k: h.k, n_r: h.n_r, f_s, f_o, degenerate }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn strength_of_identity_block() {
        let h = ChannelTensor::from_fn(1, 1, 2, 2, |_, _, r, n| Complex64::new(if r == n { 1.0 } else { 0.0 }, 0.0));
        let (f_s, _, _) = raw_features(&h);
        assert!((f_s[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn orthonormal_pair_correlation_includes_self() {
        let h = ChannelTensor::from_fn(1, 2, 1, 2, |_, k, _, n| Complex64::new(if k == n { 1.0 } else { 0.0 }, 0.0));
        let (_, f_o, flag) = raw_features(&h);
        assert_eq!(f_o, vec![0.5, 0.5]);
        assert!(!flag);
    }

    #[test]
    fn population_standardization() {
        let mut v = vec![1.0, 2.0, 3.0];
        standardize_groups(&mut v, 3);
        let e = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((v[0] + e).abs() < 1e-15 && v[1] == 0.0 && (v[2] - e).abs() < 1e-15);
        assert!((v[2] - 1.2247).abs() < 5e-5);

        let mut single = vec![4.0];
        standardize_groups(&mut single, 1);
        assert_eq!(single, vec![0.0]);
    }

    #[test]
    fn zero_rows_are_flagged() {
        let h = ChannelTensor::from_fn(1, 2, 1, 2, |_, k, _, _| Complex64::new(k as f64, 0.0));
        let f = compute_features(&h);
        assert!(f.degenerate);
        assert!(f.f_o.iter().all(|v| v.is_finite()));
    }
}
