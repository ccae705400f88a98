use super::{Tape, Tensor, TensorError, Var};

/// Outcome of comparing tape gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |autodiff - fd| / max(1, |fd|)` over every coordinate.
    pub max_rel_error: f64,
    /// `(input, flat index)` where the maximum was attained.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Central finite-difference check of `f` at `point`.
///
/// `f` records a scalar on the given tape from the supplied input variables.
/// It is called once with gradient-tracking inputs and twice per coordinate
/// with constant inputs.
pub fn grad_check<F, E>(f: F, point: &[Tensor], eps: f64) -> std::result::Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, E>,
    E: From<TensorError>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(TensorError::InvalidStep(eps).into());
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |inputs: &[Tensor]| -> std::result::Result<f64, E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).data()[0];
        if !v.is_finite() {
            return Err(TensorError::NonFinite { op: "grad_check" }.into());
        }
        Ok(v)
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), coordinates: 0 };
    let mut probe: Vec<Tensor> = point.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).map(|t| t.data().to_vec()).unwrap_or_default();
        for i in 0..point[k].numel() {
            let base = point[k].data()[i];
            probe[k].data_mut()[i] = base + eps;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = base - eps;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = base;
            let fd = (up - down) / (2.0 * eps);
            let ad = analytic.get(i).copied().unwrap_or(0.0);
            let err = (ad - fd).abs() / fd.abs().max(1.0);
            if report.coordinates == 0 || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (k, i);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Result;

    #[test]
    fn tanh_at_point_three() {
        let r = grad_check(
            |t: &mut Tape, v: &[Var]| -> Result<Var> { t.tanh(v[0]) },
            &[Tensor::scalar(0.3)],
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn rejects_out_of_range_step() {
        let r = grad_check(
            |t: &mut Tape, v: &[Var]| -> Result<Var> { t.tanh(v[0]) },
            &[Tensor::scalar(0.3)],
            1e-2,
        );
        assert!(matches!(r, Err(TensorError::InvalidStep(_))));
    }
}
