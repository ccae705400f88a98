//! Checks the tape's gradient of a small expression against central
//! finite differences.

use wbgnn::tensor::{grad_check, Tape, Tensor, TensorError, Var};

fn main() {
    // loss = Σ tanh(x · wᵀ)² over a [2, 3] input and a [2, 3] weight
    let x = Tensor::new(&[2, 3], vec![0.3, -1.2, 0.8, 0.1, 0.5, -0.4]).unwrap();
    let w = Tensor::new(&[2, 3], vec![0.7, 0.2, -0.5, -0.3, 0.9, 0.4]).unwrap();
    let report = grad_check(
        |tape: &mut Tape, v: &[Var]| -> Result<Var, TensorError> {
            let y = tape.matmul(v[0], v[1])?;
            let t = tape.tanh(y)?;
            let s = tape.square(t)?;
            let s = tape.sum_axes(s, &[1, 0])?;
            tape.reshape(s, &[1])
        },
        &[x, w],
        1e-6,
    )
    .unwrap();
    println!("{} coordinates, max relative error {:.2e} at {:?}", report.coordinates, report.max_rel_error, report.worst);
}
