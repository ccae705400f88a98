//! Two-pair power control: the closed-form threshold rule against a grid.

use wbgnn::baselines::{power_control_2pair, power_control_grid, PowerControlInstance};

fn main() {
    let base = PowerControlInstance { h_t: 1.0, h_i: 1.0, sigma2: 1.0, p_max: 1.0 };
    println!("h_T = h_I = 1: s_h = {:.6}", base.threshold());
    for p_max in [0.5, 1.0, 1.5, 1.7, 2.0, 4.0] {
        let inst = PowerControlInstance { p_max, ..base };
        let (decision, s) = power_control_2pair(&inst).unwrap();
        let grid = power_control_grid(&inst, 201).unwrap();
        println!(
            "P/σ² = {:.2} (s_h = {s:.4}): rule {decision:?} {:?}, grid optimum {grid:?}",
            p_max / inst.sigma2,
            decision.points(p_max)
        );
    }
}
