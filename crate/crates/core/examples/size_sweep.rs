//! Train once at the desk size, then evaluate without retraining as the
//! number of RBs grows.

use wbgnn::channel::{generate_dataset, ScenarioConfig};
use wbgnn::eval::{sweep, Baseline, Problem, SweepAxis};
use wbgnn::train::{train_all, TrainConfig};

fn main() {
    let cfg = ScenarioConfig::default();
    let tc = TrainConfig { epochs_pretrain: 3, epochs_sched: 2, epochs_joint: 2, ..TrainConfig::default() };
    let data = generate_dataset(&cfg, 0, 500);
    let t = train_all(&tc, &Problem::from_config(&cfg), cfg.n_rf, &data).unwrap();
    for axis in [SweepAxis::M, SweepAxis::K] {
        let values: &[usize] = if axis == SweepAxis::M { &[1, 2, 4, 8] } else { &[4, 6, 8, 12] };
        let report = sweep(t.scheduler.as_ref(), &t.precoder, &cfg, axis, values, 50, 1 << 40, &[Baseline::GreedyZf], true, false)
            .unwrap();
        for row in &report.rows {
            println!("{:>5}: SE {:.3}, vs greedy + hybrid ZF {:.3}", row.label, row.se, row.ratio(Baseline::GreedyZf).unwrap());
        }
    }
}
