//! Inference FLOPs of the default networks as the problem grows.

use wbgnn::flops::{precoder_params, scheduler_params, Dims};
use wbgnn::train::TrainConfig;

fn main() {
    let tc = TrainConfig::default();
    let sched = tc.new_scheduler(2);
    let prec = tc.new_precoder(2);
    println!("{:>3} {:>3} {:>4} {:>4} {:>14} {:>14}", "M", "K", "N_T", "N_R", "scheduler", "precoder");
    for (m, k, n_t, n_r) in [(2, 6, 4, 1), (4, 6, 4, 1), (8, 6, 4, 1), (2, 12, 4, 1), (2, 6, 8, 1), (2, 6, 4, 2), (16, 24, 16, 2)] {
        let d = Dims::new(m, k, 2, n_t, n_r);
        println!(
            "{m:>3} {k:>3} {n_t:>4} {n_r:>4} {:>14} {:>14}",
            scheduler_params(d, &sched).unwrap(),
            precoder_params(d, &prec).unwrap()
        );
    }
}
