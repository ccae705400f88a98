//! Generate a few channels, run an untrained scheduler and precoder on
//! them and compare the exact sum rate with the ZF references.

use wbgnn::channel::{generate_dataset, ScenarioConfig};
use wbgnn::eval::{evaluate, Baseline, Problem};
use wbgnn::precoder::PrecoderParams;
use wbgnn::scheduler::{SchedulerParams, Variant};

fn main() {
    let cfg = ScenarioConfig::default();
    let samples = generate_dataset(&cfg, 7, 20);
    let h = &samples[0];
    println!("M = {}, K = {}, N_R = {}, N_T = {}", h.m, h.k, h.n_r, h.n_t);
    println!("P_tot = {:.1} W, noise = {:.3e} W", cfg.p_tot_watts(), cfg.noise_power_watts());
    for k in 0..h.k {
        println!("user {k}: |H| on RB 0 = {:.3e}", h.user_norm(0, k));
    }

    let problem = Problem::from_config(&cfg);
    let sched = SchedulerParams::new(Variant::Ngnn, &[32, 32, 32], cfg.k_prime, 1);
    let prec = PrecoderParams::new(&[48, 48, 48], cfg.n_rf, 2);
    let row = evaluate("untrained", Some(&sched), &prec, &samples, &problem, &Baseline::ALL, true, false).unwrap();
    println!("\nuntrained GNN pair: {:.3} bits/s/Hz", row.se);
    for (b, se, ratio) in &row.baselines {
        println!("{b:>16}: {se:.3} bits/s/Hz (GNN / reference = {ratio:.3})");
    }
    println!("max constraint residual {:.1e}, inference FLOPs {}", row.residual, row.flops);
}
