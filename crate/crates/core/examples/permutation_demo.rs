//! Relabelling users moves the precoder output with them and leaves the
//! sum rate untouched.

use wbgnn::channel::{generate_sample, ScenarioConfig};
use wbgnn::precoder::{precode_samples, PrecoderParams};
use wbgnn::system::{sum_rate, Axis, Permutation, Permute};

fn main() {
    let cfg = ScenarioConfig { k: 2, ..ScenarioConfig::default() };
    let h = generate_sample(&cfg, 11);
    let prec = PrecoderParams::new(&[16, 16], cfg.n_rf, 3);
    let p = Permutation::swap(2, 0, 1);
    let hp = h.permute(Axis::UserGroup, &p).unwrap();

    let (a, _) = precode_samples(&prec, &[&h], cfg.p_tot_watts(), true).unwrap();
    let (b, _) = precode_samples(&prec, &[&hp], cfg.p_tot_watts(), true).unwrap();
    println!("W_BB[RB 0, RF 0, user 0] original {:.4}", a[0].w_bb_at(0, 0, 0));
    println!("W_BB[RB 0, RF 0, user 1] swapped  {:.4}", b[0].w_bb_at(0, 0, 1));
    println!("W_RF[0, 0] original {:.4}, swapped {:.4}", a[0].w_rf_at(0, 0), b[0].w_rf_at(0, 0));
    let s2 = cfg.noise_power_watts();
    println!(
        "sum rate original {:.6}, swapped {:.6}",
        sum_rate(&h, None, &a[0], s2).unwrap().sum_rate,
        sum_rate(&hp, None, &b[0], s2).unwrap().sum_rate
    );
}
