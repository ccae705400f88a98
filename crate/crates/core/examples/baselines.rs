//! The reference schedulers and precoders side by side.

use wbgnn::baselines::{
    digital_zf_precode, exhaustive, greedy, hybrid_zf_precode, schedule_rate, strongest, Precode,
};
use wbgnn::channel::{generate_dataset, ScenarioConfig};
use wbgnn::eval::mean;

fn main() {
    let cfg = ScenarioConfig::default();
    let (p, s2, kp) = (cfg.p_tot_watts(), cfg.noise_power_watts(), cfg.k_prime);
    let data = generate_dataset(&cfg, 3, 100);
    let hybrid: &Precode = &hybrid_zf_precode;
    let digital: &Precode = &digital_zf_precode;

    let mut rates: [Vec<f64>; 4] = Default::default();
    let mut greedy_wins = 0;
    for h in &data {
        let st = schedule_rate(h, &strongest(h, kp).indices(), hybrid, p, s2).unwrap();
        let gr = schedule_rate(h, &greedy(h, kp, hybrid, p, s2).unwrap().indices(), hybrid, p, s2).unwrap();
        let ex_h = exhaustive(h, kp, hybrid, p, s2, false).unwrap().1;
        let ex_d = exhaustive(h, kp, digital, p, s2, true).unwrap().1;
        greedy_wins += usize::from(gr >= st);
        for (v, r) in rates.iter_mut().zip([st, gr, ex_h, ex_d]) {
            v.push(r);
        }
    }
    let names = ["strongest + hybrid ZF", "greedy + hybrid ZF", "exhaustive + hybrid ZF", "exhaustive + digital ZF"];
    for (name, r) in names.iter().zip(&rates) {
        println!("{name:>24}: {:.3} bits/s/Hz", mean(r));
    }
    println!("greedy >= strongest on {greedy_wins}/{} samples", data.len());
}
