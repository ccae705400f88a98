//! Same-parameter-same-decision probes: duplicate one element along an
//! axis and see whether a policy treats the two copies alike.

use wbgnn::baselines::{miso_policy, precoder_policy, score_policy, spsd_check, strongest_policy, SpsdAxis};
use wbgnn::channel::ScenarioConfig;
use wbgnn::precoder::PrecoderParams;
use wbgnn::scheduler::{SchedulerParams, Variant};

fn main() {
    let cfg = ScenarioConfig { n_r: 2, ..ScenarioConfig::default() };
    let sigma2 = cfg.noise_power_watts() / cfg.p_tot_watts();
    let ngnn = SchedulerParams::new(Variant::Ngnn, &[16, 16], cfg.k_prime, 4);
    let prec = PrecoderParams::new(&[16, 16], cfg.n_rf, 5);
    let miso = miso_policy(sigma2);
    let strongest = strongest_policy(cfg.k_prime);
    let scores = score_policy(&ngnn);
    let precoder = precoder_policy(&prec, cfg.p_tot_watts(), true);
    let axes = [SpsdAxis::Rb, SpsdAxis::UserGroup, SpsdAxis::UeAntenna, SpsdAxis::BsAntenna];
    println!("{:>10} {:>12} {:>12} {:>12} {:>12}", "axis", "miso", "strongest", "ngnn-score", "precoder");
    for axis in axes {
        let rate = |p: &wbgnn::baselines::Policy| spsd_check(p, axis, 200, &cfg, 9, 1e-10).unwrap().agreement_rate;
        println!(
            "{:>10} {:>12.3} {:>12.3} {:>12.3} {:>12.3}",
            axis.to_string(),
            rate(&miso),
            rate(&strongest),
            rate(&scores),
            rate(&precoder)
        );
    }
}
