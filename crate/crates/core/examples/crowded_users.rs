//! Near-duplicate strong users in a crowded box: a single scoring network
//! gives the copies (almost) the same score, while the sequential variant
//! conditions each pick on the previous ones.

use wbgnn::channel::{generate_dataset, ScenarioConfig, UserArea};
use wbgnn::eval::{hard_schedules, Problem};
use wbgnn::scheduler::{scores, SchedulerParams, Variant};
use wbgnn::train::{pretrain, split_validation, train_scheduler, TrainConfig};

fn main() {
    let cfg = ScenarioConfig {
        user_area: UserArea::CrowdedBox { center_m: 80.0, side_m: 20.0 },
        duplicate_users: 2,
        duplicate_jitter: 0.0,
        ..ScenarioConfig::default()
    };
    let data = generate_dataset(&cfg, 21, 400);
    let h = &data[0];
    let ngnn = SchedulerParams::new(Variant::Ngnn, &[16, 16], cfg.k_prime, 1);
    let z = scores(&ngnn, &[h]).unwrap();
    println!("NGNN scores on RB 0 (last {} users copy others): {:.4?}", cfg.duplicate_users, &z[..cfg.k]);

    let tc = TrainConfig { epochs_pretrain: 3, epochs_sched: 3, scheduler_hidden: vec![16, 16], ..TrainConfig::default() };
    let problem = Problem::from_config(&cfg);
    let (train, val) = split_validation(&data, tc.validation_fraction);
    let p = pretrain(&tc, &problem, train, val, tc.new_precoder(cfg.n_rf)).unwrap();
    for variant in [Variant::Ngnn, Variant::Sgnn] {
        let tv = TrainConfig { variant, ..tc.clone() };
        let s = train_scheduler(&tv, &problem, train, val, tv.new_scheduler(cfg.k_prime), p.precoder.clone()).unwrap();
        let sched = s.scheduler.unwrap();
        let picks = &hard_schedules(&sched, &[h], cfg.k_prime).unwrap()[0];
        println!("{variant}: validation SE {:.3}, picks on sample 0 {:?}", s.best_se, picks.indices());
    }
}
