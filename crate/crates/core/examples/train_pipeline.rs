//! Three-phase training on a reduced desk problem: precoder pretraining,
//! scheduler training against the frozen precoder, joint fine-tuning.
//!
//! `cargo run --release --example train_pipeline -- [samples] [epochs]`

use std::time::Instant;

use wbgnn::channel::{generate_dataset, ScenarioConfig};
use wbgnn::cli::TEST_SEED_OFFSET;
use wbgnn::eval::{evaluate, Baseline, EvalReport, Problem};
use wbgnn::train::{epochs_csv, train_all, TrainConfig};

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let samples = args.next().unwrap_or(600);
    let epochs = args.next().unwrap_or(4);

    let cfg = ScenarioConfig::default();
    let tc = TrainConfig { epochs_pretrain: epochs, epochs_sched: epochs, epochs_joint: epochs, ..TrainConfig::default() };
    let problem = Problem::from_config(&cfg);
    let data = generate_dataset(&cfg, tc.seed, samples);
    let test = generate_dataset(&cfg, tc.seed + TEST_SEED_OFFSET, 200);

    let start = Instant::now();
    let trained = train_all(&tc, &problem, cfg.n_rf, &data).expect("training");
    println!("trained in {:.1} s", start.elapsed().as_secs_f64());
    print!("{}", epochs_csv(&trained.history).render());

    let row = evaluate("joint", trained.scheduler.as_ref(), &trained.precoder, &test, &problem, &Baseline::ALL, tc.attention, true)
        .expect("evaluation");
    print!("{}", EvalReport { rows: vec![row] }.csv().render());
}
