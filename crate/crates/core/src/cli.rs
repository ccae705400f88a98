//! The `wbgnn` command line: one subcommand per pipeline stage.
//!
//! Every command reads one flat config file holding scenario keys, training
//! keys and the run keys of [`RunConfig`]. Relative data and checkpoint paths
//! resolve against `--out`, where all artifacts are written. A failing
//! command removes whatever it had already written.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::baselines::{self, spsd_check, BaselineError, SpsdAxis, SpsdReport};
use crate::channel::{generate_dataset, read_dataset, write_dataset, Dataset, DatasetError, ScenarioConfig, Split};
use crate::checkpoint::{load_precoder, load_scheduler, save_precoder, save_scheduler, CheckpointError};
use crate::config::{ConfigError, KeyValueWriter, KeyValues};
use crate::eval::{evaluate, sweep, Baseline, EvalError, EvalReport, Problem, SweepAxis};
use crate::flops::{precoder_layer, scheduler_layer, Dims};
use crate::precoder::PrecoderParams;
use crate::report::Csv;
use crate::scheduler::SchedulerParams;
use crate::train::{self, epochs_csv, split_validation, TrainConfig, TrainError, Trained};

/// Offset between the train and test seed ranges of `gen-data`.
pub const TEST_SEED_OFFSET: u64 = 1 << 40;

pub const JOINT_PRECODER: &str = "joint-precoder.wbnn";
pub const JOINT_SCHEDULER: &str = "joint-scheduler.wbnn";
pub const FLOPS_SCHEMA: &str = "wbgnn-flops v1";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

// ── Arguments ──

#[derive(Debug, Parser)]
#[command(name = "wbgnn", version, about = "Wideband scheduling and hybrid precoding with 3D GNNs")]
pub struct Cli {
    /// Flat `key = value` config (scenario, training and run keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Worker threads for per-sample parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    /// Pretrained precoder on the strongest users.
    Pretrain,
    /// Trained scheduler with the pretrained precoder.
    Sched,
    /// Jointly fine-tuned modules.
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpsdPolicy {
    Miso,
    Strongest,
    Scheduler,
    Precoder,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate `train.wbch` and `test.wbch`.
    GenData,
    /// Pretrain the precoder.
    Pretrain,
    /// Train the scheduler against the frozen precoder.
    TrainSched,
    /// Fine-tune both modules jointly.
    TrainJoint,
    /// Evaluate checkpoints on the test set.
    Eval {
        #[arg(long, value_enum, default_value = "joint")]
        stage: Stage,
    },
    /// Evaluate on regenerated data across one size axis.
    Sweep {
        #[arg(long, value_enum, default_value = "joint")]
        stage: Stage,
    },
    /// Same-parameter-same-decision check of a policy.
    Spsd {
        #[arg(long, value_enum, default_value = "joint")]
        stage: Stage,
    },
    /// FLOPs table of the configured networks.
    Flops,
}

// ── Run configuration ──

/// Keys that belong to neither the scenario nor training.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train_samples: usize,
    pub test_samples: usize,
    pub baselines: Vec<Baseline>,
    /// Wall-clock columns; off keeps reports byte-reproducible.
    pub timed: bool,
    pub sweep_axis: SweepAxis,
    pub sweep_values: Vec<usize>,
    pub sweep_samples: usize,
    pub spsd_axis: SpsdAxis,
    pub spsd_policy: SpsdPolicy,
    pub spsd_samples: usize,
    pub spsd_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_samples: 5000,
            test_samples: 500,
            baselines: Baseline::ALL.to_vec(),
            timed: false,
            sweep_axis: SweepAxis::M,
            sweep_values: vec![1, 2, 4, 8],
            sweep_samples: 200,
            spsd_axis: SpsdAxis::BsAntenna,
            spsd_policy: SpsdPolicy::Miso,
            spsd_samples: 1000,
            spsd_tol: 1e-10,
        }
    }
}

fn list<T: std::str::FromStr>(key: &str, raw: &str) -> std::result::Result<Vec<T>, ConfigError> {
    let bad = || ConfigError::BadValue { key: key.into(), value: raw.into() };
    let v: Vec<T> = raw.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<std::result::Result<_, _>>()?;
    if v.is_empty() {
        return Err(bad());
    }
    Ok(v)
}

fn parsed<T: std::str::FromStr>(kv: &mut KeyValues, key: &str, slot: &mut T) -> std::result::Result<(), ConfigError> {
    if let Some(raw) = kv.take_raw(key) {
        *slot = raw.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: raw })?;
    }
    Ok(())
}

impl RunConfig {
    pub fn take_from(kv: &mut KeyValues) -> std::result::Result<Self, ConfigError> {
        let mut c = Self::default();
        kv.take("train_samples", &mut c.train_samples)?;
        kv.take("test_samples", &mut c.test_samples)?;
        if let Some(raw) = kv.take_raw("baselines") {
            c.baselines = if raw.trim() == "none" { Vec::new() } else { list("baselines", &raw)? };
        }
        kv.take("timed", &mut c.timed)?;
        parsed(kv, "sweep_axis", &mut c.sweep_axis)?;
        if let Some(raw) = kv.take_raw("sweep_values") {
            c.sweep_values = list("sweep_values", &raw)?;
        }
        kv.take("sweep_samples", &mut c.sweep_samples)?;
        parsed(kv, "spsd_axis", &mut c.spsd_axis)?;
        if let Some(raw) = kv.take_raw("spsd_policy") {
            c.spsd_policy = SpsdPolicy::from_str(&raw, true)
                .map_err(|_| ConfigError::BadValue { key: "spsd_policy".into(), value: raw })?;
        }
        kv.take("spsd_samples", &mut c.spsd_samples)?;
        kv.take("spsd_tol", &mut c.spsd_tol)?;
        if c.train_samples == 0 || c.test_samples == 0 || c.sweep_samples == 0 || c.spsd_samples == 0 {
            return Err(ConfigError::Invalid("sample counts must be positive".into()));
        }
        if !(c.spsd_tol >= 0.0) {
            return Err(ConfigError::Invalid("spsd_tol must be non-negative".into()));
        }
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let join = |v: Vec<String>| if v.is_empty() { "none".to_string() } else { v.join(",") };
        let policy = self.spsd_policy.to_possible_value().expect("no skipped variants");
        let mut w = KeyValueWriter::default();
        w.put("train_samples", self.train_samples)
            .put("test_samples", self.test_samples)
            .put("baselines", join(self.baselines.iter().map(ToString::to_string).collect()))
            .put("timed", self.timed)
            .put("sweep_axis", self.sweep_axis)
            .put("sweep_values", join(self.sweep_values.iter().map(ToString::to_string).collect()))
            .put("sweep_samples", self.sweep_samples)
            .put("spsd_axis", self.spsd_axis)
            .put("spsd_policy", policy.get_name())
            .put("spsd_samples", self.spsd_samples)
            .put("spsd_tol", self.spsd_tol);
        w.finish()
    }
}

/// Everything one config file describes.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub run: RunConfig,
}

impl Experiment {
    pub fn from_kv(mut kv: KeyValues) -> std::result::Result<Self, ConfigError> {
        let scenario = ScenarioConfig::take_from(&mut kv)?;
        let train = TrainConfig::take_from(&mut kv)?;
        let run = RunConfig::take_from(&mut kv)?;
        kv.finish()?;
        Ok(Self { scenario, train, run })
    }

    pub fn to_kv(&self) -> String {
        format!("{}{}{}", self.scenario.to_kv(), self.train.to_kv(), self.run.to_kv())
    }

    pub fn load(path: Option<&Path>) -> std::result::Result<Self, ConfigError> {
        match path {
            Some(p) => Self::from_kv(KeyValues::read(p)?),
            None => Self::from_kv(KeyValues::default()),
        }
    }
}

// ── Execution ──

/// Files written by the current command, removed again on failure.
#[derive(Default)]
struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    fn record(&mut self, path: PathBuf) -> PathBuf {
        self.written.push(path.clone());
        path
    }

    fn dataset(&mut self, path: PathBuf, ds: &Dataset) -> Result<()> {
        let mut side = path.clone().into_os_string();
        side.push(".cfg");
        self.record(side.into());
        write_dataset(self.record(path), ds)?;
        Ok(())
    }

    fn csv(&mut self, path: PathBuf, csv: &Csv) -> Result<()> {
        let p = self.record(path);
        csv.write(&p).map_err(|source| CliError::Io { path: p.display().to_string(), source })
    }

    fn discard(self) {
        for p in self.written {
            let _ = fs::remove_file(p);
        }
    }
}

struct Context {
    exp: Experiment,
    out: PathBuf,
}

impl Context {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out.join(p)
        }
    }

    fn problem(&self) -> Problem {
        Problem::from_config(&self.exp.scenario)
    }

    /// Training samples, checked against the configured scenario.
    fn train_samples(&self) -> Result<Dataset> {
        let ds = read_dataset(self.path(&self.exp.train.train_data))?;
        let s = &self.exp.scenario;
        let want = (s.m, s.k, s.n_r, s.n_t);
        if ds.dims() != Some(want) {
            return Err(CliError::Usage(format!(
                "dataset dims {:?} do not match the configured (M, K, N_R, N_T) = {want:?}",
                ds.dims()
            )));
        }
        Ok(ds)
    }

    fn models(&self, stage: Stage) -> Result<(Option<SchedulerParams>, PrecoderParams)> {
        let t = &self.exp.train;
        Ok(match stage {
            Stage::Pretrain => (None, load_precoder(&self.path(&t.precoder_checkpoint))?),
            Stage::Sched => (
                Some(load_scheduler(&self.path(&t.scheduler_checkpoint))?),
                load_precoder(&self.path(&t.precoder_checkpoint))?,
            ),
            Stage::Joint => (
                Some(load_scheduler(&self.out.join(JOINT_SCHEDULER))?),
                load_precoder(&self.out.join(JOINT_PRECODER))?,
            ),
        })
    }
}

fn stage_name(stage: Stage) -> String {
    stage.to_possible_value().expect("no skipped variants").get_name().to_string()
}

fn gen_data(cx: &Context, out: &mut Outputs) -> Result<()> {
    let (s, t, r) = (&cx.exp.scenario, &cx.exp.train, &cx.exp.run);
    let train = generate_dataset(s, t.seed, r.train_samples);
    out.dataset(cx.path(&t.train_data), &Dataset::new(s.clone(), Split::Train, train))?;
    let test = generate_dataset(s, t.seed.wrapping_add(TEST_SEED_OFFSET), r.test_samples);
    out.dataset(cx.path(&t.test_data), &Dataset::new(s.clone(), Split::Test, test))?;
    Ok(())
}

fn report_phase(name: &str, t: &Trained) {
    eprintln!("{name}: best validation SE {:.4} bits/s/Hz after {} epochs", t.best_se, t.history.len() - 1);
}

fn pretrain(cx: &Context, out: &mut Outputs) -> Result<()> {
    let ds = cx.train_samples()?;
    let t = &cx.exp.train;
    let (train_set, val) = split_validation(&ds.samples, t.validation_fraction);
    let r = train::pretrain(t, &cx.problem(), train_set, val, t.new_precoder(cx.exp.scenario.n_rf))?;
    save_precoder(&r.precoder, &out.record(cx.path(&t.precoder_checkpoint)))?;
    out.csv(cx.out.join("pretrain-epochs.csv"), &epochs_csv(&r.history))?;
    report_phase("pretrain", &r);
    Ok(())
}

fn train_sched(cx: &Context, out: &mut Outputs) -> Result<()> {
    let ds = cx.train_samples()?;
    let t = &cx.exp.train;
    let prec = load_precoder(&cx.path(&t.precoder_checkpoint))?;
    let (train_set, val) = split_validation(&ds.samples, t.validation_fraction);
    let init = t.new_scheduler(cx.exp.scenario.k_prime);
    let r = train::train_scheduler(t, &cx.problem(), train_set, val, init, prec)?;
    let sched = r.scheduler.as_ref().expect("scheduler phase keeps a scheduler");
    save_scheduler(sched, &out.record(cx.path(&t.scheduler_checkpoint)))?;
    out.csv(cx.out.join("sched-epochs.csv"), &epochs_csv(&r.history))?;
    report_phase("train-sched", &r);
    Ok(())
}

fn train_joint(cx: &Context, out: &mut Outputs) -> Result<()> {
    let ds = cx.train_samples()?;
    let t = &cx.exp.train;
    let (sched, prec) = cx.models(Stage::Sched)?;
    let sched = sched.expect("sched stage loads a scheduler");
    let (train_set, val) = split_validation(&ds.samples, t.validation_fraction);
    let r = train::joint_train(t, &cx.problem(), train_set, val, sched, prec)?;
    save_precoder(&r.precoder, &out.record(cx.out.join(JOINT_PRECODER)))?;
    let sched = r.scheduler.as_ref().expect("joint phase keeps a scheduler");
    save_scheduler(sched, &out.record(cx.out.join(JOINT_SCHEDULER)))?;
    out.csv(cx.out.join("joint-epochs.csv"), &epochs_csv(&r.history))?;
    report_phase("train-joint", &r);
    Ok(())
}

fn eval(cx: &Context, out: &mut Outputs, stage: Stage) -> Result<()> {
    let (sched, prec) = cx.models(stage)?;
    let ds = read_dataset(cx.path(&cx.exp.train.test_data))?;
    let problem = Problem::from_config(ds.config.as_ref().unwrap_or(&cx.exp.scenario));
    let row = evaluate(
        &stage_name(stage),
        sched.as_ref(),
        &prec,
        &ds.samples,
        &problem,
        &cx.exp.run.baselines,
        cx.exp.train.attention,
        cx.exp.run.timed,
    )?;
    let report = EvalReport { rows: vec![row] };
    out.csv(cx.out.join("eval.csv"), &report.csv())?;
    print!("{}", report.csv().render());
    Ok(())
}

fn sweep_cmd(cx: &Context, out: &mut Outputs, stage: Stage) -> Result<()> {
    let (sched, prec) = cx.models(stage)?;
    let r = &cx.exp.run;
    let report = sweep(
        sched.as_ref(),
        &prec,
        &cx.exp.scenario,
        r.sweep_axis,
        &r.sweep_values,
        r.sweep_samples,
        cx.exp.train.seed.wrapping_add(TEST_SEED_OFFSET),
        &r.baselines,
        cx.exp.train.attention,
        r.timed,
    )?;
    out.csv(cx.out.join("sweep.csv"), &report.csv())?;
    print!("{}", report.csv().render());
    Ok(())
}

fn spsd(cx: &Context, out: &mut Outputs, stage: Stage) -> Result<()> {
    let (s, r) = (&cx.exp.scenario, &cx.exp.run);
    let seed = cx.exp.train.seed.wrapping_add(TEST_SEED_OFFSET);
    let report = match r.spsd_policy {
        SpsdPolicy::Miso => {
            let policy = baselines::miso_policy(s.noise_power_watts() / s.p_tot_watts());
            spsd_check(&policy, r.spsd_axis, r.spsd_samples, s, seed, r.spsd_tol)?
        }
        SpsdPolicy::Strongest => {
            spsd_check(&baselines::strongest_policy(s.k_prime), r.spsd_axis, r.spsd_samples, s, seed, r.spsd_tol)?
        }
        SpsdPolicy::Scheduler => {
            let (sched, _) = cx.models(stage)?;
            let sched = sched.ok_or_else(|| CliError::Usage("the pretrain stage has no scheduler".into()))?;
            let policy = baselines::score_policy(&sched);
            let report = spsd_check(&policy, r.spsd_axis, r.spsd_samples, s, seed, r.spsd_tol)?;
            report
        }
        SpsdPolicy::Precoder => {
            let (_, prec) = cx.models(stage)?;
            let policy = baselines::precoder_policy(&prec, s.p_tot_watts(), cx.exp.train.attention);
            let report = spsd_check(&policy, r.spsd_axis, r.spsd_samples, s, seed, r.spsd_tol)?;
            report
        }
    };
    let csv = SpsdReport::csv(&[report]);
    out.csv(cx.out.join("spsd.csv"), &csv)?;
    print!("{}", csv.render());
    Ok(())
}

/// Per-layer and total FLOPs of the configured scheduler and precoder.
pub fn flops_table(exp: &Experiment) -> Result<Csv> {
    let s = &exp.scenario;
    let d = Dims::new(s.m, s.k, s.k_prime, s.n_t, s.n_r);
    let bad = || CliError::Usage("FLOPs need positive dimensions".into());
    let mut csv = Csv::new(FLOPS_SCHEMA, &["module", "network", "layer", "c_in", "c_out", "flops"]);
    let sched = exp.train.new_scheduler(s.k_prime);
    let prec = exp.train.new_precoder(s.n_rf);
    let mut total = 0u128;
    let mut layers: Vec<(&str, usize, Vec<usize>)> = sched.nets.iter().enumerate().map(|(i, n)| ("scheduler", i, n.widths())).collect();
    layers.push(("precoder", 0, prec.net.widths()));
    for (module, i, widths) in layers {
        for (l, w) in widths.windows(2).enumerate() {
            let f = match module {
                "scheduler" => scheduler_layer(d, w[0], w[1]),
                _ => precoder_layer(d, w[0], w[1]),
            }
            .ok_or_else(bad)?;
            total += f;
            csv.push(vec![module.into(), i.to_string(), (l + 1).to_string(), w[0].to_string(), w[1].to_string(), f.to_string()]);
        }
    }
    csv.push(vec!["total".into(), String::new(), String::new(), String::new(), String::new(), total.to_string()]);
    Ok(csv)
}

fn flops(cx: &Context, out: &mut Outputs) -> Result<()> {
    let csv = flops_table(&cx.exp)?;
    out.csv(cx.out.join("flops.csv"), &csv)?;
    println!("{:<10} {:>7} {:>5} {:>6} {:>6} {:>20}", "module", "network", "layer", "c_in", "c_out", "flops");
    for r in &csv.rows {
        println!("{:<10} {:>7} {:>5} {:>6} {:>6} {:>20}", r[0], r[1], r[2], r[3], r[4], r[5]);
    }
    Ok(())
}

/// Runs one parsed command; on error every file it wrote is removed.
pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let mut exp = Experiment::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        exp.train.seed = seed;
    }
    fs::create_dir_all(&cli.out).map_err(|source| CliError::Io { path: cli.out.display().to_string(), source })?;
    let cx = Context { exp, out: cli.out.clone() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let mut out = Outputs::default();
    let result = pool.install(|| match cli.command {
        Command::GenData => gen_data(&cx, &mut out),
        Command::Pretrain => pretrain(&cx, &mut out),
        Command::TrainSched => train_sched(&cx, &mut out),
        Command::TrainJoint => train_joint(&cx, &mut out),
        Command::Eval { stage } => eval(&cx, &mut out, stage),
        Command::Sweep { stage } => sweep_cmd(&cx, &mut out, stage),
        Command::Spsd { stage } => spsd(&cx, &mut out, stage),
        Command::Flops => flops(&cx, &mut out),
    });
    if result.is_err() {
        out.discard();
    }
    result
}

/// Parses `args` (program name first) and runs, mapping errors to exit code 1.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
