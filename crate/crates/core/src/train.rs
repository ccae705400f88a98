//! The three training phases: precoder pretraining on the strongest users,
//! scheduler training against the frozen precoder, and joint fine-tuning.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::ChannelTensor;
use crate::config::{ConfigError, KeyValueWriter, KeyValues};
use crate::eval::{mean, policy_rates, EvalError, Problem};
use crate::gnn::{Bound, Mode, Network};
use crate::precoder::{precode, Precoded, PrecoderOptions, PrecoderParams};
use crate::report::{num, Csv};
use crate::scheduler::{schedule, scheduler_input, ScheduleOptions, Scheduled, SchedulerParams, Selection, Variant};
use crate::system::tape::{channel_tensors, extract_scheduled, rate_loss, scheduled_rate, ComplexVar};
use crate::system::{self, SystemError};
use crate::tensor::{Gradients, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{phase} epoch {epoch} step {step}: non-finite loss (τ = {tau:?}, gradient norm {grad_norm:e})")]
    NonFinite { phase: Phase, epoch: usize, step: usize, tau: Option<f64>, grad_norm: f64 },
    #[error("data: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

// ── Configuration ──

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_precoder: f64,
    pub lr_scheduler: f64,
    /// Per-epoch multiplicative decay of both learning rates (1 = constant).
    pub lr_decay: f64,
    pub epochs_pretrain: usize,
    pub epochs_sched: usize,
    pub epochs_joint: usize,
    pub tau0: f64,
    pub tau_amp: f64,
    pub tau_decay: f64,
    pub seed: u64,
    pub variant: Variant,
    pub scheduler_hidden: Vec<usize>,
    pub precoder_hidden: Vec<usize>,
    /// `false` trains the precoder without attention (all coefficients 1).
    pub attention: bool,
    /// Trailing share of the training file held out for model selection.
    pub validation_fraction: f64,
    pub train_data: PathBuf,
    pub test_data: PathBuf,
    pub precoder_checkpoint: PathBuf,
    pub scheduler_checkpoint: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 50,
            lr_precoder: 1e-3,
            lr_scheduler: 3e-4,
            lr_decay: 1.0,
            epochs_pretrain: 40,
            epochs_sched: 10,
            epochs_joint: 40,
            tau0: 0.1,
            tau_amp: 0.4,
            tau_decay: 0.02,
            seed: 0,
            variant: Variant::Ngnn,
            scheduler_hidden: vec![32, 32, 32],
            precoder_hidden: vec![48, 48, 48],
            attention: true,
            validation_fraction: 0.1,
            train_data: "train.wbch".into(),
            test_data: "test.wbch".into(),
            precoder_checkpoint: "precoder.wbnn".into(),
            scheduler_checkpoint: "scheduler.wbnn".into(),
        }
    }
}

fn parse_widths(key: &str, s: &str) -> std::result::Result<Vec<usize>, ConfigError> {
    let bad = || ConfigError::BadValue { key: key.into(), value: s.into() };
    let v: Vec<usize> = s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<std::result::Result<_, _>>()?;
    if v.is_empty() || v.contains(&0) {
        return Err(bad());
    }
    Ok(v)
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// `τ = τ_0 + amplitude · exp(−decay · epoch)`.
    pub fn tau(&self, epoch: usize) -> f64 {
        self.tau0 + self.tau_amp * (-self.tau_decay * epoch as f64).exp()
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr_precoder > 0.0 && self.lr_scheduler > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.epochs_pretrain == 0 || self.epochs_sched == 0 || self.epochs_joint == 0 {
            return bad("epoch counts must be positive");
        }
        if !(self.tau0 > 0.0 && self.tau_amp >= 0.0 && self.tau_decay >= 0.0) {
            return bad("temperature schedule needs tau0 > 0, tau_amp >= 0, tau_decay >= 0");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn from_kv(mut kv: KeyValues) -> std::result::Result<Self, ConfigError> {
        let c = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(c)
    }

    /// Consumes the training keys of `kv`, leaving any others in place.
    pub fn take_from(kv: &mut KeyValues) -> std::result::Result<Self, ConfigError> {
        let mut c = Self::default();
        kv.take("batch_size", &mut c.batch_size)?;
        kv.take("lr_precoder", &mut c.lr_precoder)?;
        kv.take("lr_scheduler", &mut c.lr_scheduler)?;
        kv.take("lr_decay", &mut c.lr_decay)?;
        kv.take("epochs_pretrain", &mut c.epochs_pretrain)?;
        kv.take("epochs_sched", &mut c.epochs_sched)?;
        kv.take("epochs_joint", &mut c.epochs_joint)?;
        kv.take("tau0", &mut c.tau0)?;
        kv.take("tau_amp", &mut c.tau_amp)?;
        kv.take("tau_decay", &mut c.tau_decay)?;
        kv.take("seed", &mut c.seed)?;
        if let Some(v) = kv.take_raw("variant") {
            c.variant = v.parse().map_err(|_| ConfigError::BadValue { key: "variant".into(), value: v })?;
        }
        if let Some(v) = kv.take_raw("scheduler_hidden") {
            c.scheduler_hidden = parse_widths("scheduler_hidden", &v)?;
        }
        if let Some(v) = kv.take_raw("precoder_hidden") {
            c.precoder_hidden = parse_widths("precoder_hidden", &v)?;
        }
        kv.take("attention", &mut c.attention)?;
        kv.take("validation_fraction", &mut c.validation_fraction)?;
        kv.take("train_data", &mut c.train_data)?;
        kv.take("test_data", &mut c.test_data)?;
        kv.take("precoder_checkpoint", &mut c.precoder_checkpoint)?;
        kv.take("scheduler_checkpoint", &mut c.scheduler_checkpoint)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KeyValueWriter::default();
        w.put("batch_size", self.batch_size)
            .put("lr_precoder", self.lr_precoder)
            .put("lr_scheduler", self.lr_scheduler)
            .put("lr_decay", self.lr_decay)
            .put("epochs_pretrain", self.epochs_pretrain)
            .put("epochs_sched", self.epochs_sched)
            .put("epochs_joint", self.epochs_joint)
            .put("tau0", self.tau0)
            .put("tau_amp", self.tau_amp)
            .put("tau_decay", self.tau_decay)
            .put("seed", self.seed)
            .put("variant", self.variant)
            .put("scheduler_hidden", join(&self.scheduler_hidden))
            .put("precoder_hidden", join(&self.precoder_hidden))
            .put("attention", self.attention)
            .put("validation_fraction", self.validation_fraction)
            .put("train_data", self.train_data.display())
            .put("test_data", self.test_data.display())
            .put("precoder_checkpoint", self.precoder_checkpoint.display())
            .put("scheduler_checkpoint", self.scheduler_checkpoint.display());
        w.finish()
    }

    pub fn new_precoder(&self, n_rf: usize) -> PrecoderParams {
        PrecoderParams::new(&self.precoder_hidden, n_rf, self.seed.wrapping_mul(2).wrapping_add(1))
    }

    pub fn new_scheduler(&self, k_prime: usize) -> SchedulerParams {
        SchedulerParams::new(self.variant, &self.scheduler_hidden, k_prime, self.seed.wrapping_mul(2).wrapping_add(1000))
    }
}

// ── Optimizer ──

/// Adam with `β = (0.9, 0.999)`, `ε = 1e-8`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_network(lr: f64, net: &Network) -> Self {
        Self::new(lr, net.tensors().map(Tensor::numel))
    }

    /// One update; a missing gradient counts as zero.
    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut Tensor>, grads: &[Option<&Tensor>]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, p) in params.enumerate() {
            let Some(g) = grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

// ── Loss ──

/// Which modules run, how, and which receive gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSetup {
    pub selection: Selection,
    pub sched_mode: Mode,
    pub prec_mode: Mode,
    pub sched_trainable: bool,
    pub prec_trainable: bool,
    pub attention: bool,
}

pub struct Forward {
    pub loss: Var,
    /// Per-sample scheduled rate `[B, 1, 1, 1, 1]`.
    pub rate: Var,
    pub scheduled: Option<Scheduled>,
    pub precoded: Precoded,
}

/// Batch-mean negative scheduled sum rate.
///
/// Without a scheduler (or when `K ≤ K'`) the strongest users (all users)
/// are passed to the precoder as a constant schedule. Channels enter the
/// tape scaled by `1/σ`, so the noise term is `1/N_R`.
pub fn batch_loss(
    tape: &mut Tape,
    sched: Option<&SchedulerParams>,
    prec: &PrecoderParams,
    batch: &[&ChannelTensor],
    problem: &Problem,
    setup: LossSetup,
) -> Result<Forward> {
    let first = batch.first().ok_or_else(|| TrainError::Data("empty batch".into()))?;
    let (_, k, n_r, _) = first.dims();
    let scale = vec![1.0 / problem.sigma2.sqrt(); batch.len()];
    let inv_noise = vec![1.0 / n_r as f64; batch.len()];
    let opts = PrecoderOptions { attention: setup.attention, mode: setup.prec_mode };
    let (h_sched, scheduled) = match sched {
        Some(params) if k > problem.k_prime => {
            let (x, grid) = scheduler_input(batch)?;
            let x = tape.constant(x);
            let so = ScheduleOptions {
                k_prime: problem.k_prime,
                selection: setup.selection,
                mode: setup.sched_mode,
                trainable: setup.sched_trainable,
            };
            let s = schedule(tape, params, x, grid, so)?;
            let (re, im) = channel_tensors(batch, &scale)?;
            let h = ComplexVar { re: tape.constant(re), im: tape.constant(im) };
            (extract_scheduled(tape, h, s.basis, n_r)?, Some(s))
        }
        _ => {
            let picked: Vec<ChannelTensor> = crate::eval::select(None, batch, problem.k_prime)?
                .iter()
                .zip(batch)
                .map(|(b, h)| system::extract_scheduled(h, b))
                .collect::<std::result::Result<_, _>>()?;
            let refs: Vec<&ChannelTensor> = picked.iter().collect();
            let (re, im) = channel_tensors(&refs, &scale)?;
            (ComplexVar { re: tape.constant(re), im: tape.constant(im) }, None)
        }
    };
    let precoded = precode(tape, prec, h_sched, n_r, problem.p_tot, setup.prec_trainable, opts)?;
    let rate = scheduled_rate(tape, h_sched, &precoded.solution, n_r, &inv_noise)?;
    let loss = rate_loss(tape, rate)?;
    Ok(Forward { loss, rate, scheduled, precoded })
}

fn grads_for<'a>(grads: &'a Gradients, bound: &Bound) -> Vec<Option<&'a Tensor>> {
    bound.vars().map(|v| grads.get(v)).collect()
}

fn grad_norm(grads: &[Option<&Tensor>]) -> f64 {
    grads.iter().flatten().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt()
}

// ── Phases ──

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Scheduler,
    Joint,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Scheduler => "scheduler",
            Phase::Joint => "joint",
        })
    }
}

/// One line of the epoch log. Epoch 0 is the model before any update.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub tau: Option<f64>,
    pub train_loss: f64,
    pub val_se: f64,
    pub best_se: f64,
    pub improved: bool,
}

pub const EPOCH_SCHEMA: &str = "wbgnn-epochs v1";

pub fn epochs_csv(history: &[EpochRecord]) -> Csv {
    let mut csv = Csv::new(EPOCH_SCHEMA, &["phase", "epoch", "tau", "train_loss", "val_se", "best_se", "improved"]);
    for r in history {
        csv.push(vec![
            r.phase.to_string(),
            r.epoch.to_string(),
            r.tau.map(num).unwrap_or_default(),
            num(r.train_loss),
            num(r.val_se),
            num(r.best_se),
            (r.improved as u8).to_string(),
        ]);
    }
    csv
}

/// The trained modules after a phase (the best validated state).
#[derive(Clone, Debug)]
pub struct Trained {
    pub scheduler: Option<SchedulerParams>,
    pub precoder: PrecoderParams,
    pub history: Vec<EpochRecord>,
    pub best_se: f64,
}

/// Splits off the trailing validation share (at least one sample).
pub fn split_validation(samples: &[ChannelTensor], fraction: f64) -> (&[ChannelTensor], &[ChannelTensor]) {
    if fraction <= 0.0 || samples.len() < 2 {
        return (samples, samples);
    }
    let n_val = ((samples.len() as f64 * fraction).round() as usize).clamp(1, samples.len() - 1);
    samples.split_at(samples.len() - n_val)
}

fn batches(n: usize, size: usize, seed: u64, phase: Phase, epoch: usize) -> Vec<Vec<usize>> {
    let tag = match phase {
        Phase::Pretrain => 1u64,
        Phase::Scheduler => 2,
        Phase::Joint => 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (tag << 56) ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.chunks(size).map(<[usize]>::to_vec).collect()
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    problem: &'a Problem,
    train: &'a [ChannelTensor],
    val: &'a [ChannelTensor],
}

impl Run<'_> {
    fn validate(&self, sched: Option<&SchedulerParams>, prec: &PrecoderParams) -> Result<f64> {
        let refs: Vec<&ChannelTensor> = self.val.iter().collect();
        Ok(mean(&policy_rates(sched, prec, &refs, self.problem, self.cfg.attention)?.rates))
    }

    /// Shared epoch loop. `tau_offset` continues the temperature schedule
    /// across phases.
    fn run(
        &self,
        phase: Phase,
        epochs: usize,
        tau_offset: usize,
        mut sched: Option<SchedulerParams>,
        mut prec: PrecoderParams,
    ) -> Result<Trained> {
        let train_sched = matches!(phase, Phase::Scheduler | Phase::Joint);
        let train_prec = matches!(phase, Phase::Pretrain | Phase::Joint);
        let mut opt_p = Adam::for_network(self.cfg.lr_precoder, &prec.net);
        let mut opt_s: Vec<Adam> =
            sched.iter().flat_map(|s| &s.nets).map(|n| Adam::for_network(self.cfg.lr_scheduler, n)).collect();

        let start = self.validate(sched.as_ref(), &prec)?;
        let mut history = vec![EpochRecord {
            phase,
            epoch: 0,
            tau: None,
            train_loss: f64::NAN,
            val_se: start,
            best_se: start,
            improved: true,
        }];
        let mut best = (start, sched.clone(), prec.clone());

        for epoch in 1..=epochs {
            let tau = self.cfg.tau(tau_offset + epoch - 1);
            let decay = self.cfg.lr_decay.powi(epoch as i32 - 1);
            opt_p.lr = self.cfg.lr_precoder * decay;
            opt_s.iter_mut().for_each(|o| o.lr = self.cfg.lr_scheduler * decay);
            let setup = LossSetup {
                selection: Selection::Soft { tau },
                sched_mode: if train_sched { Mode::Train } else { Mode::Eval },
                prec_mode: if train_prec { Mode::Train } else { Mode::Eval },
                sched_trainable: train_sched,
                prec_trainable: train_prec,
                attention: self.cfg.attention,
            };
            let mut losses = Vec::new();
            for (step, idx) in batches(self.train.len(), self.cfg.batch_size, self.cfg.seed, phase, epoch).iter().enumerate() {
                let batch: Vec<&ChannelTensor> = idx.iter().map(|&i| &self.train[i]).collect();
                let sched_in = if phase == Phase::Pretrain { None } else { sched.as_ref() };
                let mut tape = Tape::new();
                let fwd = batch_loss(&mut tape, sched_in, &prec, &batch, self.problem, setup)?;
                let loss = tape.value(fwd.loss).data()[0];
                let grads = tape.backward(fwd.loss)?;
                let gp = grads_for(&grads, &fwd.precoded.bound);
                let gs: Vec<Vec<Option<&Tensor>>> =
                    fwd.scheduled.iter().flat_map(|s| &s.bound).map(|b| grads_for(&grads, b)).collect();
                if !loss.is_finite() {
                    let norm = grad_norm(&gp) + gs.iter().map(|g| grad_norm(g)).sum::<f64>();
                    let tau = train_sched.then_some(tau);
                    return Err(TrainError::NonFinite { phase, epoch, step, tau, grad_norm: norm });
                }
                losses.push(loss);
                if train_prec {
                    opt_p.step(prec.net.tensors_mut(), &gp);
                    prec.net.update_running(&tape, &fwd.precoded.bound);
                }
                if let (true, Some(s), Some(sc)) = (train_sched, sched.as_mut(), fwd.scheduled.as_ref()) {
                    for (i, (net, b)) in s.nets.iter_mut().zip(&sc.bound).enumerate() {
                        opt_s[i].step(net.tensors_mut(), &gs[i]);
                        net.update_running(&tape, b);
                    }
                }
            }
            let val = self.validate(sched.as_ref(), &prec)?;
            let improved = val > best.0;
            if improved {
                best = (val, sched.clone(), prec.clone());
            }
            history.push(EpochRecord {
                phase,
                epoch,
                tau: train_sched.then_some(tau),
                train_loss: mean(&losses),
                val_se: val,
                best_se: best.0,
                improved,
            });
        }
        Ok(Trained { scheduler: best.1, precoder: best.2, history, best_se: best.0 })
    }
}

fn check_data(train: &[ChannelTensor], problem: &Problem) -> Result<()> {
    let first = train.first().ok_or_else(|| TrainError::Data("empty training set".into()))?;
    if train.iter().any(|h| h.dims() != first.dims()) {
        return Err(TrainError::Data("training samples differ in dimensions".into()));
    }
    if problem.k_prime == 0 || !(problem.sigma2 > 0.0) || !(problem.p_tot > 0.0) {
        return Err(TrainError::Data(format!("invalid problem {problem:?}")));
    }
    Ok(())
}

/// Precoder pretraining on the strongest `K'` users of every RB.
pub fn pretrain(cfg: &TrainConfig, problem: &Problem, train: &[ChannelTensor], val: &[ChannelTensor], init: PrecoderParams) -> Result<Trained> {
    cfg.validate()?;
    check_data(train, problem)?;
    Run { cfg, problem, train, val }.run(Phase::Pretrain, cfg.epochs_pretrain, 0, None, init)
}

/// Scheduler training on the soft path with the precoder (weights and
/// normalization statistics) frozen.
pub fn train_scheduler(
    cfg: &TrainConfig,
    problem: &Problem,
    train: &[ChannelTensor],
    val: &[ChannelTensor],
    init: SchedulerParams,
    precoder: PrecoderParams,
) -> Result<Trained> {
    cfg.validate()?;
    check_data(train, problem)?;
    Run { cfg, problem, train, val }.run(Phase::Scheduler, cfg.epochs_sched, 0, Some(init), precoder)
}

/// Joint fine-tuning of both modules; the temperature continues from the
/// end of scheduler training.
pub fn joint_train(
    cfg: &TrainConfig,
    problem: &Problem,
    train: &[ChannelTensor],
    val: &[ChannelTensor],
    scheduler: SchedulerParams,
    precoder: PrecoderParams,
) -> Result<Trained> {
    cfg.validate()?;
    check_data(train, problem)?;
    Run { cfg, problem, train, val }.run(Phase::Joint, cfg.epochs_joint, cfg.epochs_sched, Some(scheduler), precoder)
}

/// All three phases from fresh weights.
pub fn train_all(cfg: &TrainConfig, problem: &Problem, n_rf: usize, samples: &[ChannelTensor]) -> Result<Trained> {
    let (train, val) = split_validation(samples, cfg.validation_fraction);
    let p = pretrain(cfg, problem, train, val, cfg.new_precoder(n_rf))?;
    let s = train_scheduler(cfg, problem, train, val, cfg.new_scheduler(problem.k_prime), p.precoder)?;
    let mut j = joint_train(cfg, problem, train, val, s.scheduler.expect("scheduler phase keeps a scheduler"), s.precoder)?;
    let mut history = p.history;
    history.extend(s.history);
    history.append(&mut j.history);
    j.history = history;
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_dataset, ScenarioConfig};
    use crate::system::sum_rate;

    fn tiny() -> (ScenarioConfig, Vec<ChannelTensor>, TrainConfig) {
        let sc = ScenarioConfig { m: 2, k: 4, k_prime: 2, n_t: 4, n_r: 1, n_rf: 2, ..ScenarioConfig::default() };
        let data = generate_dataset(&sc, 1, 24);
        let cfg = TrainConfig {
            batch_size: 8,
            epochs_pretrain: 2,
            epochs_sched: 2,
            epochs_joint: 2,
            scheduler_hidden: vec![6],
            precoder_hidden: vec![8],
            validation_fraction: 0.25,
            ..TrainConfig::default()
        };
        (sc, data, cfg)
    }

    #[test]
    fn tau_schedule() {
        let c = TrainConfig::default();
        assert!((c.tau(0) - 0.5).abs() < 1e-15);
        assert!((c.tau(100_000) - 0.1).abs() < 1e-15);
        assert!((c.tau(50) - (0.1 + 0.4 * (-1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn config_round_trip() {
        let c = TrainConfig { variant: Variant::Sgnn, scheduler_hidden: vec![5, 7], seed: 42, ..TrainConfig::default() };
        let back = TrainConfig::from_kv(KeyValues::parse(&c.to_kv()).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(TrainConfig::from_kv(KeyValues::parse("batch_size = 0").unwrap()).is_err());
        assert!(TrainConfig::from_kv(KeyValues::parse("scheduler_hidden = 3,,4").unwrap()).is_err());
        assert!(TrainConfig::from_kv(KeyValues::parse("bogus = 1").unwrap()).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = vec![Tensor::new(&[2], vec![1.0, -1.0]).unwrap()];
        let g = Tensor::new(&[2], vec![0.5, -3.0]).unwrap();
        let mut opt = Adam::new(0.01, [2]);
        opt.step(w.iter_mut(), &[Some(&g)]);
        let d = w[0].data();
        assert!((d[0] - 0.99).abs() < 1e-9 && (d[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn loss_matches_sum_rate() {
        let (sc, data, cfg) = tiny();
        let problem = Problem::from_config(&sc);
        let prec = cfg.new_precoder(2);
        let sched = cfg.new_scheduler(2);
        let h = &data[0];
        let setup = LossSetup {
            selection: Selection::Hard,
            sched_mode: Mode::Eval,
            prec_mode: Mode::Eval,
            sched_trainable: false,
            prec_trainable: false,
            attention: true,
        };
        let mut tape = Tape::new();
        let f = batch_loss(&mut tape, Some(&sched), &prec, &[h], &problem, setup).unwrap();
        let loss = tape.value(f.loss).data()[0];
        let out = policy_rates(Some(&sched), &prec, &[h], &problem, true).unwrap();
        assert!((loss + out.rates[0]).abs() < 1e-9 * out.rates[0].max(1.0), "{loss} vs {}", out.rates[0]);

        // zero precoders give zero loss
        let hs = crate::system::extract_scheduled(h, &crate::baselines::strongest(h, 2)).unwrap();
        let zero = crate::system::HybridSolution::zeros(2, 4, 2, 2, 1);
        assert_eq!(sum_rate(&hs, None, &zero, problem.sigma2).unwrap().sum_rate, 0.0);
    }

    #[test]
    fn soft_path_approaches_hard_path() {
        let (sc, data, cfg) = tiny();
        let problem = Problem::from_config(&sc);
        let prec = cfg.new_precoder(2);
        let sched = cfg.new_scheduler(2);
        let batch: Vec<&ChannelTensor> = data.iter().take(4).collect();
        let run = |selection| {
            let setup = LossSetup {
                selection,
                sched_mode: Mode::Eval,
                prec_mode: Mode::Eval,
                sched_trainable: false,
                prec_trainable: false,
                attention: true,
            };
            let mut tape = Tape::new();
            let f = batch_loss(&mut tape, Some(&sched), &prec, &batch, &problem, setup).unwrap();
            tape.value(f.loss).data()[0]
        };
        let (soft, hard) = (run(Selection::Soft { tau: 1e-4 }), run(Selection::Hard));
        assert!((soft - hard).abs() < 1e-3 * hard.abs(), "{soft} vs {hard}");
    }

    #[test]
    fn phases_run_and_respect_freezing() {
        let (sc, data, cfg) = tiny();
        let problem = Problem::from_config(&sc);
        let (train, val) = split_validation(&data, cfg.validation_fraction);
        assert_eq!((train.len(), val.len()), (18, 6));
        let p = pretrain(&cfg, &problem, train, val, cfg.new_precoder(2)).unwrap();
        assert_eq!(p.history.len(), 3);
        assert!(p.history.windows(2).all(|w| w[1].best_se >= w[0].best_se));
        assert!(p.history[1..].iter().all(|r| r.train_loss.is_finite()));

        let frozen = p.precoder.clone();
        let s = train_scheduler(&cfg, &problem, train, val, cfg.new_scheduler(2), frozen.clone()).unwrap();
        assert_eq!(s.precoder, frozen);
        assert_eq!(s.history[1].tau, Some(0.5));

        let sched = s.scheduler.clone().unwrap();
        let one = TrainConfig { epochs_joint: 1, ..cfg.clone() };
        let run = Run { cfg: &one, problem: &problem, train, val };
        let j = run.run(Phase::Joint, 1, 0, Some(sched.clone()), frozen.clone()).unwrap();
        // compare the raw (not best-selected) state after one epoch through a second run
        let _ = j;
        let mut tape = Tape::new();
        let batch: Vec<&ChannelTensor> = train.iter().take(4).collect();
        let setup = LossSetup {
            selection: Selection::Soft { tau: 0.5 },
            sched_mode: Mode::Train,
            prec_mode: Mode::Train,
            sched_trainable: true,
            prec_trainable: true,
            attention: true,
        };
        let f = batch_loss(&mut tape, Some(&sched), &frozen, &batch, &problem, setup).unwrap();
        let grads = tape.backward(f.loss).unwrap();
        let gp = grads_for(&grads, &f.precoded.bound);
        let gs = grads_for(&grads, &f.scheduled.as_ref().unwrap().bound[0]);
        assert!(grad_norm(&gp) > 0.0 && grad_norm(&gs) > 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let (sc, data, cfg) = tiny();
        let problem = Problem::from_config(&sc);
        let a = train_all(&cfg, &problem, 2, &data).unwrap();
        let b = train_all(&cfg, &problem, 2, &data).unwrap();
        assert_eq!(a.precoder, b.precoder);
        assert_eq!(a.scheduler, b.scheduler);
        assert_eq!(epochs_csv(&a.history).render(), epochs_csv(&b.history).render());
    }
}
