//! Hard-path evaluation of trained modules, baseline references,
//! reports and size-generalization sweeps.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::{
    digital_zf_precode, exhaustive, greedy, hybrid_zf_precode, schedule_rate, strongest, BaselineError, Precode,
};
use crate::channel::{generate_dataset, ChannelTensor, ScenarioConfig};
use crate::flops::{precoder_params, scheduler_params, Dims};
use crate::gnn::Mode;
use crate::precoder::{precode_samples, PrecoderParams};
use crate::report::{num, Csv};
use crate::scheduler::{schedule, scheduler_input, ScheduleOptions, SchedulerParams, Selection};
use crate::system::{check_constraints, extract_scheduled, sum_rate, ScheduleBasis, SystemError};
use crate::tensor::{Tape, TensorError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("incompatible model: {0}")]
    Incompatible(String),
    #[error("no samples to evaluate")]
    Empty,
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Chunk size of evaluation forwards.
pub const EVAL_CHUNK: usize = 100;

/// The parts of a scenario the policies need.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Problem {
    pub k_prime: usize,
    pub p_tot: f64,
    pub sigma2: f64,
}

impl Problem {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self { k_prime: cfg.k_prime, p_tot: cfg.p_tot_watts(), sigma2: cfg.noise_power_watts() }
    }
}

// ── Learned policy ──

/// Hard (test-path) schedules of the scheduler network.
pub fn hard_schedules(params: &SchedulerParams, samples: &[&ChannelTensor], k_prime: usize) -> Result<Vec<ScheduleBasis>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let (x, grid) = scheduler_input(chunk)?;
        let mut tape = Tape::new();
        let x = tape.constant(x);
        let opts = ScheduleOptions { k_prime, selection: Selection::Hard, mode: Mode::Eval, trainable: false };
        let s = schedule(&mut tape, params, x, grid, opts)?;
        out.extend(s.bases(&tape));
    }
    Ok(out)
}

/// Users passed to the precoder: the scheduler's choice, the strongest
/// `K'` when no scheduler is given, or everyone when `K ≤ K'`.
pub fn select(sched: Option<&SchedulerParams>, samples: &[&ChannelTensor], k_prime: usize) -> Result<Vec<ScheduleBasis>> {
    let k = samples.first().ok_or(EvalError::Empty)?.k;
    if k <= k_prime {
        let all: Vec<usize> = (0..k).collect();
        return samples
            .iter()
            .map(|h| Ok(ScheduleBasis::from_indices(k, &vec![all.clone(); h.m])?))
            .collect();
    }
    match sched {
        Some(p) => hard_schedules(p, samples, k_prime),
        None => Ok(samples.iter().map(|h| strongest(h, k_prime)).collect()),
    }
}

/// Per-sample outcome of a policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub rates: Vec<f64>,
    /// Largest constraint residual over the samples.
    pub residual: f64,
    /// Samples where a head projection hit its singular guard.
    pub singular: usize,
}

/// Exact sum rates of the learned policy on the hard path.
pub fn policy_rates(
    sched: Option<&SchedulerParams>,
    prec: &PrecoderParams,
    samples: &[&ChannelTensor],
    problem: &Problem,
    attention: bool,
) -> Result<Outcome> {
    if samples.is_empty() {
        return Err(EvalError::Empty);
    }
    prec.validate().map_err(|e| EvalError::Incompatible(e.to_string()))?;
    if let Some(s) = sched {
        s.validate().map_err(|e| EvalError::Incompatible(e.to_string()))?;
    }
    let bases = select(sched, samples, problem.k_prime)?;
    let mut out = Outcome { rates: Vec::with_capacity(samples.len()), residual: 0.0, singular: 0 };
    for (chunk, bchunk) in samples.chunks(EVAL_CHUNK).zip(bases.chunks(EVAL_CHUNK)) {
        let scheduled: Vec<ChannelTensor> =
            chunk.iter().zip(bchunk).map(|(h, b)| extract_scheduled(h, b)).collect::<std::result::Result<_, _>>()?;
        let refs: Vec<&ChannelTensor> = scheduled.iter().collect();
        let (sols, singular) = precode_samples(prec, &refs, problem.p_tot, attention)?;
        if singular {
            out.singular += 1;
        }
        for (h, sol) in scheduled.iter().zip(&sols) {
            out.rates.push(sum_rate(h, None, sol, problem.sigma2)?.sum_rate);
            out.residual = out.residual.max(check_constraints(sol, problem.p_tot).max());
        }
    }
    Ok(out)
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

// ── Baselines ──

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    /// Strongest `K'` users, hybrid ZF.
    StrongestZf,
    /// Greedy scheduling, hybrid ZF.
    GreedyZf,
    /// Exhaustive scheduling, fully digital ZF with equal power.
    ExhaustiveDigitalZf,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::StrongestZf, Baseline::GreedyZf, Baseline::ExhaustiveDigitalZf];
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::StrongestZf => "strongest-zf",
            Self::GreedyZf => "greedy-zf",
            Self::ExhaustiveDigitalZf => "exhaustive-dzf",
        })
    }
}

impl FromStr for Baseline {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|b| b.to_string() == s).ok_or_else(|| format!("unknown baseline {s:?}"))
    }
}

/// Sum rate of one baseline on one sample.
pub fn baseline_rate(b: Baseline, h: &ChannelTensor, problem: &Problem) -> Result<f64> {
    let Problem { k_prime, p_tot, sigma2 } = *problem;
    let hybrid: &Precode = &hybrid_zf_precode;
    let digital: &Precode = &digital_zf_precode;
    Ok(match b {
        Baseline::StrongestZf => schedule_rate(h, &strongest(h, k_prime).indices(), hybrid, p_tot, sigma2)?,
        Baseline::GreedyZf => {
            let g = greedy(h, k_prime, hybrid, p_tot, sigma2)?;
            schedule_rate(h, &g.indices(), hybrid, p_tot, sigma2)?
        }
        Baseline::ExhaustiveDigitalZf => exhaustive(h, k_prime, digital, p_tot, sigma2, true)?.1,
    })
}

/// Per-sample baseline rates, in sample order.
pub fn baseline_rates(b: Baseline, samples: &[&ChannelTensor], problem: &Problem) -> Result<Vec<f64>> {
    samples.par_iter().map(|h| baseline_rate(b, h, problem)).collect()
}

// ── Reports ──

pub const EVAL_SCHEMA: &str = "wbgnn-eval v1";

/// One evaluated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub label: String,
    pub m: usize,
    pub k: usize,
    pub k_prime: usize,
    pub n_t: usize,
    pub n_r: usize,
    pub samples: usize,
    pub se: f64,
    /// `(baseline, mean SE, policy SE / baseline SE)`.
    pub baselines: Vec<(Baseline, f64, f64)>,
    pub residual: f64,
    pub singular: usize,
    pub seconds: f64,
    pub flops: u128,
}

impl EvalRow {
    pub fn ratio(&self, b: Baseline) -> Option<f64> {
        self.baselines.iter().find(|x| x.0 == b).map(|x| x.2)
    }

    pub fn baseline_se(&self, b: Baseline) -> Option<f64> {
        self.baselines.iter().find(|x| x.0 == b).map(|x| x.1)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn csv(&self) -> Csv {
        let mut cols = vec!["label", "m", "k", "k_prime", "n_t", "n_r", "samples", "se"];
        let base: Vec<String> = Baseline::ALL
            .iter()
            .flat_map(|b| [format!("se_{b}"), format!("ratio_{b}")])
            .collect();
        cols.extend(base.iter().map(String::as_str));
        cols.extend(["max_residual", "singular", "seconds", "flops"]);
        let mut csv = Csv::new(EVAL_SCHEMA, &cols);
        for r in &self.rows {
            let mut row = vec![
                r.label.clone(),
                r.m.to_string(),
                r.k.to_string(),
                r.k_prime.to_string(),
                r.n_t.to_string(),
                r.n_r.to_string(),
                r.samples.to_string(),
                num(r.se),
            ];
            for b in Baseline::ALL {
                match r.baselines.iter().find(|x| x.0 == b) {
                    Some(&(_, se, ratio)) => row.extend([num(se), num(ratio)]),
                    None => row.extend(["".to_string(), "".to_string()]),
                }
            }
            row.extend([num(r.residual), r.singular.to_string(), format!("{:.3}", r.seconds), r.flops.to_string()]);
            csv.push(row);
        }
        csv
    }
}

/// Evaluates the learned policy and the requested baselines on `samples`.
/// Without a scheduler the strongest users are precoded.
///
/// `timed = false` writes zero seconds so that reports are reproducible
/// byte for byte.
pub fn evaluate(
    label: &str,
    sched: Option<&SchedulerParams>,
    prec: &PrecoderParams,
    samples: &[ChannelTensor],
    problem: &Problem,
    baselines: &[Baseline],
    attention: bool,
    timed: bool,
) -> Result<EvalRow> {
    let first = samples.first().ok_or(EvalError::Empty)?;
    let (m, k, n_r, n_t) = first.dims();
    if samples.iter().any(|h| h.dims() != (m, k, n_r, n_t)) {
        return Err(EvalError::Incompatible("samples differ in dimensions".into()));
    }
    let refs: Vec<&ChannelTensor> = samples.iter().collect();
    let start = Instant::now();
    let out = policy_rates(sched, prec, &refs, problem, attention)?;
    let seconds = if timed { start.elapsed().as_secs_f64() } else { 0.0 };
    let se = mean(&out.rates);
    let mut rows = Vec::new();
    for &b in baselines {
        let r = mean(&baseline_rates(b, &refs, problem)?);
        rows.push((b, r, if r > 0.0 { se / r } else { f64::NAN }));
    }
    let kp = problem.k_prime.min(k);
    let dims = Dims::new(m, k, kp, n_t, n_r);
    let sched_flops = match sched {
        Some(s) if k > problem.k_prime => scheduler_params(dims, s).unwrap_or(0),
        _ => 0,
    };
    let flops = sched_flops + precoder_params(dims, prec).unwrap_or(0);
    Ok(EvalRow {
        label: label.into(),
        m,
        k,
        k_prime: problem.k_prime,
        n_t,
        n_r,
        samples: samples.len(),
        se,
        baselines: rows,
        residual: out.residual,
        singular: out.singular,
        seconds,
        flops,
    })
}

// ── Sweeps ──

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    M,
    K,
    Nt,
    Nr,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::M => "M",
            Self::K => "K",
            Self::Nt => "NT",
            Self::Nr => "NR",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "M" => Ok(Self::M),
            "K" => Ok(Self::K),
            "NT" | "N_T" => Ok(Self::Nt),
            "NR" | "N_R" => Ok(Self::Nr),
            _ => Err(format!("unknown sweep axis {s:?} (M, K, NT, NR)")),
        }
    }
}

impl SweepAxis {
    pub fn apply(self, cfg: &ScenarioConfig, value: usize) -> ScenarioConfig {
        let mut c = cfg.clone();
        match self {
            Self::M => c.m = value,
            Self::K => c.k = value,
            Self::Nt => c.n_t = value,
            Self::Nr => c.n_r = value,
        }
        c
    }
}

/// Evaluates at every `value` of `axis` on freshly generated test sets
/// (seed `seed`, `samples` each), reusing the same trained weights.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    sched: Option<&SchedulerParams>,
    prec: &PrecoderParams,
    base: &ScenarioConfig,
    axis: SweepAxis,
    values: &[usize],
    samples: usize,
    seed: u64,
    baselines: &[Baseline],
    attention: bool,
    timed: bool,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for &v in values {
        let cfg = axis.apply(base, v);
        cfg.validate().map_err(|e| EvalError::Incompatible(e.to_string()))?;
        let data = generate_dataset(&cfg, seed, samples);
        let row = evaluate(&format!("{axis}={v}"), sched, prec, &data, &Problem::from_config(&cfg), baselines, attention, timed)?;
        report.rows.push(row);
    }
    Ok(report)
}
