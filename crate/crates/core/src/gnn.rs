//! Building blocks shared by the scheduler and precoder networks: weight
//! storage, initialization, batch standardization bookkeeping and the
//! linear five-term aggregation over the `(rb, user, user-antenna,
//! bs-antenna)` hyper-edge grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{ChannelStats, Result, Tape, Tensor, TensorError, Var};

/// Momentum of the running normalization statistics.
pub const NORM_MOMENTUM: f64 = 0.9;

/// Training uses batch statistics (and updates the running ones); eval
/// applies the running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One layer: a list of `[out, in]` matrices and, for hidden layers, the
/// running statistics of the standardization that precedes the ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Vec<Tensor>,
    pub norm: Option<ChannelStats>,
}

impl Layer {
    /// `count` matrices drawn from `U(-a, a)`, `a = sqrt(1 / c_in)`.
    pub fn init(rng: &mut ChaCha8Rng, count: usize, c_in: usize, c_out: usize, hidden: bool) -> Self {
        let a = (1.0 / c_in as f64).sqrt();
        let weights = (0..count)
            .map(|_| {
                let data = (0..c_in * c_out).map(|_| rng.random_range(-a..a)).collect();
                Tensor::new(&[c_out, c_in], data).expect("consistent shape")
            })
            .collect();
        Self { weights, norm: hidden.then(|| ChannelStats::identity(c_out)) }
    }

    pub fn in_width(&self) -> usize {
        self.weights[0].shape()[1]
    }

    pub fn out_width(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn is_hidden(&self) -> bool {
        self.norm.is_some()
    }
}

/// A stack of layers with a fixed number of matrices per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    /// Widths `[c_1, ..., c_L]` give `L - 1` layers; all but the last are hidden.
    pub fn new(seed: u64, widths: &[usize], per_layer: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|l| Layer::init(&mut rng, per_layer, widths[l], widths[l + 1], l + 1 < n))
            .collect();
        Self { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(Layer::in_width).collect();
        if let Some(last) = self.layers.last() {
            w.push(last.out_width());
        }
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.weights).map(Tensor::numel).sum()
    }

    /// Every matrix in declaration order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.weights.iter())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut())
    }

    /// Places the weights on `tape`, as parameters when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound {
            layers: self
                .layers
                .iter()
                .map(|l| l.weights.iter().map(|w| tape.leaf(w.clone(), trainable)).collect())
                .collect(),
            norm_outputs: Vec::new(),
        }
    }

    /// Folds the batch statistics recorded during a training forward into
    /// the running statistics.
    pub fn update_running(&mut self, tape: &Tape, bound: &Bound) {
        for &(l, var) in &bound.norm_outputs {
            let (Some(batch), Some(running)) = (tape.batch_stats(var), self.layers[l].norm.as_mut()) else {
                continue;
            };
            for (r, b) in running.mean.iter_mut().zip(&batch.mean) {
                *r = NORM_MOMENTUM * *r + (1.0 - NORM_MOMENTUM) * b;
            }
            for (r, b) in running.var.iter_mut().zip(&batch.var) {
                *r = NORM_MOMENTUM * *r + (1.0 - NORM_MOMENTUM) * b;
            }
        }
    }
}

/// Tape handles of a network's weights for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    pub layers: Vec<Vec<Var>>,
    /// `(layer, var)` of every standardization applied in training mode.
    pub norm_outputs: Vec<(usize, Var)>,
}

impl Bound {
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flatten().copied()
    }
}

/// Sizes of the hyper-edge grid `[B, M, K·N_R, N_T, C]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n_r: usize,
    pub n_t: usize,
}

impl Grid {
    pub fn shape(&self, c: usize) -> [usize; 5] {
        [self.batch, self.m, self.k * self.n_r, self.n_t, c]
    }

    fn grouped(&self, c: usize) -> [usize; 5] {
        [self.batch * self.m, self.k, self.n_r, self.n_t, c]
    }
}

/// `S - x` scaled by `1/n`, where `S` is the sum of `x` over `axis`
/// broadcast back: the mean over the other indices with the `1/n`
/// normalizer. Exactly zero when the axis has one element.
fn others(tape: &mut Tape, x: Var, axis: usize, n: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let s = tape.sum(x, axis)?;
    let s = tape.broadcast(s, &shape)?;
    let d = tape.sub(s, x)?;
    tape.scale(d, 1.0 / n as f64)
}

/// Sum over the antennas of each user group, broadcast back over them.
fn group_sum(tape: &mut Tape, x: Var, grid: Grid) -> Result<Var> {
    let c = *tape.shape(x).last().unwrap();
    let g = tape.reshape(x, &grid.grouped(c))?;
    let s = tape.sum(g, 2)?;
    let s = tape.broadcast(s, &grid.grouped(c))?;
    tape.reshape(s, &grid.shape(c))
}

/// The five aggregation inputs `[self, other RBs, other users, same user
/// other antennas, other BS antennas]`, each `[B, M, K·N_R, N_T, C]`.
pub fn aggregation_terms(tape: &mut Tape, x: Var, grid: Grid) -> Result<[Var; 5]> {
    let c = *tape.shape(x).last().unwrap();
    if tape.shape(x) != grid.shape(c) {
        return Err(TensorError::ShapeMismatch {
            op: "aggregate",
            detail: format!("{:?} on grid {grid:?}", tape.shape(x)),
        });
    }
    let rb = others(tape, x, 1, grid.m)?;
    // all rows minus the own group, over K·N_R
    let shape = grid.shape(c);
    let all = tape.sum(x, 2)?;
    let all = tape.broadcast(all, &shape)?;
    let own = group_sum(tape, x, grid)?;
    let users = tape.sub(all, own)?;
    let users = tape.scale(users, 1.0 / (grid.k * grid.n_r) as f64)?;
    let ant = tape.sub(own, x)?;
    let ant = tape.scale(ant, 1.0 / grid.n_r as f64)?;
    let bs = others(tape, x, 3, grid.n_t)?;
    Ok([x, rb, users, ant, bs])
}

/// `Σ_j W_j · terms_j` via one matmul over the concatenated channels.
pub fn combine(tape: &mut Tape, terms: &[Var], weights: &[Var]) -> Result<Var> {
    debug_assert_eq!(terms.len(), weights.len());
    let mut x = terms[0];
    let mut w = weights[0];
    for (&t, &wj) in terms[1..].iter().zip(&weights[1..]) {
        x = tape.concat(x, t)?;
        w = tape.concat(w, wj)?;
    }
    tape.matmul(x, w)
}

/// Standardize and ReLU for hidden layers, identity for the last.
pub fn activate(tape: &mut Tape, net: &Network, bound: &mut Bound, layer: usize, pre: Var, mode: Mode) -> Result<Var> {
    let Some(running) = &net.layers[layer].norm else {
        return Ok(pre);
    };
    let normed = match mode {
        Mode::Train => {
            let v = tape.standardize(pre, None)?;
            bound.norm_outputs.push((layer, v));
            v
        }
        Mode::Eval => tape.standardize(pre, Some(running.clone()))?,
    };
    tape.relu(normed)
}

/// Checks that `net` maps `c_in` input channels to `c_out` outputs.
pub fn check_widths(net: &Network, c_in: usize, c_out: usize, per_layer: usize) -> Result<()> {
    let w = net.widths();
    let bad = w.len() < 2
        || w[0] != c_in
        || *w.last().unwrap() != c_out
        || net.layers.iter().any(|l| l.weights.len() != per_layer)
        || net
            .layers
            .iter()
            .any(|l| l.weights.iter().any(|t| t.shape() != [l.out_width(), l.in_width()]));
    if bad {
        return Err(TensorError::ShapeMismatch {
            op: "network",
            detail: format!("widths {w:?}, need {c_in} in and {c_out} out with {per_layer} matrices per layer"),
        });
    }
    Ok(())
}
