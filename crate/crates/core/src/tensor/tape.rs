use std::collections::BTreeMap;

use super::ops;
use super::{check_rank, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variance floor of [`Primitive::Standardize`].
pub const STANDARDIZE_EPS: f64 = 1e-5;

/// Per-channel statistics used by [`Primitive::Standardize`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels] }
    }
}

/// The primitive set. Binary elementwise kinds accept equal shapes or a
/// single-element operand on either side; any other expansion goes through
/// an explicit [`Primitive::Broadcast`].
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `x[..., cin] · w[cout, cin]ᵀ -> [..., cout]`.
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    /// Sum over one axis, kept with size 1.
    Sum { axis: usize },
    /// Mean over one axis, kept with size 1.
    Mean { axis: usize },
    /// Expand size-1 axes to `shape` (same rank).
    Broadcast { shape: Vec<usize> },
    /// Reinterpret the row-major buffer with a new shape.
    Reshape { shape: Vec<usize> },
    /// Concatenate two tensors along the last axis.
    ConcatChannel,
    Relu,
    Tanh,
    Log,
    Exp,
    /// Softmax over the last axis at temperature `tau`.
    Softmax { tau: f64 },
    Square,
    Sqrt,
    Reciprocal,
    Abs,
    /// Per-channel (last axis) standardization pooled over every other
    /// position. `None` uses the statistics of the input itself; `Some`
    /// applies fixed running statistics.
    Standardize { running: Option<ChannelStats> },
}

impl Primitive {
    fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::Sum { .. } => "sum",
            Primitive::Mean { .. } => "mean",
            Primitive::Broadcast { .. } => "broadcast",
            Primitive::Reshape { .. } => "reshape",
            Primitive::ConcatChannel => "concat",
            Primitive::Relu => "relu",
            Primitive::Tanh => "tanh",
            Primitive::Log => "log",
            Primitive::Exp => "exp",
            Primitive::Softmax { .. } => "softmax",
            Primitive::Square => "square",
            Primitive::Sqrt => "sqrt",
            Primitive::Reciprocal => "reciprocal",
            Primitive::Abs => "abs",
            Primitive::Standardize { .. } => "standardize",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::MatMul
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::ConcatChannel => 2,
            _ => 1,
        }
    }
}

enum Saved {
    None,
    Standardize { xhat: Vec<f64>, inv_std: Vec<f64>, batch: Option<ChannelStats> },
}

struct Node {
    value: Tensor,
    prim: Option<Primitive>,
    inputs: Vec<Var>,
    requires_grad: bool,
    saved: Saved,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug, Default)]
pub struct Gradients {
    map: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.map.get(&var)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.map.remove(&var)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Records primitive applications in topological order for one backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            prim: None,
            inputs: Vec::new(),
            requires_grad,
            saved: Saved::None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that gradients flow into.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as data.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Statistics a training-mode [`Primitive::Standardize`] computed.
    pub fn batch_stats(&self, var: Var) -> Option<&ChannelStats> {
        match &self.nodes[var.0].saved {
            Saved::Standardize { batch, .. } => batch.as_ref(),
            Saved::None => None,
        }
    }

    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if inputs.len() != prim.arity() {
            return Err(TensorError::ShapeMismatch {
                op: prim.name(),
                detail: format!("expected {} inputs, got {}", prim.arity(), inputs.len()),
            });
        }
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(TensorError::UnknownVar(v.0));
            }
        }
        let (value, saved) = self.forward(&prim, inputs)?;
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: prim.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, prim: Some(prim), inputs: inputs.to_vec(), requires_grad, saved });
        Ok(Var(self.nodes.len() - 1))
    }

    fn forward(&self, prim: &Primitive, inputs: &[Var]) -> Result<(Tensor, Saved)> {
        let x = &self.nodes[inputs[0].0].value;
        let name = prim.name();
        let unary = |f: &dyn Fn(f64) -> f64| Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|&v| f(v)).collect(),
        };
        let out = match prim {
            Primitive::MatMul => {
                let w = &self.nodes[inputs[1].0].value;
                let cin = *x.shape.last().unwrap_or(&0);
                if w.rank() != 2 || w.shape[1] != cin {
                    return Err(TensorError::ShapeMismatch {
                        op: name,
                        detail: format!("x {:?} against w {:?}", x.shape, w.shape),
                    });
                }
                let cout = w.shape[0];
                let rows = x.numel() / cin.max(1);
                let mut shape = x.shape.clone();
                *shape.last_mut().unwrap() = cout;
                Tensor { shape, data: ops::matmul_rows(&x.data, &w.data, rows, cin, cout) }
            }
            Primitive::Add | Primitive::Sub | Primitive::Mul => {
                let y = &self.nodes[inputs[1].0].value;
                let f = match prim {
                    Primitive::Add => |a: f64, b: f64| a + b,
                    Primitive::Sub => |a: f64, b: f64| a - b,
                    _ => |a: f64, b: f64| a * b,
                };
                binary(name, x, y, f)?
            }
            Primitive::Scale(c) => unary(&|v| c * v),
            Primitive::Sum { axis } | Primitive::Mean { axis } => {
                let axis = *axis;
                if axis >= x.rank() {
                    return Err(TensorError::ShapeMismatch {
                        op: name,
                        detail: format!("axis {axis} on shape {:?}", x.shape),
                    });
                }
                let (outer, n, inner) = ops::split_axis(&x.shape, axis);
                let mut data = ops::sum_axis(&x.data, outer, n, inner);
                if matches!(prim, Primitive::Mean { .. }) {
                    let inv = 1.0 / n as f64;
                    data.iter_mut().for_each(|v| *v *= inv);
                }
                let mut shape = x.shape.clone();
                shape[axis] = 1;
                Tensor { shape, data }
            }
            Primitive::Broadcast { shape } => {
                check_rank(shape)?;
                let ok = shape.len() == x.rank()
                    && x.shape.iter().zip(shape).all(|(&s, &d)| s == d || s == 1);
                if !ok {
                    return Err(TensorError::ShapeMismatch {
                        op: name,
                        detail: format!("{:?} -> {shape:?}", x.shape),
                    });
                }
                Tensor { shape: shape.clone(), data: ops::broadcast(&x.data, &x.shape, shape) }
            }
            Primitive::Reshape { shape } => x.clone().reshaped(shape)?,
            Primitive::ConcatChannel => {
                let y = &self.nodes[inputs[1].0].value;
                let lead_ok = x.rank() == y.rank()
                    && x.rank() > 0
                    && x.shape[..x.rank() - 1] == y.shape[..y.rank() - 1];
                if !lead_ok {
                    return Err(TensorError::ShapeMismatch {
                        op: name,
                        detail: format!("{:?} with {:?}", x.shape, y.shape),
                    });
                }
                let (ca, cb) = (x.shape[x.rank() - 1], y.shape[y.rank() - 1]);
                let mut data = Vec::with_capacity(x.numel() + y.numel());
                for (ra, rb) in x.data.chunks(ca.max(1)).zip(y.data.chunks(cb.max(1))) {
                    data.extend_from_slice(ra);
                    data.extend_from_slice(rb);
                }
                let mut shape = x.shape.clone();
                *shape.last_mut().unwrap() = ca + cb;
                Tensor { shape, data }
            }
            Primitive::Relu => unary(&|v| v.max(0.0)),
            Primitive::Tanh => unary(&f64::tanh),
            Primitive::Log => {
                if let Some(bad) = x.data.iter().find(|&&v| v <= 0.0) {
                    return Err(TensorError::Domain { op: name, detail: format!("log({bad})") });
                }
                unary(&f64::ln)
            }
            Primitive::Exp => unary(&f64::exp),
            Primitive::Softmax { tau } => {
                if !(*tau > 0.0) {
                    return Err(TensorError::InvalidTemperature(*tau));
                }
                let n = *x.shape.last().unwrap_or(&1);
                Tensor { shape: x.shape.clone(), data: ops::softmax_rows(&x.data, n, *tau) }
            }
            Primitive::Square => unary(&|v| v * v),
            Primitive::Sqrt => {
                if let Some(bad) = x.data.iter().find(|&&v| v < 0.0) {
                    return Err(TensorError::Domain { op: name, detail: format!("sqrt({bad})") });
                }
                unary(&f64::sqrt)
            }
            Primitive::Reciprocal => {
                if x.data.iter().any(|&v| v == 0.0) {
                    return Err(TensorError::Domain { op: name, detail: "1/0".into() });
                }
                unary(&|v| 1.0 / v)
            }
            Primitive::Abs => unary(&f64::abs),
            Primitive::Standardize { running } => {
                let c = *x.shape.last().unwrap_or(&1);
                let (stats, batch) = match running {
                    Some(s) => {
                        if s.mean.len() != c || s.var.len() != c {
                            return Err(TensorError::ShapeMismatch {
                                op: name,
                                detail: format!("{} running channels for {c}", s.mean.len()),
                            });
                        }
                        (s.clone(), None)
                    }
                    None => {
                        let (mean, var) = ops::channel_stats(&x.data, c);
                        let s = ChannelStats { mean, var };
                        (s.clone(), Some(s))
                    }
                };
                let inv_std: Vec<f64> =
                    stats.var.iter().map(|v| 1.0 / (v + STANDARDIZE_EPS).sqrt()).collect();
                let mut xhat = Vec::with_capacity(x.numel());
                for row in x.data.chunks(c) {
                    for ((v, m), r) in row.iter().zip(&stats.mean).zip(&inv_std) {
                        xhat.push((v - m) * r);
                    }
                }
                let out = Tensor { shape: x.shape.clone(), data: xhat.clone() };
                return Ok((out, Saved::Standardize { xhat, inv_std, batch }));
            }
        };
        Ok((out, Saved::None))
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::UnknownVar(loss.0));
        }
        let loss_shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(prim) = &node.prim else {
                grads[id] = Some(g);
                continue;
            };
            let input_grads = self.vjp(node, prim, &g);
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }

        let mut map = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if node.prim.is_none() && node.requires_grad {
                let data = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                map.insert(Var(id), Tensor { shape: node.value.shape.clone(), data });
            }
        }
        Ok(Gradients { map })
    }

    fn vjp(&self, node: &Node, prim: &Primitive, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let xin = &self.nodes[node.inputs[0].0].value;
        let x = &xin.data;
        let out = &node.value.data;
        let wants = |k: usize| self.nodes[node.inputs[k].0].requires_grad;
        let map1 = |f: &dyn Fn(usize) -> f64| -> Vec<Option<Vec<f64>>> {
            vec![Some((0..g.len()).map(f).collect())]
        };
        match prim {
            Primitive::MatMul => {
                let w = &self.nodes[node.inputs[1].0].value;
                let (cout, cin) = (w.shape[0], w.shape[1]);
                let rows = xin.numel() / cin.max(1);
                let dx = wants(0).then(|| ops::matmul_grad_input(g, &w.data, rows, cin, cout));
                let dw = wants(1).then(|| ops::matmul_grad_weight(g, x, rows, cin, cout));
                vec![dx, dw]
            }
            Primitive::Add | Primitive::Sub | Primitive::Mul => {
                let y = &self.nodes[node.inputs[1].0].value.data;
                let n = g.len();
                let xi = |i: usize| if x.len() == 1 { x[0] } else { x[i] };
                let yi = |i: usize| if y.len() == 1 { y[0] } else { y[i] };
                let (gx, gy): (Vec<f64>, Vec<f64>) = match prim {
                    Primitive::Add => (g.to_vec(), g.to_vec()),
                    Primitive::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                    _ => ((0..n).map(|i| g[i] * yi(i)).collect(), (0..n).map(|i| g[i] * xi(i)).collect()),
                };
                let fold = |v: Vec<f64>, len: usize| {
                    if len == 1 && n != 1 {
                        vec![v.iter().sum()]
                    } else {
                        v
                    }
                };
                vec![Some(fold(gx, x.len())), Some(fold(gy, y.len()))]
            }
            Primitive::Scale(c) => map1(&|i| c * g[i]),
            Primitive::Sum { axis } | Primitive::Mean { axis } => {
                let (outer, n, inner) = ops::split_axis(&xin.shape, *axis);
                let mut dx = ops::repeat_axis(g, outer, n, inner);
                if matches!(prim, Primitive::Mean { .. }) {
                    let inv = 1.0 / n as f64;
                    dx.iter_mut().for_each(|v| *v *= inv);
                }
                vec![Some(dx)]
            }
            Primitive::Broadcast { shape } => vec![Some(ops::unbroadcast(g, &xin.shape, shape))],
            Primitive::Reshape { .. } => vec![Some(g.to_vec())],
            Primitive::ConcatChannel => {
                let y = &self.nodes[node.inputs[1].0].value;
                let ca = *xin.shape.last().unwrap();
                let cb = *y.shape.last().unwrap();
                let mut ga = Vec::with_capacity(xin.numel());
                let mut gb = Vec::with_capacity(y.numel());
                for row in g.chunks(ca + cb) {
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..]);
                }
                vec![Some(ga), Some(gb)]
            }
            Primitive::Relu => map1(&|i| if x[i] > 0.0 { g[i] } else { 0.0 }),
            Primitive::Tanh => map1(&|i| g[i] * (1.0 - out[i] * out[i])),
            Primitive::Log => map1(&|i| g[i] / x[i]),
            Primitive::Exp => map1(&|i| g[i] * out[i]),
            Primitive::Softmax { tau } => {
                let n = *xin.shape.last().unwrap_or(&1);
                vec![Some(ops::softmax_rows_grad(out, g, n, *tau))]
            }
            Primitive::Square => map1(&|i| 2.0 * x[i] * g[i]),
            Primitive::Sqrt => map1(&|i| g[i] * 0.5 / out[i]),
            Primitive::Reciprocal => map1(&|i| -g[i] * out[i] * out[i]),
            Primitive::Abs => map1(&|i| g[i] * sign(x[i])),
            Primitive::Standardize { .. } => {
                let Saved::Standardize { xhat, inv_std, batch } = &node.saved else {
                    unreachable!("standardize node without saved state")
                };
                let c = inv_std.len();
                if batch.is_none() {
                    let mut dx = vec![0.0; g.len()];
                    for (d, gr) in dx.chunks_mut(c).zip(g.chunks(c)) {
                        for ((dv, gv), r) in d.iter_mut().zip(gr).zip(inv_std) {
                            *dv = gv * r;
                        }
                    }
                    return vec![Some(dx)];
                }
                let positions = (g.len() / c) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (gr, xr) in g.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        sum_g[j] += gr[j];
                        sum_gx[j] += gr[j] * xr[j];
                    }
                }
                let mut dx = vec![0.0; g.len()];
                for ((d, gr), xr) in dx.chunks_mut(c).zip(g.chunks(c)).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        d[j] = inv_std[j] / positions
                            * (positions * gr[j] - sum_g[j] - xr[j] * sum_gx[j]);
                    }
                }
                vec![Some(dx)]
            }
        }
    }

    // ── convenience wrappers ──────────────────────────────────────────

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[x, w])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[x])
    }
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let s = self.constant(Tensor::scalar(c));
        self.add(x, s)
    }
    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Sum { axis }, &[x])
    }
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(Primitive::Mean { axis }, &[x])
    }
    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        self.apply(Primitive::Broadcast { shape: shape.to_vec() }, &[x])
    }
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(x) == shape {
            return Ok(x);
        }
        self.apply(Primitive::Reshape { shape: shape.to_vec() }, &[x])
    }
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::ConcatChannel, &[a, b])
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[x])
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[x])
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[x])
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[x])
    }
    pub fn softmax(&mut self, x: Var, tau: f64) -> Result<Var> {
        self.apply(Primitive::Softmax { tau }, &[x])
    }
    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Square, &[x])
    }
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sqrt, &[x])
    }
    pub fn reciprocal(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Reciprocal, &[x])
    }
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Abs, &[x])
    }
    pub fn standardize(&mut self, x: Var, running: Option<ChannelStats>) -> Result<Var> {
        self.apply(Primitive::Standardize { running }, &[x])
    }

    /// Sum over several axes (each kept with size 1), applied in the given order.
    pub fn sum_axes(&mut self, mut x: Var, axes: &[usize]) -> Result<Var> {
        for &axis in axes {
            x = self.sum(x, axis)?;
        }
        Ok(x)
    }

    /// Mean over several axes (each kept with size 1), applied in the given order.
    pub fn mean_axes(&mut self, mut x: Var, axes: &[usize]) -> Result<Var> {
        for &axis in axes {
            x = self.mean(x, axis)?;
        }
        Ok(x)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn binary(op: &'static str, x: &Tensor, y: &Tensor, f: fn(f64, f64) -> f64) -> Result<Tensor> {
    if x.shape == y.shape {
        let data = x.data.iter().zip(&y.data).map(|(&a, &b)| f(a, b)).collect();
        return Ok(Tensor { shape: x.shape.clone(), data });
    }
    if y.numel() == 1 {
        let b = y.data[0];
        return Ok(Tensor { shape: x.shape.clone(), data: x.data.iter().map(|&a| f(a, b)).collect() });
    }
    if x.numel() == 1 {
        let a = x.data[0];
        return Ok(Tensor { shape: y.shape.clone(), data: y.data.iter().map(|&b| f(a, b)).collect() });
    }
    Err(TensorError::ShapeMismatch { op, detail: format!("{:?} vs {:?}", x.shape, y.shape) })
}
