//! Dynamically recorded computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is a tape: every op appends a node holding its output value and
//! the operand handles needed by its backward rule. Nodes are only ever
//! appended, so operands always precede their consumers and a single reverse
//! sweep visits each node once. Gradients flowing into a shared operand are
//! summed.
//!
//! Graphs are rebuilt per training step and are not shared across threads.

use std::collections::HashMap;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::nnops::{batch_norm, conv, shuffle, weight_norm};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    AddChannel,
    Scale,
    AddScalar,
    Relu,
    Abs,
    Sum,
    Mean,
    Conv2d,
    PixelShuffle,
    PixelUnshuffle,
    WeightNorm,
    BatchNormTrain,
    BatchNormInfer,
}

impl OpKind {
    pub const ALL: [OpKind; 17] = [
        OpKind::Leaf,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::AddChannel,
        OpKind::Scale,
        OpKind::AddScalar,
        OpKind::Relu,
        OpKind::Abs,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Conv2d,
        OpKind::PixelShuffle,
        OpKind::PixelUnshuffle,
        OpKind::WeightNorm,
        OpKind::BatchNormTrain,
        OpKind::BatchNormInfer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddChannel => "add_channel",
            OpKind::Scale => "scale",
            OpKind::AddScalar => "add_scalar",
            OpKind::Relu => "relu",
            OpKind::Abs => "abs",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Conv2d => "conv2d",
            OpKind::PixelShuffle => "pixel_shuffle",
            OpKind::PixelUnshuffle => "pixel_unshuffle",
            OpKind::WeightNorm => "weight_norm",
            OpKind::BatchNormTrain => "batch_norm_train",
            OpKind::BatchNormInfer => "batch_norm_infer",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddChannel(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    PixelShuffle {
        x: Var,
        factor: usize,
    },
    PixelUnshuffle {
        x: Var,
        factor: usize,
    },
    WeightNorm {
        v: Var,
        g: Var,
        norms: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: batch_norm::Saved<T>,
        batch_stats: bool,
    },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddChannel(..) => OpKind::AddChannel,
            Op::Scale(..) => OpKind::Scale,
            Op::AddScalar(..) => OpKind::AddScalar,
            Op::Relu(..) => OpKind::Relu,
            Op::Abs(..) => OpKind::Abs,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::PixelShuffle { .. } => OpKind::PixelShuffle,
            Op::PixelUnshuffle { .. } => OpKind::PixelUnshuffle,
            Op::WeightNorm { .. } => OpKind::WeightNorm,
            Op::BatchNorm {
                batch_stats: true, ..
            } => OpKind::BatchNormTrain,
            Op::BatchNorm { .. } => OpKind::BatchNormInfer,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddChannel(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![a],
            Op::Conv2d { x, w, b } => {
                let mut v = vec![x, w];
                v.extend(b);
                v
            }
            Op::PixelShuffle { x, .. } | Op::PixelUnshuffle { x, .. } => vec![x],
            Op::WeightNorm { v, g, .. } => vec![v, g],
            Op::BatchNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Read-only view of a recorded node, for structural audits.
#[derive(Debug)]
pub struct NodeView<'a> {
    pub var: Var,
    pub kind: OpKind,
    pub shape: &'a [usize],
    pub inputs: Vec<Var>,
}

pub struct Graph<T: Element = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(usize, Var)>,
    param_lookup: HashMap<usize, Var>,
    backward_done: bool,
    corrupt: Option<(OpKind, T)>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            param_lookup: HashMap::new(),
            backward_done: false,
            corrupt: None,
        }
    }

    /// Scales every gradient contribution emitted by ops of `kind` by
    /// `factor`. Exists so gradient checks can be shown to catch a broken rule.
    pub fn corrupt_backward(&mut self, kind: OpKind, factor: f64) {
        self.corrupt = Some((kind, T::from_f64(factor)));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Binds an externally owned parameter as a gradient-tracked leaf. Binding
    /// the same key twice returns the original node, so reuse accumulates.
    pub fn bind_param(&mut self, key: usize, value: &Tensor<T>) -> Var {
        if let Some(&v) = self.param_lookup.get(&key) {
            return v;
        }
        let v = self.leaf(value.clone(), true);
        self.params.push((key, v));
        self.param_lookup.insert(key, v);
        v
    }

    /// `(key, node)` for every parameter bound so far, in binding order.
    pub fn bound_params(&self) -> &[(usize, Var)] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to a leaf.
    /// Interior gradients are released during the sweep.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor::new(self.shape(v).to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeView<'_>> {
        self.nodes.iter().enumerate().map(|(i, n)| NodeView {
            var: Var(i),
            kind: n.op.kind(),
            shape: n.value.shape(),
            inputs: n.op.inputs(),
        })
    }

    /// Clears gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(id)
    }

    /// Appends a computed node after validating its output.
    pub(crate) fn record(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        let kind = op.kind();
        if !value.is_finite() {
            return Err(Error::NonFinite { op: kind.name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    /// Elementwise sum. A 1-d `b` with one entry per channel of `a` is
    /// broadcast as a per-channel bias.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb && sb.len() == 1 && sa.len() >= 2 && sa[1] == sb[0] {
            return self.add_channel(a, b);
        }
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        self.record(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        self.record(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        self.record(out, Op::Mul(a, b))
    }

    /// `a[n, c, ..] + b[c]`.
    pub fn add_channel(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "add_channel",
                lhs: sa,
                rhs: sb,
            });
        }
        let (c, inner) = (sa[1], sa[2..].iter().product::<usize>());
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(a).clone();
        for (i, chunk) in out.data_mut().chunks_mut(inner.max(1)).enumerate() {
            let bc = bias[i % c];
            chunk.iter_mut().for_each(|v| *v = *v + bc);
        }
        self.record(out, Op::AddChannel(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::from_f64(s);
        let out = self.value(a).map(|v| v * s);
        self.record(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::from_f64(s);
        let out = self.value(a).map(|v| v + s);
        self.record(out, Op::AddScalar(a))
    }

    /// `max(x, 0)`; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.record(out, Op::Relu(x))
    }

    /// `|x|`; the subgradient at exactly zero is zero.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.abs());
        self.record(out, Op::Abs(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.record(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(Error::InvalidShape {
                op: "mean",
                msg: "mean of an empty tensor".into(),
            });
        }
        let s = t.sum() / T::from_f64(t.len() as f64);
        self.record(Tensor::scalar(s), Op::Mean(x))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        if !self.requires_grad(loss) {
            return Err(Error::Detached);
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = self.grads[i].take() else {
                continue;
            };
            let factor = match self.corrupt {
                Some((kind, f)) if kind == node.op.kind() => f,
                _ => T::one(),
            };
            let contribs = self.local_grads(i, &gy);
            for (var, g) in contribs {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                let g = if factor == T::one() {
                    g
                } else {
                    g.into_iter().map(|v| v * factor).collect()
                };
                match &mut self.grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to its operands given its output
    /// gradient. Contributions to operands that do not track gradients are
    /// discarded by the caller; expensive ones are skipped here.
    fn local_grads(&self, i: usize, gy: &[T]) -> Vec<(Var, Vec<T>)> {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, gy.to_vec()), (*b, gy.to_vec())],
            Op::Sub(a, b) => vec![(*a, gy.to_vec()), (*b, gy.iter().map(|&g| -g).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let ga = gy.iter().zip(vb).map(|(&g, &y)| g * y).collect();
                let gb = gy.iter().zip(va).map(|(&g, &x)| g * x).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddChannel(a, b) => {
                let shape = self.shape(*a);
                let (c, inner) = (shape[1], shape[2..].iter().product::<usize>().max(1));
                let mut gb = vec![T::zero(); c];
                for (k, chunk) in gy.chunks(inner).enumerate() {
                    gb[k % c] = gb[k % c] + chunk.iter().copied().sum::<T>();
                }
                vec![(*a, gy.to_vec()), (*b, gb)]
            }
            Op::Scale(a, s) => vec![(*a, gy.iter().map(|&g| g * *s).collect())],
            Op::AddScalar(a) => vec![(*a, gy.to_vec())],
            Op::Relu(x) => {
                let gx = gy
                    .iter()
                    .zip(val(*x))
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                vec![(*x, gx)]
            }
            Op::Abs(x) => {
                let gx = gy
                    .iter()
                    .zip(val(*x))
                    .map(|(&g, &v)| {
                        if v > T::zero() {
                            g
                        } else if v < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                vec![(*x, gx)]
            }
            Op::Sum(x) => vec![(*x, vec![gy[0]; val(*x).len()])],
            Op::Mean(x) => {
                let n = val(*x).len();
                vec![(*x, vec![gy[0] / T::from_f64(n as f64); n])]
            }
            Op::Conv2d { x, w, b } => {
                let grads = conv::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    gy,
                    conv::Needs {
                        input: needs(*x),
                        weight: needs(*w),
                        bias: b.is_some_and(needs),
                    },
                );
                let mut out = Vec::with_capacity(3);
                out.extend(grads.input.map(|g| (*x, g)));
                out.extend(grads.weight.map(|g| (*w, g)));
                if let (Some(b), Some(g)) = (b, grads.bias) {
                    out.push((*b, g));
                }
                out
            }
            Op::PixelShuffle { x, factor } => {
                let gy = Tensor::new(self.nodes[i].value.shape().to_vec(), gy.to_vec())
                    .expect("grad shape");
                let gx = shuffle::pixel_unshuffle_forward(&gy, *factor).expect("inverse shape");
                vec![(*x, gx.into_data())]
            }
            Op::PixelUnshuffle { x, factor } => {
                let gy = Tensor::new(self.nodes[i].value.shape().to_vec(), gy.to_vec())
                    .expect("grad shape");
                let gx = shuffle::pixel_shuffle_forward(&gy, *factor).expect("inverse shape");
                vec![(*x, gx.into_data())]
            }
            Op::WeightNorm { v, g, norms } => {
                let (gv, gg) =
                    weight_norm::weight_norm_backward(self.value(*v), self.value(*g), norms, gy);
                vec![(*v, gv), (*g, gg)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                batch_stats,
            } => {
                let shape = self.shape(*x);
                let grads =
                    batch_norm::backward(shape, self.value(*gamma), saved, *batch_stats, gy);
                vec![
                    (*x, grads.input),
                    (*gamma, grads.gamma),
                    (*beta, grads.beta),
                ]
            }
        }
    }
}
