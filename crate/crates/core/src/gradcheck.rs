//! Finite-difference verification of every backward rule.
//!
//! Analytic gradients come from the production `f32` graph. Numerical
//! gradients are central differences evaluated on an `f64` shadow of the same
//! computation. Each check reduces its output to a scalar with a fixed random
//! projection, `sum(y * R)`, so every output element contributes.
//!
//! Per element the relative error is
//! `|a - n| / max(|a|, |n|, 1e-3 * max|n| + 1e-6)`, where `max|n|` runs over
//! the tensor being checked. The floor keeps near-zero entries from reporting
//! huge ratios caused by rounding alone.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{build_block, BlockFamily, BlockSpec};
use crate::element::Element;
use crate::error::Result;
use crate::graph::{Graph, OpKind, Var};
use crate::layers::Normalization;
use crate::network::{Model, NetSpec, Topology};
use crate::nnops::{BnMode, DEFAULT_EPS};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-3;
/// Difference step for single ops on unit-scale inputs.
pub const OP_STEP: f64 = 1e-3;
/// Difference step for blocks and networks, where ReLU kinks are dense.
pub const NET_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub seed: u64,
    /// Elements probed per tensor in block and network checks; larger
    /// tensors are subsampled.
    pub max_per_tensor: usize,
    /// Scales one op's backward contributions in the analytic graph.
    pub corrupt: Option<(OpKind, f64)>,
    pub tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_per_tensor: 48,
            corrupt: None,
            tolerance: TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Differentiable ops recorded by the analytic graph.
    pub ops: BTreeSet<&'static str>,
    pub family: Option<BlockFamily>,
    pub max_rel_err: f64,
    /// Number of gradient entries compared.
    pub checked: usize,
    /// Entries whose probes straddled a kink at every step tried.
    pub skipped: usize,
}

impl CheckResult {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub results: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.results.is_empty() && self.results.iter().all(|r| r.passed(self.tolerance))
    }

    pub fn max_rel_err(&self) -> f64 {
        self.results
            .iter()
            .map(|r| r.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn ops_covered(&self) -> BTreeSet<&'static str> {
        self.results
            .iter()
            .flat_map(|r| r.ops.iter().copied())
            .collect()
    }

    /// Differentiable ops that no check exercised.
    pub fn ops_missing(&self) -> Vec<&'static str> {
        let covered = self.ops_covered();
        OpKind::ALL
            .into_iter()
            .filter(|&k| k != OpKind::Leaf)
            .map(OpKind::name)
            .filter(|n| !covered.contains(n))
            .collect()
    }

    pub fn families_covered(&self) -> BTreeSet<String> {
        self.results
            .iter()
            .filter_map(|r| r.family.map(|f| f.to_string()))
            .collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.passed(self.tolerance))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            let verdict = if r.passed(self.tolerance) {
                "PASS"
            } else {
                "FAIL"
            };
            write!(
                f,
                "{verdict}  {:<44} max rel err {:.3e}  ({} entries",
                r.name, r.max_rel_err, r.checked
            )?;
            if r.skipped > 0 {
                write!(f, ", {} on a kink", r.skipped)?;
            }
            writeln!(f, ")")?;
        }
        let missing = self.ops_missing();
        if !missing.is_empty() {
            writeln!(f, "ops not covered: {}", missing.join(", "))?;
        }
        write!(
            f,
            "gradcheck {}: {} checks, max rel err {:.3e}, tolerance {:.0e}",
            if self.passed() && missing.is_empty() {
                "PASS"
            } else {
                "FAIL"
            },
            self.results.len(),
            self.max_rel_err(),
            self.tolerance
        )
    }
}

/// Relative error of one gradient tensor, with the floor described above.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-3 * scale + 1e-6;
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
            if err.is_nan() {
                f64::INFINITY
            } else {
                err
            }
        })
        .fold(0.0, f64::max)
}

fn projected_loss<T: Element>(g: &mut Graph<T>, out: Var, proj: &Tensor<f64>) -> Result<Var> {
    let r = g.constant(proj.cast());
    let p = g.mul(out, r)?;
    g.sum(p)
}

fn ops_of<T: Element>(g: &Graph<T>) -> BTreeSet<&'static str> {
    g.nodes()
        .filter(|n| n.kind != OpKind::Leaf)
        .map(|n| n.kind.name())
        .collect()
}

/// Hash of the sign pattern at every relu and abs input. Two evaluations
/// with equal signatures lie on the same smooth piece of the loss.
fn kink_signature<T: Element>(g: &Graph<T>) -> u64 {
    let mut h = DefaultHasher::new();
    for node in g
        .nodes()
        .filter(|n| matches!(n.kind, OpKind::Relu | OpKind::Abs))
    {
        for v in g.value(node.inputs[0]).data() {
            (v.partial_cmp(&T::zero()) as Option<Ordering>).hash(&mut h);
        }
    }
    h.finish()
}

/// Shadow loss and its kink signature.
fn shadow_loss<T: Element>(
    g: &mut Graph<T>,
    out: Result<Var>,
    proj: &Tensor<f64>,
) -> Result<(f64, u64)> {
    let loss = projected_loss(g, out?, proj)?;
    Ok((g.value(loss).item()?.as_f64(), kink_signature(g)))
}

/// Smallest step tried before an entry is declared to sit on a kink.
const MIN_STEP_RATIO: f64 = 1e-2;

/// Compares analytic gradients with central differences of `loss_at`, which
/// evaluates the shadow loss with entry `i` of tensor `t` shifted by `delta`.
/// When the two probes straddle a relu or abs kink the step shrinks; entries
/// that straddle one even at the smallest step are skipped and counted.
fn compare<A: Element>(
    analytic: &[Tensor<A>],
    step: f64,
    cap: usize,
    rng: &mut ChaCha8Rng,
    mut loss_at: impl FnMut(usize, usize, f64) -> Result<(f64, u64)>,
) -> Result<Comparison> {
    let mut c = Comparison::default();
    for (t, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let idx: Vec<usize> = if n <= cap {
            (0..n).collect()
        } else {
            sample(rng, n, cap).into_vec()
        };
        let mut a = Vec::with_capacity(idx.len());
        let mut num = Vec::with_capacity(idx.len());
        for &i in &idx {
            let mut h = step;
            loop {
                let (up, sig_up) = loss_at(t, i, h)?;
                let (down, sig_down) = loss_at(t, i, -h)?;
                if sig_up == sig_down {
                    num.push((up - down) / (2.0 * h));
                    a.push(grad.data()[i].as_f64());
                    break;
                }
                h /= 10.0;
                if h < step * MIN_STEP_RATIO {
                    c.skipped += 1;
                    break;
                }
            }
        }
        c.max_rel_err = c.max_rel_err.max(max_relative_error(&a, &num));
        c.checked += a.len();
    }
    Ok(c)
}

#[derive(Default)]
struct Comparison {
    max_rel_err: f64,
    checked: usize,
    skipped: usize,
}

#[derive(Clone, Copy, Debug)]
enum OpCase {
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
    Conv {
        bias: bool,
    },
    PixelShuffle(usize),
    PixelUnshuffle(usize),
    WeightNorm,
    WeightNormConv,
    BatchNormTrain,
    BatchNormInfer,
    /// `add_channel(sub(mul(a, b), c), d)`
    Chain,
    /// `pixel_shuffle(relu(conv2d(x, w, b)), 2)`
    ConvShuffle,
    /// One input feeding two consumers.
    Shared,
}

impl OpCase {
    fn apply<T: Element>(self, g: &mut Graph<T>, x: &[Var], fixed: &[Tensor<T>]) -> Result<Var> {
        match self {
            OpCase::Add => g.add(x[0], x[1]),
            OpCase::Sub => g.sub(x[0], x[1]),
            OpCase::Mul => g.mul(x[0], x[1]),
            OpCase::AddChannel => g.add_channel(x[0], x[1]),
            OpCase::Scale => g.scale(x[0], -1.7),
            OpCase::AddScalar => g.add_scalar(x[0], 0.3),
            OpCase::Relu => g.relu(x[0]),
            OpCase::Abs => g.abs(x[0]),
            OpCase::Sum => g.sum(x[0]),
            OpCase::Mean => g.mean(x[0]),
            OpCase::Conv { bias } => g.conv2d(x[0], x[1], bias.then(|| x[2])),
            OpCase::PixelShuffle(s) => g.pixel_shuffle(x[0], s),
            OpCase::PixelUnshuffle(s) => g.pixel_unshuffle(x[0], s),
            OpCase::WeightNorm => g.weight_norm(x[0], x[1]),
            OpCase::WeightNormConv => {
                let w = g.weight_norm(x[1], x[2])?;
                g.conv2d(x[0], w, None)
            }
            OpCase::BatchNormTrain => g
                .batch_norm_batch(x[0], x[1], x[2], DEFAULT_EPS)
                .map(|(y, _)| y),
            OpCase::BatchNormInfer => {
                g.batch_norm_fixed(x[0], x[1], x[2], &fixed[0], &fixed[1], DEFAULT_EPS)
            }
            OpCase::Chain => {
                let m = g.mul(x[0], x[1])?;
                let s = g.sub(m, x[2])?;
                g.add_channel(s, x[3])
            }
            OpCase::ConvShuffle => {
                let c = g.conv2d(x[0], x[1], Some(x[2]))?;
                let r = g.relu(c)?;
                g.pixel_shuffle(r, 2)
            }
            OpCase::Shared => {
                let a = g.mul(x[0], x[0])?;
                let b = g.scale(x[0], 3.0)?;
                g.add(a, b)
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Uniform in `±[margin, 1]`, away from the kinks of relu and abs.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], margin: f32) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(margin..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn op_inputs(case: OpCase, rng: &mut ChaCha8Rng) -> (Vec<Tensor<f32>>, Vec<Tensor<f32>>) {
    let a = [2, 3, 4, 5];
    let u = |rng: &mut ChaCha8Rng, s: &[usize]| uniform(rng, s, -1.0, 1.0);
    match case {
        OpCase::Add | OpCase::Sub | OpCase::Mul => (vec![u(rng, &a), u(rng, &a)], vec![]),
        OpCase::AddChannel => (vec![u(rng, &a), u(rng, &[3])], vec![]),
        OpCase::Scale | OpCase::AddScalar | OpCase::Sum | OpCase::Mean | OpCase::Shared => {
            (vec![u(rng, &a)], vec![])
        }
        OpCase::Relu | OpCase::Abs => (vec![away_from_zero(rng, &a, 0.05)], vec![]),
        OpCase::Conv { bias } => {
            let k = if bias {
                [1, 3, 5][rng.random_range(0..3)]
            } else {
                3
            };
            let mut v = vec![u(rng, &[2, 3, 5, 5]), u(rng, &[4, 3, k, k])];
            if bias {
                v.push(u(rng, &[4]));
            }
            (v, vec![])
        }
        OpCase::PixelShuffle(s) => (vec![u(rng, &[2, s * s, 3, 3])], vec![]),
        OpCase::PixelUnshuffle(s) => (vec![u(rng, &[2, 1, 2 * s, 2 * s])], vec![]),
        OpCase::WeightNorm => (
            vec![u(rng, &[4, 3, 3, 3]), uniform(rng, &[4], 0.5, 1.5)],
            vec![],
        ),
        OpCase::WeightNormConv => (
            vec![
                u(rng, &[2, 3, 5, 5]),
                u(rng, &[4, 3, 3, 3]),
                uniform(rng, &[4], 0.5, 1.5),
            ],
            vec![],
        ),
        OpCase::BatchNormTrain => (
            vec![
                u(rng, &[4, 3, 5, 5]),
                uniform(rng, &[3], 0.5, 1.5),
                u(rng, &[3]),
            ],
            vec![],
        ),
        OpCase::BatchNormInfer => (
            vec![
                u(rng, &[4, 3, 5, 5]),
                uniform(rng, &[3], 0.5, 1.5),
                u(rng, &[3]),
            ],
            vec![u(rng, &[3]), uniform(rng, &[3], 0.2, 2.0)],
        ),
        OpCase::Chain => (
            vec![u(rng, &a), u(rng, &a), u(rng, &a), u(rng, &[3])],
            vec![],
        ),
        OpCase::ConvShuffle => (
            vec![u(rng, &[2, 3, 4, 4]), u(rng, &[4, 3, 3, 3]), u(rng, &[4])],
            vec![],
        ),
    }
}

fn check_op(
    name: &str,
    case: OpCase,
    opts: &GradCheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<CheckResult> {
    let (inputs, fixed) = op_inputs(case, rng);
    let mut g = Graph::<f32>::new();
    if let Some((kind, factor)) = opts.corrupt {
        g.corrupt_backward(kind, factor);
    }
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = case.apply(&mut g, &vars, &fixed)?;
    let proj = uniform(rng, g.shape(out), -1.0, 1.0).cast::<f64>();
    let loss = projected_loss(&mut g, out, &proj)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f32>> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();

    let mut shadow: Vec<Tensor<f64>> = inputs.iter().map(Tensor::cast).collect();
    let fixed64: Vec<Tensor<f64>> = fixed.iter().map(Tensor::cast).collect();
    // Single ops are cheap, so every entry is probed.
    let cmp = compare(&analytic, OP_STEP, usize::MAX, rng, |t, i, d| {
        shadow[t].data_mut()[i] += d;
        let mut g = Graph::<f64>::new();
        let vars: Vec<Var> = shadow.iter().map(|x| g.constant(x.clone())).collect();
        let out = case.apply(&mut g, &vars, &fixed64);
        let loss = shadow_loss(&mut g, out, &proj);
        shadow[t].data_mut()[i] -= d;
        loss
    })?;
    Ok(CheckResult {
        name: format!("op {name}"),
        ops: ops_of(&g),
        family: None,
        max_rel_err: cmp.max_rel_err,
        checked: cmp.checked,
        skipped: cmp.skipped,
    })
}

/// Op-level checks covering every differentiable op.
pub fn check_ops(opts: &GradCheckOptions) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let cases = [
        ("add", OpCase::Add),
        ("sub", OpCase::Sub),
        ("mul", OpCase::Mul),
        ("add_channel", OpCase::AddChannel),
        ("scale", OpCase::Scale),
        ("add_scalar", OpCase::AddScalar),
        ("relu", OpCase::Relu),
        ("abs", OpCase::Abs),
        ("sum", OpCase::Sum),
        ("mean", OpCase::Mean),
        ("conv2d", OpCase::Conv { bias: true }),
        ("conv2d (no bias)", OpCase::Conv { bias: false }),
        ("pixel_shuffle x2", OpCase::PixelShuffle(2)),
        ("pixel_shuffle x3", OpCase::PixelShuffle(3)),
        ("pixel_unshuffle x2", OpCase::PixelUnshuffle(2)),
        ("weight_norm", OpCase::WeightNorm),
        ("conv2d(weight_norm)", OpCase::WeightNormConv),
        ("batch_norm_train", OpCase::BatchNormTrain),
        ("batch_norm_infer", OpCase::BatchNormInfer),
        ("mul-sub-add_channel", OpCase::Chain),
        ("conv2d-relu-pixel_shuffle", OpCase::ConvShuffle),
        ("shared operand", OpCase::Shared),
    ];
    cases
        .into_iter()
        .map(|(name, case)| check_op(name, case, opts, &mut rng))
        .collect()
}

/// Spec for a tiny block of `family`: `w1 = 4`.
pub fn tiny_block(family: BlockFamily, norm: Normalization) -> BlockSpec {
    match family {
        BlockFamily::Vanilla => BlockSpec::vanilla(4),
        BlockFamily::WdsrA => BlockSpec::wdsr_a(4, 4),
        BlockFamily::WdsrB => BlockSpec::wdsr_b(4, 6, 4),
    }
    .with_normalization(norm)
}

pub fn check_block<A: Element>(spec: &BlockSpec, opts: &GradCheckOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xB10C);
    let mut store32 = ParamStore::<f32>::new();
    let block32 = build_block(spec, &mut store32, "block", &mut rng)?;
    let (mut block, mut store) = (block32.cast::<A>(), store32.cast::<A>());
    let x = uniform(&mut rng, &[2, spec.width, 6, 6], -1.0, 1.0);

    let mut g = Graph::<A>::new();
    if let Some((kind, factor)) = opts.corrupt {
        g.corrupt_backward(kind, factor);
    }
    let xv = g.leaf(x.cast(), true);
    let out = block.forward(&mut g, &store, xv, BnMode::Train)?;
    let proj = uniform(&mut rng, g.shape(out), -1.0, 1.0).cast::<f64>();
    let loss = projected_loss(&mut g, out, &proj)?;
    g.backward(loss)?;
    store.collect_grads(&g);
    let mut analytic = vec![g.grad(xv).expect("input gradient")];
    analytic.extend(store.iter().map(|(_, p)| {
        p.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()))
    }));

    let mut shadow_block = block.cast::<f64>();
    let mut shadow_store = store.cast::<f64>();
    let ids: Vec<_> = shadow_store.iter().map(|(id, _)| id).collect();
    let mut x64 = x.cast::<f64>();
    let cmp = compare(
        &analytic,
        NET_STEP,
        opts.max_per_tensor,
        &mut rng,
        |t, i, d| {
            let slot = |x64: &mut Tensor<f64>, store: &mut ParamStore<f64>, d: f64| match t {
                0 => x64.data_mut()[i] += d,
                _ => store.get_mut(ids[t - 1]).value.data_mut()[i] += d,
            };
            slot(&mut x64, &mut shadow_store, d);
            let mut g = Graph::<f64>::new();
            let xv = g.constant(x64.clone());
            let out = shadow_block.forward(&mut g, &shadow_store, xv, BnMode::Train);
            let loss = shadow_loss(&mut g, out, &proj);
            slot(&mut x64, &mut shadow_store, -d);
            loss
        },
    )?;
    Ok(CheckResult {
        name: format!("block {} {}", spec.family, spec.normalization),
        ops: ops_of(&g),
        family: Some(spec.family),
        max_rel_err: cmp.max_rel_err,
        checked: cmp.checked,
        skipped: cmp.skipped,
    })
}

/// Shrinks a network spec to one block with a 4-channel identity pathway.
pub fn tiny_network(spec: &NetSpec) -> NetSpec {
    let mut tiny = spec.clone();
    tiny.n_blocks = 1;
    let block = tiny_block(spec.block.family, spec.block.normalization);
    tiny.block = BlockSpec {
        expansion: if spec.block.family == BlockFamily::Vanilla {
            1
        } else {
            block.expansion
        },
        kernel: spec.block.kernel,
        residual_scale: spec.block.residual_scale,
        ..block
    };
    tiny
}

/// Checks every parameter tensor of `spec` on an `(2, 3, 8, 8)` input.
pub fn check_network<A: Element>(
    spec: &NetSpec,
    mode: BnMode,
    opts: &GradCheckOptions,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x4E37);
    let mut model = Model::<f32>::new(spec.clone(), &mut rng)?.cast::<A>();
    let x = uniform(&mut rng, &[2, 3, 8, 8], 0.0, 255.0);
    if mode == BnMode::Infer {
        // seed the running statistics
        let mut g = Graph::new();
        let xv = g.constant(x.cast());
        model.forward(&mut g, xv, BnMode::Train)?;
    }
    let mut shadow = model.cast::<f64>();

    let mut g = Graph::<A>::new();
    if let Some((kind, factor)) = opts.corrupt {
        g.corrupt_backward(kind, factor);
    }
    let xv = g.constant(x.cast());
    let out = model.forward(&mut g, xv, mode)?;
    let proj = uniform(&mut rng, g.shape(out), -1.0, 1.0).cast::<f64>();
    let loss = projected_loss(&mut g, out, &proj)?;
    g.backward(loss)?;
    model.params.collect_grads(&g);
    let analytic: Vec<Tensor<A>> = model
        .params
        .iter()
        .map(|(_, p)| {
            p.grad
                .clone()
                .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()))
        })
        .collect();

    let ids: Vec<_> = shadow.params.iter().map(|(id, _)| id).collect();
    let x64 = x.cast::<f64>();
    let cmp = compare(
        &analytic,
        NET_STEP,
        opts.max_per_tensor,
        &mut rng,
        |t, i, d| {
            shadow.params.get_mut(ids[t]).value.data_mut()[i] += d;
            let mut g = Graph::<f64>::new();
            let xv = g.constant(x64.clone());
            let out = shadow.forward(&mut g, xv, mode);
            let loss = shadow_loss(&mut g, out, &proj);
            shadow.params.get_mut(ids[t]).value.data_mut()[i] -= d;
            loss
        },
    )?;
    let mode_note = match (spec.block.normalization, mode) {
        (Normalization::BatchNorm, BnMode::Train) => " (train)",
        (Normalization::BatchNorm, BnMode::Infer) => " (infer)",
        _ => "",
    };
    Ok(CheckResult {
        name: format!(
            "net {} x{} {} {}{mode_note}",
            spec.topology, spec.scale, spec.block.family, spec.block.normalization
        ),
        ops: ops_of(&g),
        family: Some(spec.block.family),
        max_rel_err: cmp.max_rel_err,
        checked: cmp.checked,
        skipped: cmp.skipped,
    })
}

/// Full suite: every op, then blocks and tiny networks for every family
/// under every normalization. The tiny instantiation of `spec` runs first.
pub fn run_gradcheck(spec: &NetSpec, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut results = check_ops(opts)?;
    for family in BlockFamily::ALL {
        for norm in Normalization::ALL {
            results.push(check_block::<f32>(&tiny_block(family, norm), opts)?);
        }
    }
    let mut nets = vec![tiny_network(spec)];
    for norm in Normalization::ALL {
        for family in BlockFamily::ALL {
            let mut net = tiny_network(spec);
            net.topology = Topology::Wdsr;
            net.block = tiny_block(family, norm);
            nets.push(net);
        }
        let mut edsr = tiny_network(&NetSpec::edsr_baseline(spec.scale, 1, 4));
        edsr.block.normalization = norm;
        nets.push(edsr);
    }
    let mut seen = Vec::new();
    for net in nets {
        if seen.contains(&net) {
            continue;
        }
        results.push(check_network::<f32>(&net, BnMode::Train, opts)?);
        if net.block.normalization == Normalization::BatchNorm {
            results.push(check_network::<f32>(&net, BnMode::Infer, opts)?);
        }
        seen.push(net);
    }
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        results,
    })
}
