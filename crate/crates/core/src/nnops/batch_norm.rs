//! Per-channel batch normalization over the `(N, H, W)` axes.
//!
//! Training mode normalizes with the statistics of the current mini-batch and
//! folds them into running estimates by exponential moving average. Inference
//! mode normalizes with the running estimates and never mutates them.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Running statistics and constants of one batch-norm layer. The learnable
/// `gamma`/`beta` live with the other parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T: Element = f32> {
    pub channels: usize,
    pub running_mean: Option<Tensor<T>>,
    pub running_var: Option<Tensor<T>>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: BnMode,
}

impl<T: Element> BatchNormState<T> {
    /// Fresh state; running statistics stay unset until the first training batch.
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            running_mean: None,
            running_var: None,
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            mode: BnMode::Train,
        }
    }

    pub fn with_running(mut self, mean: Tensor<T>, var: Tensor<T>) -> Result<Self> {
        if mean.shape() != [self.channels] || var.shape() != [self.channels] {
            return Err(Error::BatchNorm(format!(
                "running stats must have shape [{}]",
                self.channels
            )));
        }
        if var.data().iter().any(|v| *v < T::zero()) {
            return Err(Error::BatchNorm(
                "running variance must be non-negative".into(),
            ));
        }
        self.running_mean = Some(mean);
        self.running_var = Some(var);
        Ok(self)
    }

    pub fn is_initialized(&self) -> bool {
        self.running_mean.is_some() && self.running_var.is_some()
    }

    /// `E <- (1 - m) E + m E_B`, likewise for the variance. The first batch
    /// seeds the estimates directly.
    pub fn update(&mut self, stats: &BatchStats<T>) {
        let m = T::from_f64(self.momentum);
        let blend = |old: &mut Option<Tensor<T>>, new: &[T]| match old {
            Some(t) => t
                .data_mut()
                .iter_mut()
                .zip(new)
                .for_each(|(o, &b)| *o = (T::one() - m) * *o + m * b),
            None => *old = Some(Tensor::new([new.len()], new.to_vec()).expect("1-d")),
        };
        blend(&mut self.running_mean, &stats.mean);
        blend(&mut self.running_var, &stats.var);
    }
}

/// Per-channel statistics of one mini-batch (biased variance).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub(crate) struct Saved<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

pub(crate) struct BnGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

struct Layout {
    n: usize,
    c: usize,
    hw: usize,
}

impl Layout {
    fn of(shape: &[usize]) -> Result<Self> {
        match *shape {
            [n, c, h, w] => Ok(Self { n, c, hw: h * w }),
            _ => Err(Error::InvalidShape {
                op: "batch_norm",
                msg: format!("expected NCHW input, got {shape:?}"),
            }),
        }
    }

    fn count(&self) -> usize {
        self.n * self.hw
    }

    fn planes(&self, c: usize) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.n).map(move |b| {
            let start = (b * self.c + c) * self.hw;
            start..start + self.hw
        })
    }
}

fn check_affine<T: Element>(l: &Layout, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    for t in [gamma, beta] {
        if t.shape() != [l.c] {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                lhs: vec![l.c],
                rhs: t.shape().to_vec(),
            });
        }
    }
    Ok(())
}

fn normalize<T: Element>(
    x: &Tensor<T>,
    l: &Layout,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
    eps: T,
) -> (Tensor<T>, Saved<T>) {
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = Tensor::zeros(x.shape().to_vec());
    for c in 0..l.c {
        let (mu, is, ga, be) = (mean[c], inv_std[c], gamma.data()[c], beta.data()[c]);
        for r in l.planes(c) {
            for i in r {
                let h = (x.data()[i] - mu) * is;
                xhat[i] = h;
                y.data_mut()[i] = ga * h + be;
            }
        }
    }
    (y, Saved { xhat, inv_std })
}

pub(crate) fn backward<T: Element>(
    shape: &[usize],
    gamma: &Tensor<T>,
    saved: &Saved<T>,
    batch_stats: bool,
    gy: &[T],
) -> BnGrads<T> {
    let l = Layout::of(shape).expect("validated in forward");
    let m = T::from_f64(l.count() as f64);
    let mut gx = vec![T::zero(); gy.len()];
    let mut ggamma = vec![T::zero(); l.c];
    let mut gbeta = vec![T::zero(); l.c];
    for c in 0..l.c {
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for r in l.planes(c) {
            for i in r {
                sum_g = sum_g + gy[i];
                sum_gx = sum_gx + gy[i] * saved.xhat[i];
            }
        }
        ggamma[c] = sum_gx;
        gbeta[c] = sum_g;
        let k = gamma.data()[c] * saved.inv_std[c];
        for r in l.planes(c) {
            for i in r {
                gx[i] = if batch_stats {
                    k * (gy[i] - (sum_g + saved.xhat[i] * sum_gx) / m)
                } else {
                    k * gy[i]
                };
            }
        }
    }
    BnGrads {
        input: gx,
        gamma: ggamma,
        beta: gbeta,
    }
}

impl<T: Element> Graph<T> {
    /// Normalizes with the batch's own statistics and returns them.
    pub fn batch_norm_batch(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats<T>)> {
        let xt = self.value(x);
        let l = Layout::of(xt.shape())?;
        check_affine(&l, self.value(gamma), self.value(beta))?;
        if l.count() < 2 {
            return Err(Error::BatchNorm(format!(
                "batch statistics need at least 2 values per channel, got {}",
                l.count()
            )));
        }
        let cnt = T::from_f64(l.count() as f64);
        let mut mean = vec![T::zero(); l.c];
        let mut var = vec![T::zero(); l.c];
        for c in 0..l.c {
            let s: T = l.planes(c).flat_map(|r| xt.data()[r].iter().copied()).sum();
            let mu = s / cnt;
            let ss: T = l
                .planes(c)
                .flat_map(|r| xt.data()[r].iter().map(move |&v| (v - mu) * (v - mu)))
                .sum();
            mean[c] = mu;
            var[c] = ss / cnt;
        }
        let (y, saved) = normalize(
            xt,
            &l,
            self.value(gamma),
            self.value(beta),
            &mean,
            &var,
            T::from_f64(eps),
        );
        let out = self.record(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                batch_stats: true,
            },
        )?;
        Ok((out, BatchStats { mean, var }))
    }

    /// Normalizes with fixed statistics; differentiable in `x`, `gamma`, `beta`.
    pub fn batch_norm_fixed(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &Tensor<T>,
        var: &Tensor<T>,
        eps: f64,
    ) -> Result<Var> {
        let xt = self.value(x);
        let l = Layout::of(xt.shape())?;
        check_affine(&l, self.value(gamma), self.value(beta))?;
        check_affine(&l, mean, var)?;
        let (y, saved) = normalize(
            xt,
            &l,
            self.value(gamma),
            self.value(beta),
            mean.data(),
            var.data(),
            T::from_f64(eps),
        );
        self.record(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                batch_stats: false,
            },
        )
    }
}

/// Training-mode batch norm: batch statistics, then a running-stat update.
pub fn batch_norm_train<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &mut BatchNormState<T>,
) -> Result<Var> {
    if state.mode != BnMode::Train {
        return Err(Error::BatchNorm(
            "batch_norm_train called in infer mode".into(),
        ));
    }
    let (y, stats) = g.batch_norm_batch(x, gamma, beta, state.eps)?;
    state.update(&stats);
    Ok(y)
}

/// Inference-mode batch norm using the running statistics.
pub fn batch_norm_infer<T: Element>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    state: &BatchNormState<T>,
) -> Result<Var> {
    if state.mode != BnMode::Infer {
        return Err(Error::BatchNorm(
            "batch_norm_infer called in train mode".into(),
        ));
    }
    let (Some(mean), Some(var)) = (&state.running_mean, &state.running_var) else {
        return Err(Error::BatchNorm(
            "running statistics were never initialized".into(),
        ));
    };
    g.batch_norm_fixed(x, gamma, beta, mean, var, state.eps)
}
