use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nnops::{batch_norm_infer, batch_norm_train, channel_norms, BatchNormState, BnMode};
use crate::params::{init_kernel, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Normalization {
    #[default]
    Plain,
    WeightNorm,
    BatchNorm,
}

impl Normalization {
    pub const ALL: [Normalization; 3] = [
        Normalization::Plain,
        Normalization::WeightNorm,
        Normalization::BatchNorm,
    ];
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Plain => "plain",
            Normalization::WeightNorm => "weight-norm",
            Normalization::BatchNorm => "batch-norm",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" | "none" => Ok(Normalization::Plain),
            "weight-norm" | "wn" => Ok(Normalization::WeightNorm),
            "batch-norm" | "bn" => Ok(Normalization::BatchNorm),
            _ => Err(Error::Config(format!(
                "unknown normalization `{s}` (plain | weight-norm | batch-norm)"
            ))),
        }
    }
}

/// How a convolution's effective kernel is produced.
#[derive(Clone, Debug, PartialEq)]
pub enum ConvWeights<T: Element> {
    Plain {
        weight: ParamId,
        bias: ParamId,
    },
    WeightNorm {
        v: ParamId,
        g: ParamId,
        bias: ParamId,
    },
    /// Bias-free convolution followed by batch normalization.
    BatchNorm {
        weight: ParamId,
        gamma: ParamId,
        beta: ParamId,
        state: BatchNormState<T>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T: Element> {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub weights: ConvWeights<T>,
}

impl<T: Element> ConvLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        norm: Normalization,
        rng: &mut R,
    ) -> Result<Self> {
        if cin == 0 || cout == 0 {
            return Err(Error::InvalidNet(format!("{name}: zero-width convolution")));
        }
        if !crate::nnops::KERNEL_SIZES.contains(&kernel) {
            return Err(Error::InvalidNet(format!(
                "{name}: unsupported kernel {kernel}"
            )));
        }
        let kernel_init = init_kernel::<T, R>([cout, cin, kernel, kernel], rng);
        let weights = match norm {
            Normalization::Plain => ConvWeights::Plain {
                weight: store.add(format!("{name}.weight"), kernel_init)?,
                bias: store.add(format!("{name}.bias"), Tensor::zeros([cout]))?,
            },
            Normalization::WeightNorm => {
                let g = Tensor::new([cout], channel_norms(&kernel_init)?)?;
                ConvWeights::WeightNorm {
                    v: store.add(format!("{name}.v"), kernel_init)?,
                    g: store.add(format!("{name}.g"), g)?,
                    bias: store.add(format!("{name}.bias"), Tensor::zeros([cout]))?,
                }
            }
            Normalization::BatchNorm => ConvWeights::BatchNorm {
                weight: store.add(format!("{name}.weight"), kernel_init)?,
                gamma: store.add(format!("{name}.bn.gamma"), Tensor::ones([cout]))?,
                beta: store.add(format!("{name}.bn.beta"), Tensor::zeros([cout]))?,
                state: BatchNormState::new(cout),
            },
        };
        Ok(Self {
            name: name.to_string(),
            cin,
            cout,
            kernel,
            weights,
        })
    }

    pub fn normalization(&self) -> Normalization {
        match self.weights {
            ConvWeights::Plain { .. } => Normalization::Plain,
            ConvWeights::WeightNorm { .. } => Normalization::WeightNorm,
            ConvWeights::BatchNorm { .. } => Normalization::BatchNorm,
        }
    }

    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        match &mut self.weights {
            ConvWeights::Plain { weight, bias } => {
                let (w, b) = (store.bind(g, *weight), store.bind(g, *bias));
                g.conv2d(x, w, Some(b))
            }
            ConvWeights::WeightNorm { v, g: gain, bias } => {
                let (v, gain, b) = (
                    store.bind(g, *v),
                    store.bind(g, *gain),
                    store.bind(g, *bias),
                );
                let w = g.weight_norm(v, gain)?;
                g.conv2d(x, w, Some(b))
            }
            ConvWeights::BatchNorm {
                weight,
                gamma,
                beta,
                state,
            } => {
                let w = store.bind(g, *weight);
                let y = g.conv2d(x, w, None)?;
                let (ga, be) = (store.bind(g, *gamma), store.bind(g, *beta));
                state.mode = mode;
                match mode {
                    BnMode::Train => batch_norm_train(g, y, ga, be, state),
                    BnMode::Infer => batch_norm_infer(g, y, ga, be, state),
                }
            }
        }
    }

    /// Kernel weight count (`v` for weight-normalized layers).
    pub fn weight_count(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }

    pub fn bias_count(&self) -> usize {
        match self.weights {
            ConvWeights::BatchNorm { .. } => 0,
            _ => self.cout,
        }
    }

    /// Per-channel parameters beyond kernel and bias: WN gains, BN affine.
    pub fn extra_count(&self) -> usize {
        match self.weights {
            ConvWeights::Plain { .. } => 0,
            ConvWeights::WeightNorm { .. } => self.cout,
            ConvWeights::BatchNorm { .. } => 2 * self.cout,
        }
    }

    /// Makes the effective kernel zero (for weight-norm, via a zero gain).
    pub fn zero_kernel(&self, store: &mut ParamStore<T>) {
        let id = match self.weights {
            ConvWeights::Plain { weight, .. } | ConvWeights::BatchNorm { weight, .. } => weight,
            ConvWeights::WeightNorm { g, .. } => g,
        };
        let p = store.get_mut(id);
        p.value.data_mut().fill(T::zero());
    }

    pub fn bn_state(&self) -> Option<&BatchNormState<T>> {
        match &self.weights {
            ConvWeights::BatchNorm { state, .. } => Some(state),
            _ => None,
        }
    }

    pub fn bn_state_mut(&mut self) -> Option<&mut BatchNormState<T>> {
        match &mut self.weights {
            ConvWeights::BatchNorm { state, .. } => Some(state),
            _ => None,
        }
    }

    pub fn cast<U: Element>(&self) -> ConvLayer<U> {
        let weights = match &self.weights {
            ConvWeights::Plain { weight, bias } => ConvWeights::Plain {
                weight: *weight,
                bias: *bias,
            },
            ConvWeights::WeightNorm { v, g, bias } => ConvWeights::WeightNorm {
                v: *v,
                g: *g,
                bias: *bias,
            },
            ConvWeights::BatchNorm {
                weight,
                gamma,
                beta,
                state,
            } => ConvWeights::BatchNorm {
                weight: *weight,
                gamma: *gamma,
                beta: *beta,
                state: BatchNormState {
                    channels: state.channels,
                    running_mean: state.running_mean.as_ref().map(Tensor::cast),
                    running_var: state.running_var.as_ref().map(Tensor::cast),
                    momentum: state.momentum,
                    eps: state.eps,
                    mode: state.mode,
                },
            },
        };
        ConvLayer {
            name: self.name.clone(),
            cin: self.cin,
            cout: self.cout,
            kernel: self.kernel,
            weights,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnops::{conv2d, Conv2dParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_norm_layer_starts_equal_to_plain() {
        let mut rng_a = ChaCha8Rng::seed_from_u64(4);
        let mut rng_b = ChaCha8Rng::seed_from_u64(4);
        let mut sa = ParamStore::<f32>::new();
        let mut sb = ParamStore::<f32>::new();
        let mut plain =
            ConvLayer::new(&mut sa, "c", 3, 5, 3, Normalization::Plain, &mut rng_a).unwrap();
        let mut wn =
            ConvLayer::new(&mut sb, "c", 3, 5, 3, Normalization::WeightNorm, &mut rng_b).unwrap();
        let x = Tensor::<f32>::from_fn([2, 3, 4, 4], |i| (i as f32 * 0.37).sin());
        let run = |layer: &mut ConvLayer<f32>, store: &ParamStore<f32>| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let y = layer.forward(&mut g, store, xv, BnMode::Train).unwrap();
            g.value(y).clone()
        };
        let (ya, yb) = (run(&mut plain, &sa), run(&mut wn, &sb));
        for (a, b) in ya.data().iter().zip(yb.data()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
        }
        // the graph-free path agrees with the layer
        let w = sa.value(sa.find("c.weight").unwrap()).clone();
        let direct = conv2d(&x, &Conv2dParams::new(w, Tensor::zeros([5])).unwrap()).unwrap();
        assert_eq!(direct, ya);
    }

    #[test]
    fn batch_norm_layer_has_no_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::<f32>::new();
        let l = ConvLayer::new(&mut s, "bn", 2, 4, 3, Normalization::BatchNorm, &mut rng).unwrap();
        assert_eq!(l.bias_count(), 0);
        assert_eq!(l.extra_count(), 8);
        assert!(s.find("bn.bias").is_none());
        assert_eq!(s.count(), 2 * 4 * 9 + 8);
    }
}
