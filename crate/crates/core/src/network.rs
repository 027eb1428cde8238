//! Full super-resolution networks.
//!
//! wdsr: the mean-subtracted LR input feeds two paths that are summed after
//! pixel shuffle:
//!
//! ```text
//! body: conv3 (3 -> w1) -> blocks -> conv3 (w1 -> 3S^2) -> shuffle(S)
//! skip: conv5 (3 -> 3S^2)                               -> shuffle(S)
//! ```
//!
//! Every convolution runs at LR resolution.
//!
//! edsr-baseline: head conv3, vanilla blocks, body-end conv3 with a long skip
//! from the head, then one upsampling stage per factor (two x2 stages for
//! S = 4) of `conv3 (w1 -> w1 S^2) -> shuffle`, and a tail conv3 (w1 -> 3)
//! at HR resolution.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{build_block, BlockFamily, BlockSpec, ResidualBlock};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{ConvLayer, Normalization};
use crate::nnops::{BatchNormState, BnMode};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const SCALES: [usize; 3] = [2, 3, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Topology {
    Wdsr,
    EdsrBaseline,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Wdsr => "wdsr",
            Topology::EdsrBaseline => "edsr-baseline",
        })
    }
}

impl FromStr for Topology {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wdsr" => Ok(Topology::Wdsr),
            "edsr-baseline" | "edsr" => Ok(Topology::EdsrBaseline),
            _ => Err(Error::Config(format!(
                "unknown topology `{s}` (wdsr | edsr-baseline)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    pub topology: Topology,
    pub scale: usize,
    pub n_blocks: usize,
    pub block: BlockSpec,
    pub rgb_mean: [f32; 3],
}

impl NetSpec {
    pub fn wdsr(scale: usize, n_blocks: usize, block: BlockSpec) -> Self {
        Self {
            topology: Topology::Wdsr,
            scale,
            n_blocks,
            block,
            rgb_mean: [0.0; 3],
        }
    }

    pub fn edsr_baseline(scale: usize, n_blocks: usize, width: usize) -> Self {
        Self {
            topology: Topology::EdsrBaseline,
            scale,
            n_blocks,
            block: BlockSpec::vanilla(width),
            rgb_mean: [0.0; 3],
        }
    }

    pub fn with_rgb_mean(mut self, mean: [f32; 3]) -> Self {
        self.rgb_mean = mean;
        self
    }

    pub fn body_width(&self) -> usize {
        self.block.width
    }

    pub fn validate(&self) -> Result<()> {
        if !SCALES.contains(&self.scale) {
            return Err(Error::InvalidNet(format!(
                "scale must be one of {SCALES:?}, got {}",
                self.scale
            )));
        }
        if self.n_blocks == 0 {
            return Err(Error::InvalidNet(
                "at least one residual block is required".into(),
            ));
        }
        if self.rgb_mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidNet("rgb mean must be finite".into()));
        }
        if self.topology == Topology::EdsrBaseline && self.block.family != BlockFamily::Vanilla {
            return Err(Error::InvalidNet(format!(
                "edsr-baseline uses vanilla blocks, not {}",
                self.block.family
            )));
        }
        self.block.validate()
    }

    /// A warning when a wdsr-a identity pathway is narrower than the
    /// `3 * S^2` channels the tail has to produce. Allowed, but usually a
    /// mistake outside of tests.
    pub fn narrow_identity_warning(&self) -> Option<String> {
        let need = 3 * self.scale * self.scale;
        let w1 = self.body_width();
        (self.block.family == BlockFamily::WdsrA && w1 < need).then(|| {
            format!(
                "identity pathway width {w1} is below the HR representation size 3*S^2 = {need}"
            )
        })
    }

    /// Pixel-shuffle factors applied in order.
    pub fn shuffle_stages(&self) -> Vec<usize> {
        match (self.topology, self.scale) {
            (Topology::EdsrBaseline, 4) => vec![2, 2],
            _ => vec![self.scale],
        }
    }
}

impl Default for NetSpec {
    fn default() -> Self {
        NetSpec::wdsr(
            2,
            8,
            BlockSpec::wdsr_a(32, 4).with_normalization(Normalization::WeightNorm),
        )
    }
}

fn parse_num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_opt(key: &str, value: &str) -> Result<Option<usize>> {
    match value.trim() {
        "none" | "" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

fn opt_text(v: Option<usize>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

impl NetSpec {
    /// Keys understood by [`NetSpec::set_key`], in [`NetSpec::entries`] order.
    pub const KEYS: [&'static str; 12] = [
        "topology",
        "scale",
        "blocks",
        "family",
        "width",
        "expansion",
        "kernel",
        "normalization",
        "residual_scale",
        "low_rank_width",
        "budget_width",
        "rgb_mean",
    ];

    pub fn set_key(&mut self, key: &str, value: &str) -> Result<()> {
        let b = &mut self.block;
        match key {
            "topology" => self.topology = value.trim().parse()?,
            "scale" => self.scale = parse_num(key, value)?,
            "blocks" => self.n_blocks = parse_num(key, value)?,
            "family" => b.family = value.trim().parse()?,
            "width" => b.width = parse_num(key, value)?,
            "expansion" => b.expansion = parse_num(key, value)?,
            "kernel" => b.kernel = parse_num(key, value)?,
            "normalization" => b.normalization = value.trim().parse()?,
            "residual_scale" => b.residual_scale = parse_num(key, value)?,
            "low_rank_width" => b.low_rank_width = parse_opt(key, value)?,
            "budget_width" => b.budget_width = parse_opt(key, value)?,
            "rgb_mean" => {
                let parts = value
                    .split_whitespace()
                    .map(|v| parse_num::<f32>(key, v))
                    .collect::<Result<Vec<_>>>()?;
                self.rgb_mean = parts.try_into().map_err(|_| {
                    Error::Config(format!("`rgb_mean` needs three values, got `{value}`"))
                })?;
            }
            _ => return Err(Error::Config(format!("unknown network key `{key}`"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)`; values re-parse exactly.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let b = &self.block;
        let [r, g, bl] = self.rgb_mean;
        let values = [
            self.topology.to_string(),
            self.scale.to_string(),
            self.n_blocks.to_string(),
            b.family.to_string(),
            b.width.to_string(),
            b.expansion.to_string(),
            b.kernel.to_string(),
            b.normalization.to_string(),
            b.residual_scale.to_string(),
            opt_text(b.low_rank_width),
            opt_text(b.budget_width),
            format!("{r} {g} {bl}"),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = NetSpec::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("network line without `=`: `{line}`")))?;
            spec.set_key(k.trim(), v)?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tail<T: Element> {
    Wdsr {
        body_out: ConvLayer<T>,
        skip: ConvLayer<T>,
    },
    Edsr {
        body_end: ConvLayer<T>,
        upsampler: Vec<(ConvLayer<T>, usize)>,
        out: ConvLayer<T>,
    },
}

/// A convolution together with the spatial factor (relative to the LR
/// input) it runs at.
#[derive(Debug)]
pub struct PlacedConv<'a, T: Element> {
    pub layer: &'a ConvLayer<T>,
    pub resolution_factor: usize,
}

/// Network structure plus its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Element = f32> {
    pub spec: NetSpec,
    pub params: ParamStore<T>,
    head: ConvLayer<T>,
    blocks: Vec<ResidualBlock<T>>,
    tail: Tail<T>,
}

impl<T: Element> Model<T> {
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let s2 = spec.scale * spec.scale;
        let w1 = spec.body_width();
        let outer = match spec.block.normalization {
            Normalization::WeightNorm => Normalization::WeightNorm,
            _ => Normalization::Plain,
        };
        let mut params = ParamStore::new();
        let head = ConvLayer::new(&mut params, "head", 3, w1, 3, outer, rng)?;
        let blocks = (0..spec.n_blocks)
            .map(|i| build_block(&spec.block, &mut params, &format!("body.{i}"), rng))
            .collect::<Result<Vec<_>>>()?;
        let tail = match spec.topology {
            Topology::Wdsr => Tail::Wdsr {
                body_out: ConvLayer::new(&mut params, "tail", w1, 3 * s2, 3, outer, rng)?,
                skip: ConvLayer::new(&mut params, "skip", 3, 3 * s2, 5, outer, rng)?,
            },
            Topology::EdsrBaseline => {
                let body_end = ConvLayer::new(&mut params, "body_end", w1, w1, 3, outer, rng)?;
                let upsampler = spec
                    .shuffle_stages()
                    .into_iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let name = format!("upsample.{i}");
                        ConvLayer::new(&mut params, &name, w1, w1 * f * f, 3, outer, rng)
                            .map(|c| (c, f))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Tail::Edsr {
                    body_end,
                    upsampler,
                    out: ConvLayer::new(&mut params, "tail", w1, 3, 3, outer, rng)?,
                }
            }
        };
        Ok(Self {
            spec,
            params,
            head,
            blocks,
            tail,
        })
    }

    pub fn from_seed(spec: NetSpec, seed: u64) -> Result<Self> {
        Self::new(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Maps `(N, 3, H, W)` pixel-space input to `(N, 3, S*H, S*W)`.
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: BnMode) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::InvalidShape {
                op: "model",
                msg: format!("expected (N, 3, H, W) input, got {shape:?}"),
            });
        }
        let mean = Tensor::new(
            [3],
            self.spec.rgb_mean.map(|m| T::from_f64(m as f64)).to_vec(),
        )?;
        let neg_mean = g.constant(mean.map(|v| -v));
        let mean = g.constant(mean);
        let input = g.add_channel(x, neg_mean)?;

        let store = &self.params;
        let feat = self.head.forward(g, store, input, mode)?;
        let mut h = feat;
        for block in &mut self.blocks {
            h = block.forward(g, store, h, mode)?;
        }
        let out = match &mut self.tail {
            Tail::Wdsr { body_out, skip } => {
                let body = body_out.forward(g, store, h, mode)?;
                let body = g.pixel_shuffle(body, self.spec.scale)?;
                let res = skip.forward(g, store, input, mode)?;
                let res = g.pixel_shuffle(res, self.spec.scale)?;
                g.add(body, res)?
            }
            Tail::Edsr {
                body_end,
                upsampler,
                out,
            } => {
                let body = body_end.forward(g, store, h, mode)?;
                let mut h = g.add(body, feat)?;
                for (conv, factor) in upsampler.iter_mut() {
                    h = conv.forward(g, store, h, mode)?;
                    h = g.pixel_shuffle(h, *factor)?;
                }
                out.forward(g, store, h, mode)?
            }
        };
        g.add_channel(out, mean)
    }

    /// Inference on a plain tensor; batch norm uses running statistics.
    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, xv, BnMode::Infer)?;
        Ok(g.value(y).clone())
    }

    /// Every convolution in execution order with its resolution factor.
    pub fn convs(&self) -> Vec<PlacedConv<'_, T>> {
        let lr = |layer| PlacedConv {
            layer,
            resolution_factor: 1,
        };
        let mut out = vec![lr(&self.head)];
        out.extend(self.blocks.iter().flat_map(|b| b.convs.iter().map(lr)));
        match &self.tail {
            Tail::Wdsr { body_out, skip } => {
                out.push(lr(body_out));
                out.push(lr(skip));
            }
            Tail::Edsr {
                body_end,
                upsampler,
                out: last,
            } => {
                out.push(lr(body_end));
                let mut factor = 1;
                for (conv, f) in upsampler {
                    out.push(PlacedConv {
                        layer: conv,
                        resolution_factor: factor,
                    });
                    factor *= f;
                }
                out.push(PlacedConv {
                    layer: last,
                    resolution_factor: factor,
                });
            }
        }
        out
    }

    fn convs_mut(&mut self) -> Vec<&mut ConvLayer<T>> {
        let mut out = vec![&mut self.head];
        out.extend(self.blocks.iter_mut().flat_map(|b| b.convs.iter_mut()));
        match &mut self.tail {
            Tail::Wdsr { body_out, skip } => {
                out.push(body_out);
                out.push(skip);
            }
            Tail::Edsr {
                body_end,
                upsampler,
                out: last,
            } => {
                out.push(body_end);
                out.extend(upsampler.iter_mut().map(|(c, _)| c));
                out.push(last);
            }
        }
        out
    }

    pub fn blocks(&self) -> &[ResidualBlock<T>] {
        &self.blocks
    }

    /// Zeroes the effective kernels of the body path (head, blocks, body
    /// output), leaving the wdsr global skip untouched.
    pub fn zero_body(&mut self) {
        let store = &mut self.params;
        self.head.zero_kernel(store);
        self.blocks.iter().for_each(|b| b.zero_kernels(store));
        match &self.tail {
            Tail::Wdsr { body_out, .. } => body_out.zero_kernel(store),
            Tail::Edsr {
                body_end,
                upsampler,
                out,
            } => {
                body_end.zero_kernel(store);
                upsampler.iter().for_each(|(c, _)| c.zero_kernel(store));
                out.zero_kernel(store);
            }
        }
    }

    pub fn zero_all_kernels(&mut self) {
        self.zero_body();
        if let Tail::Wdsr { skip, .. } = &self.tail {
            skip.zero_kernel(&mut self.params);
        }
    }

    /// Output of the wdsr global skip path alone, `shuffle(conv5(x - mean)) + mean`.
    pub fn skip_path(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let Tail::Wdsr { skip, .. } = &mut self.tail else {
            return Err(Error::InvalidNet(
                "edsr-baseline has no global skip conv".into(),
            ));
        };
        let mut g = Graph::new();
        let mean = Tensor::new(
            [3],
            self.spec.rgb_mean.map(|m| T::from_f64(m as f64)).to_vec(),
        )?;
        let xv = g.constant(x.clone());
        let neg = g.constant(mean.map(|v| -v));
        let mv = g.constant(mean);
        let input = g.add_channel(xv, neg)?;
        let res = skip.forward(&mut g, &self.params, input, BnMode::Infer)?;
        let res = g.pixel_shuffle(res, self.spec.scale)?;
        let out = g.add_channel(res, mv)?;
        Ok(g.value(out).clone())
    }

    pub fn bn_states(&self) -> Vec<(&str, &BatchNormState<T>)> {
        self.convs()
            .into_iter()
            .filter_map(|c| c.layer.bn_state().map(|s| (c.layer.name.as_str(), s)))
            .collect()
    }

    /// Non-trainable tensors (batch-norm running statistics) by name.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (name, s) in self.bn_states() {
            if let Some(m) = &s.running_mean {
                out.push((format!("{name}.bn.running_mean"), m));
            }
            if let Some(v) = &s.running_var {
                out.push((format!("{name}.bn.running_var"), v));
            }
        }
        out
    }

    /// Restores one buffer reported by [`Model::buffers`].
    pub fn set_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        for conv in self.convs_mut() {
            let prefix = format!("{}.bn.", conv.name);
            let Some(stat) = name.strip_prefix(&prefix) else {
                continue;
            };
            let state = conv
                .bn_state_mut()
                .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
            if value.shape() != [state.channels] {
                return Err(Error::ShapeMismatch {
                    op: "set_buffer",
                    lhs: vec![state.channels],
                    rhs: value.shape().to_vec(),
                });
            }
            match stat {
                "running_mean" => state.running_mean = Some(value),
                "running_var" => state.running_var = Some(value),
                _ => return Err(Error::UnknownParam(name.to_string())),
            }
            return Ok(());
        }
        Err(Error::UnknownParam(name.to_string()))
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        let tail = match &self.tail {
            Tail::Wdsr { body_out, skip } => Tail::Wdsr {
                body_out: body_out.cast(),
                skip: skip.cast(),
            },
            Tail::Edsr {
                body_end,
                upsampler,
                out,
            } => Tail::Edsr {
                body_end: body_end.cast(),
                upsampler: upsampler.iter().map(|(c, f)| (c.cast(), *f)).collect(),
                out: out.cast(),
            },
        };
        Model {
            spec: self.spec.clone(),
            params: self.params.cast(),
            head: self.head.cast(),
            blocks: self.blocks.iter().map(ResidualBlock::cast).collect(),
            tail,
        }
    }
}
