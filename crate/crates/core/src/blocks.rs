//! Residual block families and the width arithmetic that keeps them on a
//! common parameter budget.
//!
//! * vanilla: `conv k (w1->w1) -> ReLU -> conv k (w1->w1)`
//! * wdsr-a: `conv k (w1->r*w1) -> ReLU -> conv k (r*w1->w1)`
//! * wdsr-b: `conv 1 (w1->r*w1) -> ReLU -> conv 1 (r*w1->m) -> conv k (m->w1)`,
//!   where the last two form a linear low-rank convolution with no activation
//!   between them.
//!
//! Every block adds its body output back onto the `w1`-wide identity pathway.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{ConvLayer, Normalization};
use crate::nnops::BnMode;
use crate::params::ParamStore;

/// Largest expansion for which wdsr-a still helps; beyond it the identity
/// pathway becomes too slim.
pub const WDSR_A_ADVISED_MAX_EXPANSION: usize = 4;
pub const WDSR_B_MAX_EXPANSION: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockFamily {
    Vanilla,
    WdsrA,
    WdsrB,
}

impl BlockFamily {
    pub const ALL: [BlockFamily; 3] =
        [BlockFamily::Vanilla, BlockFamily::WdsrA, BlockFamily::WdsrB];
}

impl fmt::Display for BlockFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockFamily::Vanilla => "vanilla",
            BlockFamily::WdsrA => "wdsr-a",
            BlockFamily::WdsrB => "wdsr-b",
        })
    }
}

impl FromStr for BlockFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(BlockFamily::Vanilla),
            "wdsr-a" => Ok(BlockFamily::WdsrA),
            "wdsr-b" => Ok(BlockFamily::WdsrB),
            _ => Err(Error::Config(format!(
                "unknown block family `{s}` (vanilla | wdsr-a | wdsr-b)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub family: BlockFamily,
    /// Identity pathway width `w1`.
    pub width: usize,
    /// Expansion factor `r`; the activated tensor has `r * w1` channels.
    pub expansion: usize,
    pub kernel: usize,
    pub normalization: Normalization,
    pub residual_scale: f32,
    /// wdsr-b only: explicit width of the low-rank pair.
    pub low_rank_width: Option<usize>,
    /// Vanilla width this block is budget-matched to; for wdsr-b the
    /// low-rank width is solved against it.
    pub budget_width: Option<usize>,
}

impl BlockSpec {
    fn base(family: BlockFamily, width: usize, expansion: usize) -> Self {
        Self {
            family,
            width,
            expansion,
            kernel: 3,
            normalization: Normalization::Plain,
            residual_scale: 1.0,
            low_rank_width: None,
            budget_width: None,
        }
    }

    pub fn vanilla(width: usize) -> Self {
        Self::base(BlockFamily::Vanilla, width, 1)
    }

    pub fn wdsr_a(width: usize, expansion: usize) -> Self {
        Self::base(BlockFamily::WdsrA, width, expansion)
    }

    /// wdsr-a slimmed from a vanilla baseline width via [`match_widths`].
    pub fn wdsr_a_matched(baseline_width: usize, expansion: usize) -> Result<Self> {
        let (slim, _) = match_widths(baseline_width, expansion)?;
        Ok(Self {
            budget_width: Some(baseline_width),
            ..Self::wdsr_a(slim, expansion)
        })
    }

    pub fn wdsr_b(width: usize, expansion: usize, budget_width: usize) -> Self {
        Self {
            budget_width: Some(budget_width),
            ..Self::base(BlockFamily::WdsrB, width, expansion)
        }
    }

    pub fn with_normalization(mut self, norm: Normalization) -> Self {
        self.normalization = norm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::InvalidBlock(
                "identity pathway width must be >= 1".into(),
            ));
        }
        if self.expansion == 0 {
            return Err(Error::InvalidBlock("expansion factor must be >= 1".into()));
        }
        if self.kernel.is_multiple_of(2) || !crate::nnops::KERNEL_SIZES.contains(&self.kernel) {
            return Err(Error::InvalidBlock(format!(
                "unsupported kernel {}",
                self.kernel
            )));
        }
        if !self.residual_scale.is_finite() {
            return Err(Error::InvalidBlock("residual scale must be finite".into()));
        }
        let b_only = self.low_rank_width.is_some()
            || (self.family == BlockFamily::Vanilla && self.budget_width.is_some());
        match self.family {
            BlockFamily::Vanilla if self.expansion != 1 => Err(Error::InvalidBlock(format!(
                "vanilla blocks have no expansion (got r = {})",
                self.expansion
            ))),
            BlockFamily::WdsrB if self.expansion > WDSR_B_MAX_EXPANSION => {
                Err(Error::InvalidBlock(format!(
                    "wdsr-b expansion must be in 1..={WDSR_B_MAX_EXPANSION}, got {}",
                    self.expansion
                )))
            }
            BlockFamily::WdsrB => self.low_rank_width().map(|_| ()),
            _ if b_only => Err(Error::InvalidBlock(format!(
                "low-rank settings only apply to wdsr-b, not {}",
                self.family
            ))),
            _ => Ok(()),
        }
    }

    /// Channel count of the activated tensor.
    pub fn activation_width(&self) -> usize {
        self.width * self.expansion
    }

    /// Width `m` of the linear low-rank pair (wdsr-b).
    pub fn low_rank_width(&self) -> Result<usize> {
        match (self.low_rank_width, self.budget_width) {
            (Some(0), _) => Err(Error::InvalidBlock("low-rank width must be >= 1".into())),
            (Some(m), _) => Ok(m),
            (None, Some(b)) => solve_low_rank_width(self.width, self.expansion, self.kernel, b),
            (None, None) => Err(Error::InvalidBlock(
                "wdsr-b needs either a low-rank width or a budget width".into(),
            )),
        }
    }

    /// Convolutions of the residual body in order, as `(cin, cout, kernel)`.
    /// The single ReLU follows the first entry.
    pub fn conv_plan(&self) -> Result<Vec<(usize, usize, usize)>> {
        self.validate()?;
        let (w1, wide, k) = (self.width, self.activation_width(), self.kernel);
        Ok(match self.family {
            BlockFamily::Vanilla => vec![(w1, w1, k), (w1, w1, k)],
            BlockFamily::WdsrA => vec![(w1, wide, k), (wide, w1, k)],
            BlockFamily::WdsrB => {
                let m = self.low_rank_width()?;
                vec![(w1, wide, 1), (wide, m, 1), (m, w1, k)]
            }
        })
    }

    /// Kernel weights of the block, biases excluded.
    pub fn weight_count(&self) -> Result<usize> {
        Ok(self
            .conv_plan()?
            .iter()
            .map(|(ci, co, k)| ci * co * k * k)
            .sum())
    }
}

/// `2 * w1^2 * k^2`: kernel weights of a vanilla block.
pub fn vanilla_block_weights(width: usize, kernel: usize) -> usize {
    2 * width * width * kernel * kernel
}

/// Slims a vanilla width `w1` by `sqrt(r)` and expands the activation to
/// `r * w1_hat`, so that `w1_hat * w2_hat ~= w1^2`.
pub fn match_widths(baseline_width: usize, expansion: usize) -> Result<(usize, usize)> {
    if expansion == 0 {
        return Err(Error::InvalidBlock("expansion factor must be >= 1".into()));
    }
    let slim = (baseline_width as f64 / (expansion as f64).sqrt()).round() as usize;
    if slim < 1 {
        return Err(Error::InvalidBlock(format!(
            "slimming width {baseline_width} by sqrt({expansion}) leaves no channels"
        )));
    }
    Ok((slim, slim * expansion))
}

/// Largest low-rank width `m` with
/// `w1*(r*w1) + (r*w1)*m + k^2*m*w1 <= 2*k^2*budget^2`.
pub fn solve_low_rank_width(
    width: usize,
    expansion: usize,
    kernel: usize,
    budget_width: usize,
) -> Result<usize> {
    let target = vanilla_block_weights(budget_width, kernel);
    let wide = width * expansion;
    let expand = width * wide;
    let per_unit = wide + kernel * kernel * width;
    if target <= expand || per_unit == 0 {
        return Err(Error::BudgetInfeasible(format!(
            "expand conv alone uses {expand} of {target} weights"
        )));
    }
    let m = (target - expand) / per_unit;
    if m < 1 {
        return Err(Error::BudgetInfeasible(format!(
            "w1={width}, r={expansion}, budget width {budget_width}"
        )));
    }
    Ok(m)
}

/// A residual block instantiated against a parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T: Element> {
    pub spec: BlockSpec,
    pub convs: Vec<ConvLayer<T>>,
}

pub fn build_vanilla_block<T: Element, R: Rng + ?Sized>(
    spec: &BlockSpec,
    store: &mut ParamStore<T>,
    name: &str,
    rng: &mut R,
) -> Result<ResidualBlock<T>> {
    expect_family(spec, BlockFamily::Vanilla)?;
    instantiate(spec, store, name, rng)
}

pub fn build_wdsr_a_block<T: Element, R: Rng + ?Sized>(
    spec: &BlockSpec,
    store: &mut ParamStore<T>,
    name: &str,
    rng: &mut R,
) -> Result<ResidualBlock<T>> {
    expect_family(spec, BlockFamily::WdsrA)?;
    if spec.expansion > WDSR_A_ADVISED_MAX_EXPANSION {
        log::warn!(
            "{name}: wdsr-a expansion {} exceeds the advised maximum of {}",
            spec.expansion,
            WDSR_A_ADVISED_MAX_EXPANSION
        );
    }
    instantiate(spec, store, name, rng)
}

pub fn build_wdsr_b_block<T: Element, R: Rng + ?Sized>(
    spec: &BlockSpec,
    store: &mut ParamStore<T>,
    name: &str,
    rng: &mut R,
) -> Result<ResidualBlock<T>> {
    expect_family(spec, BlockFamily::WdsrB)?;
    let m = spec.low_rank_width()?;
    if m > spec.activation_width() {
        log::warn!(
            "{name}: low-rank width {m} exceeds the activated width {}",
            spec.activation_width()
        );
    }
    instantiate(spec, store, name, rng)
}

/// Dispatches on the block family.
pub fn build_block<T: Element, R: Rng + ?Sized>(
    spec: &BlockSpec,
    store: &mut ParamStore<T>,
    name: &str,
    rng: &mut R,
) -> Result<ResidualBlock<T>> {
    match spec.family {
        BlockFamily::Vanilla => build_vanilla_block(spec, store, name, rng),
        BlockFamily::WdsrA => build_wdsr_a_block(spec, store, name, rng),
        BlockFamily::WdsrB => build_wdsr_b_block(spec, store, name, rng),
    }
}

fn expect_family(spec: &BlockSpec, family: BlockFamily) -> Result<()> {
    if spec.family != family {
        return Err(Error::InvalidBlock(format!(
            "expected a {family} spec, got {}",
            spec.family
        )));
    }
    spec.validate()
}

fn instantiate<T: Element, R: Rng + ?Sized>(
    spec: &BlockSpec,
    store: &mut ParamStore<T>,
    name: &str,
    rng: &mut R,
) -> Result<ResidualBlock<T>> {
    let convs = spec
        .conv_plan()?
        .into_iter()
        .enumerate()
        .map(|(i, (ci, co, k))| {
            ConvLayer::new(
                store,
                &format!("{name}.conv{i}"),
                ci,
                co,
                k,
                spec.normalization,
                rng,
            )
        })
        .collect::<Result<_>>()?;
    Ok(ResidualBlock {
        spec: spec.clone(),
        convs,
    })
}

impl<T: Element> ResidualBlock<T> {
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: BnMode,
    ) -> Result<Var> {
        let mut h = x;
        for (i, conv) in self.convs.iter_mut().enumerate() {
            h = conv.forward(g, store, h, mode)?;
            if i == 0 {
                h = g.relu(h)?;
            }
        }
        if self.spec.residual_scale != 1.0 {
            h = g.scale(h, self.spec.residual_scale as f64)?;
        }
        g.add(x, h)
    }

    pub fn weight_count(&self) -> usize {
        self.convs.iter().map(ConvLayer::weight_count).sum()
    }

    pub fn zero_kernels(&self, store: &mut ParamStore<T>) {
        self.convs.iter().for_each(|c| c.zero_kernel(store));
    }

    pub fn cast<U: Element>(&self) -> ResidualBlock<U> {
        ResidualBlock {
            spec: self.spec.clone(),
            convs: self.convs.iter().map(ConvLayer::cast).collect(),
        }
    }
}
