//! Neural operators: convolution, pixel shuffle, and the weight
//! parameterizations (plain, weight-normalized, batch-normalized).

pub mod batch_norm;
pub(crate) mod conv;
pub mod shuffle;
pub mod weight_norm;

pub use batch_norm::{
    batch_norm_infer, batch_norm_train, BatchNormState, BatchStats, BnMode, DEFAULT_EPS,
    DEFAULT_MOMENTUM,
};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
pub use weight_norm::{channel_norms, WeightNormParams};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Kernel extents accepted by the network builders.
pub const KERNEL_SIZES: [usize; 3] = [1, 3, 5];

/// Weights and bias of a plain stride-1 same-padded convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Conv2dParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let [cout, _, kh, kw] = weight.dims4("conv2d")?;
        if !KERNEL_SIZES.contains(&kh) || !KERNEL_SIZES.contains(&kw) {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("kernel {kh}x{kw} not in {KERNEL_SIZES:?}"),
            });
        }
        if bias.shape() != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: vec![cout],
                rhs: bias.shape().to_vec(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn padding(&self) -> usize {
        self.weight.shape()[2] / 2
    }
}

/// Graph-free convolution, for inference and tests.
pub fn conv2d<T: Element>(x: &Tensor<T>, p: &Conv2dParams<T>) -> Result<Tensor<T>> {
    conv::conv2d_forward(x, &p.weight, Some(&p.bias))
}
