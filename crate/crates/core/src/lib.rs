//! Super-resolution training engine built around wide-activation residual
//! blocks, linear low-rank convolution and weight normalization.

pub mod blocks;
pub mod budget;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod network;
pub mod nnops;
pub mod parallel;
pub mod params;
pub mod tensor;
pub mod train;

pub use element::Element;
pub use error::{Error, ErrorCategory, Result};
pub use graph::{Graph, OpKind, Var};
pub use tensor::Tensor;
