//! Images, bicubic degradation, dataset manifests and preparation.

pub mod bicubic;
pub mod image;
pub mod manifest;
pub mod prepare;
pub mod synth;

pub use self::bicubic::{bicubic_downsample, bicubic_resize, bicubic_upsample};
pub use self::image::ImageBuf;
pub use self::manifest::{Manifest, Record, Split};
pub use self::prepare::{prepare_dataset, Prepared};
