//! Sub-pixel rearrangement between `(N, C*S*S, H, W)` and `(N, C, S*H, S*W)`.
//!
//! Channel ordering: `out[n, c, S*h + dy, S*w + dx] = in[n, c*S*S + dy*S + dx, h, w]`.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

pub(crate) fn pixel_shuffle_forward<T: Element>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, cs, h, w] = x.dims4("pixel_shuffle")?;
    if s == 0 || cs % (s * s) != 0 {
        return Err(Error::InvalidShape {
            op: "pixel_shuffle",
            msg: format!("{cs} channels not divisible by {s}^2"),
        });
    }
    let c = cs / (s * s);
    let (oh, ow) = (h * s, w * s);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for co in 0..c {
            for dy in 0..s {
                for dx in 0..s {
                    let ci = co * s * s + dy * s + dx;
                    let plane = &src[(b * cs + ci) * h * w..(b * cs + ci + 1) * h * w];
                    let base = (b * c + co) * oh * ow;
                    for y in 0..h {
                        let row = base + (s * y + dy) * ow + dx;
                        for xx in 0..w {
                            out[row + s * xx] = plane[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n, c, oh, ow], out)
}

pub(crate) fn pixel_unshuffle_forward<T: Element>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = x.dims4("pixel_unshuffle")?;
    if s == 0 || oh % s != 0 || ow % s != 0 {
        return Err(Error::InvalidShape {
            op: "pixel_unshuffle",
            msg: format!("spatial extent {oh}x{ow} not divisible by {s}"),
        });
    }
    let (h, w, cs) = (oh / s, ow / s, c * s * s);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..n {
        for co in 0..c {
            for dy in 0..s {
                for dx in 0..s {
                    let ci = co * s * s + dy * s + dx;
                    let dst = (b * cs + ci) * h * w;
                    let base = (b * c + co) * oh * ow;
                    for y in 0..h {
                        let row = base + (s * y + dy) * ow + dx;
                        for xx in 0..w {
                            out[dst + y * w + xx] = src[row + s * xx];
                        }
                    }
                }
            }
        }
    }
    Tensor::new([n, cs, h, w], out)
}

/// Standalone pixel shuffle on a plain tensor.
pub fn pixel_shuffle<T: Element>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    pixel_shuffle_forward(x, factor)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Element>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    pixel_unshuffle_forward(x, factor)
}

impl<T: Element> Graph<T> {
    pub fn pixel_shuffle(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = pixel_shuffle_forward(self.value(x), factor)?;
        self.record(out, Op::PixelShuffle { x, factor })
    }

    pub fn pixel_unshuffle(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = pixel_unshuffle_forward(self.value(x), factor)?;
        self.record(out, Op::PixelUnshuffle { x, factor })
    }
}
