//! The eight symmetries of the square, applied to planar `(C, H, W)` data.

use rand::Rng;

use crate::element::Element;
use crate::error::Result;
use crate::tensor::Tensor;

/// Optional horizontal mirror followed by `quarter_turns` counter-clockwise
/// rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        flip: false,
        quarter_turns: 0,
    };

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8u8).map(Dihedral::from_index)
    }

    pub fn from_index(i: u8) -> Self {
        Self {
            flip: i >= 4,
            quarter_turns: i % 4,
        }
    }

    pub fn index(self) -> u8 {
        self.quarter_turns % 4 + if self.flip { 4 } else { 0 }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_index(rng.random_range(0..8))
    }

    pub fn inverse(self) -> Self {
        if self.flip {
            // every reflection is an involution
            self
        } else {
            Self {
                flip: false,
                quarter_turns: (4 - self.quarter_turns % 4) % 4,
            }
        }
    }

    /// Output extents for an `h x w` input.
    pub fn output_hw(self, h: usize, w: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    /// Source coordinate feeding output pixel `(y, x)` of an `h x w` input.
    fn source(self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        // undo the rotations one quarter turn at a time, then the mirror
        let (mut y, mut x) = (y, x);
        let (mut oh, mut ow) = self.output_hw(h, w);
        for _ in 0..self.quarter_turns % 4 {
            // output of a CCW turn: (y', x') = (W - 1 - x, y) on an (W, H) grid
            let (py, px) = (x, oh - 1 - y);
            (y, x) = (py, px);
            (oh, ow) = (ow, oh);
        }
        debug_assert_eq!((oh, ow), (h, w));
        if self.flip {
            x = w - 1 - x;
        }
        (y, x)
    }

    pub fn apply_planes<T: Copy>(self, data: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
        let (oh, ow) = self.output_hw(h, w);
        let mut out = Vec::with_capacity(data.len());
        for ch in 0..c {
            let plane = &data[ch * h * w..][..h * w];
            for y in 0..oh {
                for x in 0..ow {
                    let (sy, sx) = self.source(y, x, h, w);
                    out.push(plane[sy * w + sx]);
                }
            }
        }
        out
    }

    /// Applies to every sample of an `(N, C, H, W)` tensor.
    pub fn apply<T: Element>(self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = t.dims4("dihedral")?;
        let (oh, ow) = self.output_hw(h, w);
        let per = c * h * w;
        let mut data = Vec::with_capacity(t.len());
        for i in 0..n {
            data.extend(self.apply_planes(&t.data()[i * per..][..per], c, h, w));
        }
        Tensor::new([n, c, oh, ow], data)
    }
}

/// One random transform applied identically to an HR/LR patch pair.
pub fn augment<T: Element, R: Rng + ?Sized>(
    hr: &Tensor<T>,
    lr: &Tensor<T>,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let t = Dihedral::random(rng);
    Ok((t.apply(hr)?, t.apply(lr)?))
}
