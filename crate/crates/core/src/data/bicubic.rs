//! Separable bicubic resampling.
//!
//! Kernel parameter `a = -0.5`, half-pixel centers, clamped edges. When
//! shrinking, the kernel is stretched by the scale ratio so it also acts as
//! an antialiasing filter.

use crate::data::image::{quantize, ImageBuf};
use crate::error::{Error, Result};

pub const CUBIC_A: f64 = -0.5;

pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Source taps and normalized weights for one output sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Taps {
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

/// Tap table for resampling an axis of `len_in` samples to `len_out`.
pub fn axis_taps(len_in: usize, len_out: usize) -> Vec<Taps> {
    let ratio = len_in as f64 / len_out as f64;
    let stretch = ratio.max(1.0);
    let support = 2.0 * stretch;
    (0..len_out)
        .map(|i| {
            let center = (i as f64 + 0.5) * ratio - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut index = Vec::new();
            let mut weight = Vec::new();
            for j in lo..=hi {
                let wgt = cubic((j as f64 - center) / stretch);
                if wgt != 0.0 {
                    index.push(j.clamp(0, len_in as isize - 1) as usize);
                    weight.push(wgt);
                }
            }
            let total: f64 = weight.iter().sum();
            weight.iter_mut().for_each(|w| *w /= total);
            Taps { index, weight }
        })
        .collect()
}

pub fn bicubic_resize(img: &ImageBuf, width: usize, height: usize) -> Result<ImageBuf> {
    if width == 0 || height == 0 {
        return Err(Error::Data("resize target must be at least 1x1".into()));
    }
    let (w_in, h_in) = (img.width(), img.height());
    let src = img.data();
    let cols = axis_taps(w_in, width);
    let rows = axis_taps(h_in, height);

    // horizontal pass, kept in floating point
    let mut mid = vec![0.0f64; h_in * width * 3];
    for y in 0..h_in {
        for (x, taps) in cols.iter().enumerate() {
            let out = &mut mid[(y * width + x) * 3..][..3];
            for (&j, &wgt) in taps.index.iter().zip(&taps.weight) {
                let px = &src[(y * w_in + j) * 3..][..3];
                for c in 0..3 {
                    out[c] += wgt * px[c] as f64;
                }
            }
        }
    }
    let mut data = Vec::with_capacity(width * height * 3);
    for taps in &rows {
        for x in 0..width {
            let mut acc = [0.0f64; 3];
            for (&j, &wgt) in taps.index.iter().zip(&taps.weight) {
                let px = &mid[(j * width + x) * 3..][..3];
                for c in 0..3 {
                    acc[c] += wgt * px[c];
                }
            }
            data.extend(acc.map(quantize));
        }
    }
    ImageBuf::new(width, height, data)
}

pub fn bicubic_downsample(img: &ImageBuf, scale: usize) -> Result<ImageBuf> {
    if scale == 0 || !img.width().is_multiple_of(scale) || !img.height().is_multiple_of(scale) {
        return Err(Error::Data(format!(
            "{}x{} image is not divisible by scale {scale}",
            img.width(),
            img.height()
        )));
    }
    if scale == 1 {
        return Ok(img.clone());
    }
    bicubic_resize(img, img.width() / scale, img.height() / scale)
}

pub fn bicubic_upsample(img: &ImageBuf, scale: usize) -> Result<ImageBuf> {
    if scale == 0 {
        return Err(Error::Data("scale must be at least 1".into()));
    }
    bicubic_resize(img, img.width() * scale, img.height() * scale)
}
