use rand::Rng;

use crate::data::{ImageBuf, Manifest};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::augment::Dihedral;

/// Aligned HR/LR images held as planar floats for fast cropping.
#[derive(Clone, Debug)]
pub struct PairSet {
    pub scale: usize,
    hr: Vec<Tensor<f32>>,
    lr: Vec<Tensor<f32>>,
}

impl PairSet {
    pub fn new(pairs: &[(ImageBuf, ImageBuf)], scale: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        for (hr, lr) in pairs {
            if (lr.width(), lr.height()) != (hr.width() / scale, hr.height() / scale) {
                return Err(Error::Data(format!(
                    "LR {}x{} does not match HR {}x{} at scale {scale}",
                    lr.width(),
                    lr.height(),
                    hr.width(),
                    hr.height()
                )));
            }
        }
        Ok(Self {
            scale,
            hr: pairs.iter().map(|(h, _)| h.to_tensor()).collect(),
            lr: pairs.iter().map(|(_, l)| l.to_tensor()).collect(),
        })
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let scale = m
            .scale()
            .ok_or_else(|| Error::Data("manifest has no records or mixed scales".into()))?;
        Self::new(&m.load_pairs()?, scale)
    }

    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    /// Smallest LR side over all images.
    pub fn min_lr_side(&self) -> usize {
        self.lr
            .iter()
            .map(|t| t.shape()[2].min(t.shape()[3]))
            .min()
            .unwrap_or(0)
    }

    /// Draws `batch` aligned patches with replacement: image uniform, LR
    /// top-left corner uniform, HR corner at `scale` times it. Returns
    /// `(lr, hr)` batches.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        batch: usize,
        hr_patch: usize,
        augment: bool,
    ) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let s = self.scale;
        if hr_patch == 0 || !hr_patch.is_multiple_of(s) {
            return Err(Error::Config(format!(
                "patch size {hr_patch} must be a positive multiple of scale {s}"
            )));
        }
        let lp = hr_patch / s;
        if lp > self.min_lr_side() {
            return Err(Error::Data(format!(
                "LR patch {lp} exceeds the smallest LR image side {}",
                self.min_lr_side()
            )));
        }
        let mut lr_data = Vec::with_capacity(batch * 3 * lp * lp);
        let mut hr_data = Vec::with_capacity(batch * 3 * hr_patch * hr_patch);
        for _ in 0..batch {
            let i = rng.random_range(0..self.len());
            let (lr, hr) = (&self.lr[i], &self.hr[i]);
            let (lh, lw) = (lr.shape()[2], lr.shape()[3]);
            let y = rng.random_range(0..=lh - lp);
            let x = rng.random_range(0..=lw - lp);
            let mut lr_patch = crop_planes(lr, y, x, lp);
            let mut hr_patch_data = crop_planes(hr, y * s, x * s, hr_patch);
            if augment {
                let d = Dihedral::random(rng);
                lr_patch = d.apply_planes(&lr_patch, 3, lp, lp);
                hr_patch_data = d.apply_planes(&hr_patch_data, 3, hr_patch, hr_patch);
            }
            lr_data.extend(lr_patch);
            hr_data.extend(hr_patch_data);
        }
        Ok((
            Tensor::new([batch, 3, lp, lp], lr_data)?,
            Tensor::new([batch, 3, hr_patch, hr_patch], hr_data)?,
        ))
    }
}

fn crop_planes(t: &Tensor<f32>, y0: usize, x0: usize, size: usize) -> Vec<f32> {
    let w = t.shape()[3];
    let mut out = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        let plane = t.plane(0, c);
        for y in y0..y0 + size {
            out.extend_from_slice(&plane[y * w + x0..y * w + x0 + size]);
        }
    }
    out
}
