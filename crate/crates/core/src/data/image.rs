use std::path::Path;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit RGB image, row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuf {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Data(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w as usize, h as usize, rgb.into_raw())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Data(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(width, height, |x, y| {
            self.pixel(x0 + x, y0 + y)
        }))
    }

    /// Largest top-left crop whose sides are multiples of `factor`.
    pub fn crop_to_multiple(&self, factor: usize) -> Result<Self> {
        let (w, h) = (self.width / factor * factor, self.height / factor * factor);
        self.crop(0, 0, w, h)
    }

    /// Per-channel sums, for dataset means.
    pub fn channel_sums(&self) -> [f64; 3] {
        let mut acc = [0u64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += px[c] as u64;
            }
        }
        acc.map(|v| v as f64)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Planar `(1, 3, H, W)` tensor with values in 0..=255.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        Tensor::from_fn([1, 3, self.height, self.width], |i| {
            let (c, p) = (i / plane, i % plane);
            T::from_f64(self.data[p * 3 + c] as f64)
        })
    }

    /// Sample `n` of a `(N, 3, H, W)` tensor, clipped to 0..=255 and rounded.
    pub fn from_tensor<T: Element>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let [batch, c, h, w] = t.dims4("image")?;
        if c != 3 || n >= batch {
            return Err(Error::InvalidShape {
                op: "image",
                msg: format!("cannot take RGB sample {n} from {:?}", t.shape()),
            });
        }
        let planes: Vec<&[T]> = (0..3).map(|c| t.plane(n, c)).collect();
        let mut data = Vec::with_capacity(w * h * 3);
        for p in 0..w * h {
            for plane in &planes {
                data.push(quantize(plane[p].as_f64()));
            }
        }
        Self::new(w, h, data)
    }
}

/// Clip to the 8-bit range and round half away from zero.
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.clamp(0.0, 255.0).round() as u8
}
