use crate::data::ImageBuf;
use crate::error::{Error, Result};

/// PSNR in dB over all RGB samples, skipping `shave` pixels at each border.
/// Identical images score `f64::INFINITY`.
pub fn psnr_rgb(pred: &ImageBuf, target: &ImageBuf, shave: usize) -> Result<f64> {
    let (w, h) = (target.width(), target.height());
    if (pred.width(), pred.height()) != (w, h) {
        return Err(Error::ShapeMismatch {
            op: "psnr",
            lhs: vec![pred.height(), pred.width(), 3],
            rhs: vec![h, w, 3],
        });
    }
    if 2 * shave >= w || 2 * shave >= h {
        return Err(Error::Data(format!(
            "shave {shave} leaves nothing of a {w}x{h} image"
        )));
    }
    let mut sq = 0u64;
    let mut count = 0u64;
    for y in shave..h - shave {
        let row = (y * w + shave) * 3..(y * w + w - shave) * 3;
        for (a, b) in pred.data()[row.clone()].iter().zip(&target.data()[row]) {
            let d = *a as i64 - *b as i64;
            sq += (d * d) as u64;
            count += 1;
        }
    }
    if sq == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sq as f64 / count as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

/// `psnr` rendered for tables; infinity prints as `inf`.
pub fn format_db(db: f64) -> String {
    if db.is_infinite() {
        "inf".to_string()
    } else {
        format!("{db:.3}")
    }
}
