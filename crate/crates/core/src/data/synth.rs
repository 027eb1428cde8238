//! Procedural test scenes: smooth gradients overlaid with hard-edged shapes
//! and low-frequency gratings, rendered with 3x3 supersampling.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::image::{quantize, ImageBuf};
use crate::error::{Error, Result};

type Rgb = [f64; 3];

enum Shape {
    Disk {
        c: (f64, f64),
        r: f64,
        color: Rgb,
    },
    Rect {
        c: (f64, f64),
        half: (f64, f64),
        angle: f64,
        color: Rgb,
    },
    Bar {
        a: (f64, f64),
        b: (f64, f64),
        half_width: f64,
        color: Rgb,
    },
    Grating {
        c: (f64, f64),
        r: f64,
        dir: (f64, f64),
        period: f64,
        lo: Rgb,
        hi: Rgb,
    },
}

impl Shape {
    fn color_at(&self, x: f64, y: f64) -> Option<Rgb> {
        match *self {
            Shape::Disk { c, r, color } => {
                ((x - c.0).powi(2) + (y - c.1).powi(2) <= r * r).then_some(color)
            }
            Shape::Rect {
                c,
                half,
                angle,
                color,
            } => {
                let (s, co) = angle.sin_cos();
                let (dx, dy) = (x - c.0, y - c.1);
                let (u, v) = (co * dx + s * dy, -s * dx + co * dy);
                (u.abs() <= half.0 && v.abs() <= half.1).then_some(color)
            }
            Shape::Bar {
                a,
                b,
                half_width,
                color,
            } => {
                let (vx, vy) = (b.0 - a.0, b.1 - a.1);
                let len2 = vx * vx + vy * vy;
                let t = (((x - a.0) * vx + (y - a.1) * vy) / len2).clamp(0.0, 1.0);
                let (px, py) = (a.0 + t * vx, a.1 + t * vy);
                ((x - px).powi(2) + (y - py).powi(2) <= half_width * half_width).then_some(color)
            }
            Shape::Grating {
                c,
                r,
                dir,
                period,
                lo,
                hi,
            } => {
                if (x - c.0).powi(2) + (y - c.1).powi(2) > r * r {
                    return None;
                }
                let phase = (x * dir.0 + y * dir.1) / period * std::f64::consts::TAU;
                let t = 0.5 + 0.5 * phase.sin();
                Some([0, 1, 2].map(|k| lo[k] + t * (hi[k] - lo[k])))
            }
        }
    }
}

fn random_color<R: Rng>(rng: &mut R) -> Rgb {
    [0; 3].map(|_| rng.random_range(20.0..235.0))
}

/// Renders one deterministic scene for `seed`.
pub fn synth_scene(width: usize, height: usize, seed: u64) -> ImageBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let bg0 = random_color(&mut rng);
    let bg1 = random_color(&mut rng);
    let bg_angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let size = w.min(h);
    let point = |rng: &mut ChaCha8Rng| (rng.random_range(0.0..w), rng.random_range(0.0..h));
    let n_shapes = rng.random_range(5..10);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let c = point(&mut rng);
        let shape = match rng.random_range(0..4) {
            0 => Shape::Disk {
                c,
                r: rng.random_range(0.05..0.25) * size,
                color: random_color(&mut rng),
            },
            1 => Shape::Rect {
                c,
                half: (
                    rng.random_range(0.04..0.25) * size,
                    rng.random_range(0.04..0.25) * size,
                ),
                angle: rng.random_range(0.0..std::f64::consts::PI),
                color: random_color(&mut rng),
            },
            2 => Shape::Bar {
                a: c,
                b: point(&mut rng),
                half_width: rng.random_range(0.8..3.0),
                color: random_color(&mut rng),
            },
            _ => {
                let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
                Shape::Grating {
                    c,
                    r: rng.random_range(0.1..0.3) * size,
                    dir: (theta.cos(), theta.sin()),
                    period: rng.random_range(6.0..16.0),
                    lo: random_color(&mut rng),
                    hi: random_color(&mut rng),
                }
            }
        };
        shapes.push(shape);
    }
    let (gx, gy) = (bg_angle.cos(), bg_angle.sin());
    let sample = |x: f64, y: f64| -> Rgb {
        let t = (((x / w - 0.5) * gx + (y / h - 0.5) * gy) + 0.5).clamp(0.0, 1.0);
        let mut px = [0, 1, 2].map(|k| bg0[k] + t * (bg1[k] - bg0[k]));
        for s in &shapes {
            if let Some(c) = s.color_at(x, y) {
                px = c;
            }
        }
        px
    };
    let noise: Vec<f64> = (0..width * height * 3)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    let mut i = 0;
    ImageBuf::from_fn(width, height, |x, y| {
        let mut acc = [0.0; 3];
        for sy in 0..3 {
            for sx in 0..3 {
                let p = sample(
                    x as f64 + (sx as f64 + 0.5) / 3.0,
                    y as f64 + (sy as f64 + 0.5) / 3.0,
                );
                (0..3).for_each(|k| acc[k] += p[k] / 9.0);
            }
        }
        let out = [0, 1, 2].map(|k| quantize(acc[k] + noise[i + k]));
        i += 3;
        out
    })
}

/// Writes `count` scenes as `scene_000.png`, ... into `dir`.
pub fn write_corpus(
    dir: &Path,
    count: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("scene_{i:03}.png"));
            synth_scene(
                width,
                height,
                seed.wrapping_mul(1000).wrapping_add(i as u64),
            )
            .save(&path)?;
            Ok(path)
        })
        .collect()
}
