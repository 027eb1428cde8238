//! Stride-1, zero-padded "same" cross-correlation via im2col + GEMM.
//!
//! Work is split per batch sample. Every sample is computed by the same
//! sequential code regardless of how many worker threads run, and per-sample
//! weight gradients are summed in sample order, so results do not depend on
//! the thread count.

use rayon::prelude::*;

use crate::element::{gemm, Element, MatLayout};
use crate::error::{Error, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

struct Geometry {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl Geometry {
    fn of<T: Element>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<Self> {
        let [n, cin, h, w] = x.dims4("conv2d")?;
        let [cout, wcin, kh, kw] = weight.dims4("conv2d")?;
        if cin != wcin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: x.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: format!("kernel {kh}x{kw} must have odd extents for same padding"),
            });
        }
        if h == 0 || w == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                msg: "empty spatial extent".into(),
            });
        }
        Ok(Self {
            n,
            cin,
            cout,
            h,
            w,
            kh,
            kw,
        })
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

/// Valid output columns `[lo, hi)` for a horizontal tap offset `dx`.
fn valid_span(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

fn im2col<T: Element>(g: &Geometry, x: &[T], col: &mut [T]) {
    let (h, w, hw) = (g.h, g.w, g.hw());
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    for ci in 0..g.cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..g.kh {
            let dy = ky as isize - ph;
            for kx in 0..g.kw {
                let dx = kx as isize - pw;
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst_plane = &mut col[row * hw..(row + 1) * hw];
                let (lo, hi) = valid_span(w, dx);
                for y in 0..h {
                    let dst = &mut dst_plane[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || lo >= hi {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..lo].fill(T::zero());
                    let s0 = (lo as isize + dx) as usize;
                    dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    dst[hi..].fill(T::zero());
                }
            }
        }
    }
}

fn col2im<T: Element>(g: &Geometry, col: &[T], x: &mut [T]) {
    let (h, w, hw) = (g.h, g.w, g.hw());
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    x.fill(T::zero());
    for ci in 0..g.cin {
        for ky in 0..g.kh {
            let dy = ky as isize - ph;
            for kx in 0..g.kw {
                let dx = kx as isize - pw;
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src_plane = &col[row * hw..(row + 1) * hw];
                let (lo, hi) = valid_span(w, dx);
                if lo >= hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &src_plane[y * w + lo..y * w + hi];
                    let base = ci * hw + sy as usize * w;
                    let s0 = (lo as isize + dx) as usize;
                    let dst = &mut x[base + s0..base + s0 + (hi - lo)];
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let g = Geometry::of(x, weight)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: vec![g.cout],
                rhs: b.shape().to_vec(),
            });
        }
    }
    let (hw, patch) = (g.hw(), g.patch());
    let mut out = Tensor::zeros([g.n, g.cout, g.h, g.w]);
    let xs = x.data();
    let ws = weight.data();
    out.data_mut()
        .par_chunks_mut(g.cout * hw)
        .enumerate()
        .for_each(|(n, y)| {
            let xn = &xs[n * g.cin * hw..(n + 1) * g.cin * hw];
            let mut col_buf;
            let col: &[T] = if g.pointwise() {
                xn
            } else {
                col_buf = vec![T::zero(); patch * hw];
                im2col(&g, xn, &mut col_buf);
                &col_buf
            };
            gemm(
                ws,
                MatLayout::row_major(g.cout, patch),
                col,
                MatLayout::row_major(patch, hw),
                T::zero(),
                y,
                MatLayout::row_major(g.cout, hw),
            );
            if let Some(b) = bias {
                for (plane, &bc) in y.chunks_mut(hw).zip(b.data()) {
                    plane.iter_mut().for_each(|v| *v = *v + bc);
                }
            }
        });
    Ok(out)
}

pub(crate) struct Needs {
    pub input: bool,
    pub weight: bool,
    pub bias: bool,
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    gy: &[T],
    needs: Needs,
) -> ConvGrads<T> {
    let g = Geometry::of(x, weight).expect("validated in forward");
    let (hw, patch) = (g.hw(), g.patch());
    let xs = x.data();
    let ws = weight.data();

    type SampleGrads<T> = (Option<Vec<T>>, Option<Vec<T>>);
    let per_sample: Vec<SampleGrads<T>> = (0..g.n)
        .into_par_iter()
        .map(|n| {
            let xn = &xs[n * g.cin * hw..(n + 1) * g.cin * hw];
            let gyn = &gy[n * g.cout * hw..(n + 1) * g.cout * hw];
            let gw = needs.weight.then(|| {
                let mut col_buf;
                let col: &[T] = if g.pointwise() {
                    xn
                } else {
                    col_buf = vec![T::zero(); patch * hw];
                    im2col(&g, xn, &mut col_buf);
                    &col_buf
                };
                let mut gw = vec![T::zero(); g.cout * patch];
                gemm(
                    gyn,
                    MatLayout::row_major(g.cout, hw),
                    col,
                    MatLayout::transposed(hw, patch),
                    T::zero(),
                    &mut gw,
                    MatLayout::row_major(g.cout, patch),
                );
                gw
            });
            let gx = needs.input.then(|| {
                let mut gcol = vec![T::zero(); patch * hw];
                gemm(
                    ws,
                    MatLayout::transposed(patch, g.cout),
                    gyn,
                    MatLayout::row_major(g.cout, hw),
                    T::zero(),
                    &mut gcol,
                    MatLayout::row_major(patch, hw),
                );
                if g.pointwise() {
                    gcol
                } else {
                    let mut gx = vec![T::zero(); g.cin * hw];
                    col2im(&g, &gcol, &mut gx);
                    gx
                }
            });
            (gx, gw)
        })
        .collect();

    let mut input = needs.input.then(|| Vec::with_capacity(g.n * g.cin * hw));
    let mut weight_grad = needs.weight.then(|| vec![T::zero(); g.cout * patch]);
    for (gx, gw) in per_sample {
        if let (Some(acc), Some(gx)) = (input.as_mut(), gx) {
            acc.extend_from_slice(&gx);
        }
        if let (Some(acc), Some(gw)) = (weight_grad.as_mut(), gw) {
            acc.iter_mut().zip(&gw).for_each(|(a, &b)| *a = *a + b);
        }
    }
    let bias = needs.bias.then(|| {
        let mut gb = vec![T::zero(); g.cout];
        for (k, plane) in gy.chunks(hw).enumerate() {
            gb[k % g.cout] = gb[k % g.cout] + plane.iter().copied().sum::<T>();
        }
        gb
    });
    ConvGrads {
        input,
        weight: weight_grad,
        bias,
    }
}

impl<T: Element> Graph<T> {
    /// Same-size convolution of an `(N, Cin, H, W)` input with a
    /// `(Cout, Cin, K, K)` kernel and optional `(Cout)` bias.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
        )?;
        self.record(
            out,
            Op::Conv2d {
                x,
                w: weight,
                b: bias,
            },
        )
    }
}
