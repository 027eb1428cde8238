//! Weight normalization: each output channel's kernel is `w_c = g_c * v_c / ||v_c||`,
//! with the norm taken over the channel's whole `Cin * Kh * Kw` receptive volume.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::{inner_len, Tensor};

/// Direction `v`, per-channel length `g` and bias of a weight-normalized conv.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightNormParams<T: Element = f32> {
    pub v: Tensor<T>,
    pub g: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> WeightNormParams<T> {
    /// Reparameterizes a plain kernel so the effective weight equals it.
    pub fn from_kernel(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let g = channel_norms(&weight)?;
        Ok(Self {
            g: Tensor::new([g.len()], g)?,
            v: weight,
            bias,
        })
    }

    pub fn effective(&self) -> Result<Tensor<T>> {
        weight_norm_forward(&self.v, &self.g).map(|(w, _)| w)
    }
}

/// Euclidean norm of each output channel of a kernel.
pub fn channel_norms<T: Element>(v: &Tensor<T>) -> Result<Vec<T>> {
    if v.shape().is_empty() || v.is_empty() {
        return Err(Error::InvalidShape {
            op: "weight_norm",
            msg: "empty kernel".into(),
        });
    }
    let inner = inner_len(v.shape());
    Ok(v.data()
        .chunks(inner)
        .map(|row| row.iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect())
}

pub(crate) fn weight_norm_forward<T: Element>(
    v: &Tensor<T>,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let cout = v.shape().first().copied().unwrap_or(0);
    if g.shape() != [cout] {
        return Err(Error::ShapeMismatch {
            op: "weight_norm",
            lhs: v.shape().to_vec(),
            rhs: g.shape().to_vec(),
        });
    }
    let norms = channel_norms(v)?;
    if let Some(channel) = norms.iter().position(|n| *n <= T::zero()) {
        return Err(Error::ZeroNormFilter { channel });
    }
    let inner = inner_len(v.shape());
    let mut w = v.clone();
    for ((row, &n), &gc) in w.data_mut().chunks_mut(inner).zip(&norms).zip(g.data()) {
        let s = gc / n;
        row.iter_mut().for_each(|x| *x = *x * s);
    }
    Ok((w, norms))
}

/// `dL/dv_c = (g_c/||v_c||) (dw_c - v_c (dw_c . v_c) / ||v_c||^2)`,
/// `dL/dg_c = dw_c . v_c / ||v_c||`.
pub(crate) fn weight_norm_backward<T: Element>(
    v: &Tensor<T>,
    g: &Tensor<T>,
    norms: &[T],
    gw: &[T],
) -> (Vec<T>, Vec<T>) {
    let inner = inner_len(v.shape());
    let mut gv = vec![T::zero(); v.len()];
    let mut gg = vec![T::zero(); norms.len()];
    for c in 0..norms.len() {
        let range = c * inner..(c + 1) * inner;
        let (vc, dwc) = (&v.data()[range.clone()], &gw[range.clone()]);
        let n = norms[c];
        let dot: T = vc.iter().zip(dwc).map(|(&a, &b)| a * b).sum();
        gg[c] = dot / n;
        let scale = g.data()[c] / n;
        let proj = dot / (n * n);
        for ((out, &a), &d) in gv[range].iter_mut().zip(vc).zip(dwc) {
            *out = scale * (d - a * proj);
        }
    }
    (gv, gg)
}

impl<T: Element> Graph<T> {
    /// Effective kernel `g_c * v_c / ||v_c||`, differentiable in `v` and `g`.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let (w, norms) = weight_norm_forward(self.value(v), self.value(g))?;
        self.record(w, Op::WeightNorm { v, g, norms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let p = WeightNormParams {
            v: Tensor::<f32>::new([1, 2, 1, 1], vec![3.0, 4.0]).unwrap(),
            g: Tensor::new([1], vec![10.0]).unwrap(),
            bias: Tensor::zeros([1]),
        };
        assert_eq!(p.effective().unwrap().data(), &[6.0, 8.0]);
    }

    #[test]
    fn gain_equal_to_norm_is_identity() {
        let w = Tensor::<f32>::from_fn([3, 2, 3, 3], |i| ((i * 37 % 11) as f32 - 5.0) * 0.1);
        let p = WeightNormParams::from_kernel(w.clone(), Tensor::zeros([3])).unwrap();
        let eff = p.effective().unwrap();
        for (a, b) in eff.data().iter().zip(w.data()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-6));
        }
    }

    #[test]
    fn zero_norm_channel_is_an_error() {
        let mut v = Tensor::<f32>::ones([2, 1, 1, 2]);
        v.data_mut()[2..].fill(0.0);
        let g = Tensor::ones([2]);
        assert!(matches!(
            weight_norm_forward(&v, &g),
            Err(Error::ZeroNormFilter { channel: 1 })
        ));
    }
}
