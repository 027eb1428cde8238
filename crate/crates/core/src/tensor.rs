use crate::element::Element;
use crate::error::{Error, Result};

/// Dense row-major array. Activations are laid out `(N, C, H, W)` and
/// convolution kernels `(Cout, Cin, Kh, Kw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                msg: format!(
                    "shape {:?} holds {} elements but buffer has {}",
                    shape,
                    len,
                    data.len()
                ),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        Self {
            shape,
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(N, C, H, W)` extents, or a shape error naming `op`.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::InvalidShape {
                op,
                msg: format!("expected a 4-d tensor, got {:?}", self.shape),
            }),
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar(self.shape.clone()))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Entries `[n, c, .., ..]` of a 4-d tensor as one contiguous plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let [_, ch, h, w] = [self.shape[0], self.shape[1], self.shape[2], self.shape[3]];
        let start = (n * ch + c) * h * w;
        &self.data[start..start + h * w]
    }
}

/// Product of the extents after the first axis.
pub(crate) fn inner_len(shape: &[usize]) -> usize {
    shape.iter().skip(1).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Tensor::<f32>::new([2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new([2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn cast_roundtrips_f32_through_f64() {
        let t = Tensor::<f32>::from_fn([3, 2], |i| i as f32 * 0.1 - 0.25);
        assert_eq!(t.cast::<f64>().cast::<f32>(), t);
    }
}
