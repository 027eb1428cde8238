use rand::Rng;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Element> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Element = f32> {
    params: Vec<Param<T>>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::DuplicateParam(name));
        }
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces a value, keeping the shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "param set",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph<T>, id: ParamId) -> crate::graph::Var {
        g.bind_param(id.0, &self.params[id.0].value)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }

    /// Copies gradients of every parameter bound into `g` after its backward
    /// pass. Parameters the loss did not reach keep `grad == None`.
    pub fn collect_grads(&mut self, g: &Graph<T>) {
        for &(key, var) in g.bound_params() {
            if let (Some(p), Some(grad)) = (self.params.get_mut(key), g.grad(var)) {
                p.grad = Some(grad);
            }
        }
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.as_ref().map(Tensor::cast),
                })
                .collect(),
        }
    }
}

/// Uniform kernel initialization in `±sqrt(1 / fan_in)`.
pub fn init_kernel<T: Element, R: Rng + ?Sized>(shape: [usize; 4], rng: &mut R) -> Tensor<T> {
    let fan_in = shape[1] * shape[2] * shape[3];
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)))
}
