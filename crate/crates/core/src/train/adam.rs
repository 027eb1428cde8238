use crate::element::Element;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config(format!(
                "adam betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        // written this way so NaN is rejected too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "adam eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// First and second moment buffers, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One bias-corrected update of every parameter holding a gradient.
    /// Any non-finite gradient aborts the step before anything changes.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64, cfg: &AdamConfig) -> Result<()> {
        for (_, p) in store.iter() {
            if let Some(g) = &p.grad {
                let bad = g.data().iter().filter(|v| !v.is_finite()).count();
                if bad > 0 {
                    return Err(Error::NonFiniteGradient {
                        name: p.name.clone(),
                        count: bad,
                    });
                }
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (i, p) in store.iter_mut().enumerate() {
            let Some(grad) = &p.grad else { continue };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let values = p.value.data_mut();
            for (j, &g) in grad.data().iter().enumerate() {
                let g = g.as_f64();
                let mj = cfg.beta1 * m[j].as_f64() + (1.0 - cfg.beta1) * g;
                let vj = cfg.beta2 * v[j].as_f64() + (1.0 - cfg.beta2) * g * g;
                m[j] = T::from_f64(mj);
                v[j] = T::from_f64(vj);
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
                values[j] = T::from_f64(values[j].as_f64() - update);
            }
        }
        Ok(())
    }
}
