use crate::element::Element;
use crate::error::Result;
use crate::graph::{Graph, Var};

/// Mean absolute error; the subgradient at zero difference is 0.
pub fn l1_loss<T: Element>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    let diff = g.sub(pred, target)?;
    let abs = g.abs(diff)?;
    g.mean(abs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn run(pred: Vec<f64>, target: Vec<f64>) -> (f64, Vec<f64>) {
        let n = pred.len();
        let mut g = Graph::<f64>::new();
        let p = g.leaf(Tensor::new([n], pred).unwrap(), true);
        let t = g.constant(Tensor::new([n], target).unwrap());
        let loss = l1_loss(&mut g, p, t).unwrap();
        g.backward(loss).unwrap();
        (
            g.value(loss).item().unwrap(),
            g.grad(p).unwrap().into_data(),
        )
    }

    #[test]
    fn equal_inputs_give_zero() {
        let (loss, grad) = run(vec![1.0, -2.0, 3.0], vec![1.0, -2.0, 3.0]);
        assert_eq!(loss, 0.0);
        assert_eq!(grad, vec![0.0; 3]);
    }

    #[test]
    fn constant_offset() {
        let (loss, _) = run(vec![1.5, 2.5, -0.5, 7.5], vec![1.0, 2.0, -1.0, 7.0]);
        assert!((loss - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gradient_is_scaled_sign() {
        let pred = vec![0.3, -1.2, 2.0, 0.7];
        let target = vec![0.1, 0.4, -3.0, 0.9];
        let (_, grad) = run(pred.clone(), target.clone());
        for i in 0..4 {
            let want = (pred[i] - target[i]).signum() / 4.0;
            assert_eq!(grad[i], want);
            // central difference away from the kink
            let h = 1e-6;
            let mut up = pred.clone();
            up[i] += h;
            let mut dn = pred.clone();
            dn[i] -= h;
            let fd = (run(up, target.clone()).0 - run(dn, target.clone()).0) / (2.0 * h);
            assert!((fd - want).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut g = Graph::<f32>::new();
        let p = g.constant(Tensor::zeros([2]));
        let t = g.constant(Tensor::zeros([3]));
        assert!(l1_loss(&mut g, p, t).is_err());
    }
}
