use alloc::vec::Vec;

use crate::params::{Gradients, ParamStore};
use crate::tensor::{Tensor, TensorError};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update to every parameter of `store`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), TensorError> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(TensorError::Invalid {
                op: "adam_step",
                reason: alloc::format!(
                    "{} gradients / {} moments for {} parameters",
                    grads.len(),
                    self.m.len(),
                    store.len()
                ),
            });
        }
        if !grads.is_finite() {
            return Err(TensorError::NonFinite { op: "adam_step" });
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        for id in store.ids().collect::<Vec<_>>() {
            let g = grads.get(id);
            let p = store.get_mut(id);
            if g.shape() != p.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamId;
    use alloc::vec;

    fn one_param(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![1], vec![value]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap());
        let before = store.clone();
        let mut adam = AdamState::new(&store, 0.1);
        let g = Gradients::zeros_like(&store);
        for _ in 0..5 {
            adam.step(&mut store, &g).unwrap();
        }
        assert_eq!(store, before);
        assert_eq!(adam.step, 5);
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::new(vec![4], vec![0.0; 4]).unwrap());
        let mut adam = AdamState::new(&store, 0.01);
        let mut g = Gradients::zeros_like(&store);
        g.get_mut(ParamId(0)).data_mut().copy_from_slice(&[3.0, -0.5, 1e-3, -7.0]);
        adam.step(&mut store, &g).unwrap();
        for (p, gv) in store.get(ParamId(0)).data().iter().zip(g.get(ParamId(0)).data()) {
            assert_eq!(p.signum(), -gv.signum());
        }
    }

    // Reference: plain scalar Adam written independently of the tensor path.
    fn scalar_adam(mut w: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn quadratic_descends_like_scalar_reference() {
        let mut store = one_param(1.0);
        let mut adam = AdamState::new(&store, 0.1);
        for _ in 0..100 {
            let w = store.get(ParamId(0)).item();
            let mut g = Gradients::zeros_like(&store);
            g.get_mut(ParamId(0)).data_mut()[0] = 2.0 * w;
            adam.step(&mut store, &g).unwrap();
        }
        let w = store.get(ParamId(0)).item();
        let reference = scalar_adam(1.0, 0.1, 100);
        assert!((w - reference).abs() < 1e-9, "{w} vs {reference}");
        assert!(w.abs() < 0.1, "|w| = {}", w.abs());
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let mut store = one_param(1.0);
        let mut adam = AdamState::new(&store, 0.1);
        let other = ParamStore::new();
        let g = Gradients::zeros_like(&other);
        assert!(adam.step(&mut store, &g).is_err());
    }
}
