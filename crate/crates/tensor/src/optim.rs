//! Adam optimizer over a [`ParamStore`].

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Float> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, steps: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// First and second moment estimates of a parameter, if it has been updated.
    pub fn moments(&self, id: ParamId) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.moments.get(id.index()).and_then(|m| m.as_ref()).map(|(a, b)| (a, b))
    }

    /// Restores optimizer state (checkpoint resume).
    pub fn restore(&mut self, steps: u64, moments: Vec<(ParamId, Tensor<T>, Tensor<T>)>) {
        self.steps = steps;
        self.moments.clear();
        for (id, m, v) in moments {
            if self.moments.len() <= id.index() {
                self.moments.resize_with(id.index() + 1, || None);
            }
            self.moments[id.index()] = Some((m, v));
        }
    }

    /// One bias-corrected Adam update with learning rate `lr`.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)], lr: f64) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::lit(1.0 - self.beta1.powi(t));
        let bc2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        if self.moments.len() < store.len() {
            self.moments.resize_with(store.len(), || None);
        }
        for (id, g) in grads {
            let param = store.get_mut(*id);
            if !param.trainable {
                continue;
            }
            if param.value.shape() != g.shape() {
                return Err(TensorError::shape("adam", format!("`{}` {:?} vs grad {:?}", param.name, param.value.shape(), g.shape())));
            }
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            for (((p, m), v), &g) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_in_gradient_sign() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("p", Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap(), true).unwrap();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        adam.step(&mut store, &[(id, Tensor::from_vec(&[2], vec![0.3, -2.0]).unwrap())], 0.1).unwrap();
        let v = store.value(id).data();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("p", Tensor::from_vec(&[1], vec![5.0]).unwrap(), true).unwrap();
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let x = store.value(id).data()[0];
            adam.step(&mut store, &[(id, Tensor::scalar(2.0 * (x - 2.0)))], 0.05).unwrap();
        }
        assert!((store.value(id).data()[0] - 2.0).abs() < 1e-3);
    }
}
