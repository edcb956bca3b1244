use super::params::ParamStore;
use super::tensor::Real;
use crate::error::{Error, Result};

/// Adam with bias correction. Moments are allocated lazily on the first step.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Vec<T>>,
    second_moment: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter. Gradients are left in place.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.first_moment.is_empty() {
            for (_, p) in store.iter() {
                self.first_moment.push(vec![T::zero(); p.value.numel()]);
                self.second_moment.push(vec![T::zero(); p.value.numel()]);
            }
        }
        if self.first_moment.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first_moment.len(),
                store.len()
            )));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::Contract(format!("parameter {} has no gradient", p.name)));
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::from_real(self.beta1), T::from_real(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let correction1 = T::from_real(1.0 - self.beta1.powi(t));
        let correction2 = T::from_real(1.0 - self.beta2.powi(t));
        let lr = T::from_real(self.lr);
        let eps = T::from_real(self.epsilon);

        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let param = store.get_mut(id);
            let grad = param.grad.as_ref().expect("checked above");
            let m = &mut self.first_moment[k];
            let v = &mut self.second_moment[k];
            for (((w, &g), mi), vi) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + one_b1 * g;
                *vi = b2 * *vi + one_b2 * g * g;
                let m_hat = *mi / correction1;
                let v_hat = *vi / correction2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    fn quadratic_grad(store: &mut ParamStore<f64>) {
        let id = store.ids().next().unwrap();
        let mut g = Graph::eval();
        let w = g.param(store, id);
        let target = g.constant(Tensor::scalar(-3.0));
        let diff = g.add(w, target).unwrap();
        let sq = g.mul(diff, diff).unwrap();
        let loss = g.sum(sq);
        store.zero_grad();
        g.backward_into(loss, store).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap());
        let mut adam = Adam::<f64>::new(0.1);
        for _ in 0..20 {
            store.get_mut(id).grad = Some(vec![0.0; 3]);
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.value(id).data(), &[1.0, -2.0, 0.5]);
        assert_eq!(adam.steps_taken(), 20);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::zeros(&[2]));
        assert!(matches!(
            Adam::new(0.001).step(&mut store),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn quadratic_converges() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0));
        let mut adam = Adam::<f64>::new(0.1);
        for _ in 0..500 {
            quadratic_grad(&mut store);
            adam.step(&mut store).unwrap();
        }
        assert!((store.value(id).item() - 3.0).abs() < 1e-2);
    }

    #[test]
    fn first_step_matches_closed_form() {
        let grads = [0.5, -2.0, 1e-3, 40.0];
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_f64(&[4], &[0.0; 4]).unwrap());
        store.get_mut(id).grad = Some(grads.to_vec());
        let mut adam = Adam::<f64>::new(0.01);
        adam.step(&mut store).unwrap();
        for (w, g) in store.value(id).data().iter().zip(grads) {
            // bias-corrected moments are g and g^2 after one step
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!(((w - expected) / expected).abs() < 1e-6);
        }
    }
}
