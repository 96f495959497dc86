//! Adaptive-moment gradient descent.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::{ParamStore, Scalar};

/// Adam optimizer with bias correction.
pub struct Adam<F: Scalar> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: BTreeMap<String, ArrayD<F>>,
    v: BTreeMap<String, ArrayD<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Apply one update from named gradients.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[(String, ArrayD<F>)]) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (F::cast(self.beta1), F::cast(self.beta2));
        let one = F::one();
        let lr = F::cast(self.learning_rate * bc2.sqrt() / bc1);
        let eps = F::cast(self.eps);

        for (name, grad) in grads {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.shape()));
            m.zip_mut_with(grad, |mv, &g| *mv = b1 * *mv + (one - b1) * g);
            v.zip_mut_with(grad, |vv, &g| *vv = b2 * *vv + (one - b2) * g * g);
            let param = store.value_mut(name);
            ndarray::Zip::from(&mut *param)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &mv, &vv| *p = *p - lr * mv / (vv.sqrt() + eps));
        }
    }
}
