use super::{ParamId, ParamStore};

/// Adam with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    /// Updates the given parameters from their accumulated gradients, then
    /// zeroes those gradients.
    ///
    /// The decay `w ← w − lr·λ·w` is applied before the moment update.
    pub fn step(&self, store: &mut ParamStore, ids: &[ParamId]) {
        for &id in ids {
            let p = store.get_mut(id);
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let decay = 1.0 - self.lr * self.weight_decay;
            let value = p.value.data_mut();
            let grad = p.grad.data_mut();
            let m = p.adam_m.data_mut();
            let v = p.adam_v.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                value[i] *= decay;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                grad[i] = 0.0;
            }
        }
    }
}
