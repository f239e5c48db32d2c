//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use super::params::Params;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &Params) -> Self {
        let shapes: Vec<Vec<f64>> =
            params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: shapes.clone(), v: shapes }
    }

    /// Applies one update; `grads[i]` must match `params.tensors[i]` in length.
    pub fn step(&mut self, params: &mut Params, grads: &[Vec<f64>]) {
        assert_eq!(grads.len(), params.tensors.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, tensor) in params.tensors.iter_mut().enumerate() {
            for (j, g) in grads[i].iter().enumerate() {
                let m = &mut self.m[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                let v = &mut self.v[i][j];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                tensor.data[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
