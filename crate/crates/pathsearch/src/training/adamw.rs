//! AdamW over a flat parameter vector. Decay is decoupled (applied to the
//! parameter directly, not through the moments) and masked off for
//! parameters like the temperature logit.

#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, n_params: usize) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One update step. `decay[i] == false` exempts parameter `i` from
    /// weight decay. Panics on length mismatch: the layout is fixed at
    /// construction.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], decay: &[bool]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count changed");
        assert_eq!(decay.len(), self.m.len(), "decay mask count changed");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let mut update = m_hat / (v_hat.sqrt() + self.eps);
            if decay[i] {
                update += self.weight_decay * params[i];
            }
            params[i] -= self.lr * update;
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}
