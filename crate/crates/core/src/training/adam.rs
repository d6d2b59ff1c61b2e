use crate::params::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub m: ParamStore,
    pub v: ParamStore,
    pub step: u64,
}

impl Adam {
    pub fn new(lr: f64, params: &ParamStore) -> Self {
        Self {
            lr,
            m: ParamStore::zeros_like(params),
            v: ParamStore::zeros_like(params),
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore) {
        assert!(params.same_layout(grads) && params.same_layout(&self.m));
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let lr = self.lr;
        let g = grads.as_slice();
        let m = self.m.as_mut_slice();
        let v = self.v.as_mut_slice();
        for (k, w) in params.as_mut_slice().iter_mut().enumerate() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}
