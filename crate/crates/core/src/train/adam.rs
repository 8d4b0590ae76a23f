use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
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

/// First/second moment buffers mirroring the parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update of every parameter:
    /// `p ← p − lr · m̂ / (√v̂ + eps)`.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::shape("adam: gradient length differs from parameter"));
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let ti = self.t.min(i32::MAX as u64) as i32;
        let c1 = T::of(1.0 / (1.0 - beta1.powi(ti)));
        let c2 = T::of(1.0 / (1.0 - beta2.powi(ti)));
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let (lr, eps) = (T::of(lr), T::of(eps));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m * c1;
                let v_hat = *v * c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
