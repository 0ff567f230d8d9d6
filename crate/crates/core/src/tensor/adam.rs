use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers for one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros = || params.tensors().map(|t| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        AdamState { config, m: zeros(), v: zeros(), t: 0 }
    }

    /// One bias-corrected Adam update. `grads` must hold one tensor per
    /// parameter, in store order.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &[Tensor<S>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam: {} parameters, {} gradients, {} moment buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.tensors().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].shape() != p.shape() {
                return Err(Error::shape("adam", format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape())));
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.tensors_mut().enumerate() {
            let (m, v, g) = (self.m[i].data_mut(), self.v[i].data_mut(), grads[i].data());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j].f64();
                let mj = beta1 * m[j].f64() + (1.0 - beta1) * gj;
                let vj = beta2 * v[j].f64() + (1.0 - beta2) * gj * gj;
                m[j] = S::of(mj);
                v[j] = S::of(vj);
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
                *w = S::of(w.f64() - update);
            }
        }
        Ok(())
    }
}
