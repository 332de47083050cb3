use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[&Tensor<T>], lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[&Tensor<T>], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || -> Vec<Tensor<T>> {
            params.iter().map(|p| Tensor::zeros(p.shape()).expect("parameter shape")).collect()
        };
        Self { step: 0, lr, beta1, beta2, eps, first: zeros(), second: zeros() }
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// One update. Rejects non-finite gradients before touching any state.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Contract(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(Error::Contract(format!("adam: shape mismatch in slot {i}")));
            }
            if !g.all_finite() {
                return Err(Error::Training { epoch: 0, reason: format!("non-finite gradient in slot {i}") });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let c1 = T::c(1.0 - self.beta1);
        let c2 = T::c(1.0 - self.beta2);
        let bias1 = T::c(1.0 - self.beta1.powi(t));
        let bias2 = T::c(1.0 - self.beta2.powi(t));
        let lr = T::c(self.lr);
        let eps = T::c(self.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.first.iter_mut().zip(self.second.iter_mut())) {
            for (((w, &gv), mv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + c1 * gv;
                *vv = b2 * *vv + c2 * gv * gv;
                let mhat = *mv / bias1;
                let vhat = *vv / bias2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step<T: Real>(state: &mut AdamState<T>, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
    state.step(params, grads)
}
