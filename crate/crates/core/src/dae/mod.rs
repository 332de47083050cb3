//! Denoising autoencoder: layers, model, noise schedule, Adam and training.

mod adam;
pub mod layers;
mod model;
mod train;

pub use adam::{adam_step, AdamState};
pub use layers::{layer_backward, layer_forward, Cache, ConvGeom, Init, Layer, LayerKind};
pub use model::{ArchSpec, CheckpointManifest, ConvSpec, DaeModel, ForwardTrace, LayerRecord};
pub use train::{train, EpochStats, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

/// Noise levels per training subset.
pub const DEFAULT_SIGMAS: [f64; 5] = [0.25, 0.5, 0.75, 1.0, 1.25];

/// Per-sample noise level assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigmas: Vec<f64>,
    /// `assignment[i]` is the bucket of training sample `i`.
    pub assignment: Vec<usize>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(DEFAULT_SIGMAS.to_vec())
    }
}

impl NoiseSchedule {
    /// Schedule with no samples assigned yet.
    pub fn new(sigmas: Vec<f64>) -> Self {
        Self { sigmas, assignment: Vec::new() }
    }

    pub fn sigma_of(&self, sample: usize) -> Result<f64> {
        let b = *self
            .assignment
            .get(sample)
            .ok_or_else(|| Error::Contract(format!("sample {sample} has no noise bucket")))?;
        self.sigmas.get(b).copied().ok_or_else(|| Error::Contract(format!("bucket {b} has no sigma")))
    }

    pub fn bucket_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.sigmas.len()];
        for &b in &self.assignment {
            sizes[b] += 1;
        }
        sizes
    }
}

/// `x + e`, `e ~ N(0, sigma²)` i.i.d. per pixel. No clipping.
pub fn corrupt<T: Real>(x: &Tensor<T>, sigma: f64, rng: &mut SeededRng) -> Result<Tensor<T>> {
    if sigma.is_nan() || sigma < 0.0 {
        return shape_err(format!("noise level must be non-negative, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let mut out = x.clone();
    for v in out.data_mut() {
        *v += T::c(sigma * rng.standard_normal());
    }
    Ok(out)
}

/// Mean over the batch of per-sample squared ℓ2 distances.
pub fn mse_loss<T: Real>(pred: &[Tensor<T>], target: &[Tensor<T>]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return shape_err(format!("batch sizes {} vs {}", pred.len(), target.len()));
    }
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(target) {
        acc += p.sq_dist(t)?;
    }
    Ok(acc / pred.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to one prediction in a batch of `n`.
pub fn mse_grad<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let s = T::c(2.0 / n as f64);
    pred.zip_map(target, |p, t| s * (p - t))
}
