use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{corrupt, mse_grad, AdamState, DaeModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Samples per gradient-accumulation chunk. Chunks may run in parallel;
    /// their sums are combined in chunk order, so results do not depend on
    /// the thread count.
    pub chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch: 128, lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8, chunk: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean denoising loss over the epoch's training samples.
    pub loss: f64,
}

/// Gradient sum and loss sum over a run of samples.
fn accumulate<T: Real>(
    model: &DaeModel<T>,
    noisy: &[Tensor<T>],
    clean: &[&Tensor<T>],
    batch: usize,
) -> Result<(Vec<Tensor<T>>, f64)> {
    let mut grads = model.zero_grads();
    let mut loss = 0.0;
    for (xn, x) in noisy.iter().zip(clean) {
        let (y, trace) = model.forward_cached(xn)?;
        loss += y.sq_dist(x)?;
        let g = mse_grad(&y, x, batch)?;
        model.backward(&trace, &g, &mut grads)?;
    }
    Ok((grads, loss))
}

/// Minimises the denoising loss with Adam over shuffled mini-batches.
///
/// Each epoch reshuffles the samples and draws fresh noise at the level of
/// each sample's bucket. The final partial batch is kept. `on_epoch` runs
/// after every epoch (e.g. to write a checkpoint).
pub fn train<T: Real>(
    model: &mut DaeModel<T>,
    samples: &[Tensor<T>],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    mut on_epoch: impl FnMut(&EpochStats, &DaeModel<T>) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    if samples.is_empty() {
        return Err(Error::Training { epoch: 0, reason: "empty dataset".into() });
    }
    if cfg.batch == 0 || cfg.chunk == 0 {
        return Err(Error::Training { epoch: 0, reason: "batch and chunk sizes must be >= 1".into() });
    }
    if schedule.assignment.len() != samples.len() {
        return Err(Error::Training {
            epoch: 0,
            reason: format!("{} samples but {} bucket assignments", samples.len(), schedule.assignment.len()),
        });
    }
    let mut adam = AdamState::with_betas(&model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=cfg.epochs {
        let fail = |reason: String| Error::Training { epoch, reason };
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(cfg.batch) {
            let mut noisy = Vec::with_capacity(idx.len());
            for &i in idx {
                noisy.push(corrupt(&samples[i], schedule.sigma_of(i)?, rng)?);
            }
            let clean: Vec<&Tensor<T>> = idx.iter().map(|&i| &samples[i]).collect();
            let parts: Vec<Result<(Vec<Tensor<T>>, f64)>> = noisy
                .par_chunks(cfg.chunk)
                .zip(clean.par_chunks(cfg.chunk))
                .map(|(n, c)| accumulate(model, n, c, idx.len()))
                .collect();
            let mut total: Option<Vec<Tensor<T>>> = None;
            for part in parts {
                let (g, l) = part?;
                epoch_loss += l;
                match total.as_mut() {
                    None => total = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.axpy(T::one(), b)?;
                        }
                    }
                }
            }
            if !epoch_loss.is_finite() {
                return Err(fail(format!("loss diverged ({epoch_loss})")));
            }
            let grads = total.expect("non-empty batch");
            adam.step(&mut model.params_mut(), &grads).map_err(|e| match e {
                Error::Training { reason, .. } => fail(reason),
                other => other,
            })?;
        }
        let stats = EpochStats { epoch, loss: epoch_loss / samples.len() as f64 };
        on_epoch(&stats, model)?;
        log.push(stats);
    }
    Ok(log)
}
