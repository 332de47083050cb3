//! Solvers for `y = A x + e`: projected gradient descent with a learned
//! projector, latent-space optimisation through a decoder, and ISTA on DCT
//! coefficients.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dae::{AdamState, DaeModel};
use crate::error::{shape_err, Error, Result};
use crate::operators::{operator_norm_sq, Composed, LinearMap, LinearOp};
use crate::rng::SeededRng;
use crate::tensor::{dct2d, idct2d, Real, Tensor};

/// A map `f: ℝ^N → ℝ^N` used as the projection step.
pub trait Projector<T: Real>: Sync {
    fn project(&self, w: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Real> Projector<T> for DaeModel<T> {
    fn project(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(w)
    }
}

/// `f(w) = w`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityProjector;

impl<T: Real> Projector<T> for IdentityProjector {
    fn project(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(w.clone())
    }
}

/// Wraps a closure as a projector.
pub struct FnProjector<F>(pub F);

impl<T: Real, F> Projector<T> for FnProjector<F>
where
    F: Fn(&Tensor<T>) -> Result<Tensor<T>> + Sync,
{
    fn project(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        (self.0)(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryConfig {
    /// Gradient step size η.
    pub eta: f64,
    /// Number of iterations T.
    pub iters: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { eta: 1.0, iters: 30 }
    }
}

/// State at iteration `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord<T> {
    pub t: usize,
    pub x: Tensor<T>,
    /// Gradient-step point `w_t`; absent on the final record.
    pub w: Option<Tensor<T>>,
    /// `‖A x_t − y‖`.
    pub residual: f64,
    /// `‖x_t − x‖` when the ground truth is known.
    pub error: Option<f64>,
}

/// Every iterate of a projected-gradient run, `x_0` through `x_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryTrace<T> {
    pub records: Vec<IterRecord<T>>,
    pub duration: Duration,
}

impl<T: Real> RecoveryTrace<T> {
    pub fn final_estimate(&self) -> &Tensor<T> {
        &self.records.last().expect("trace holds x_0").x
    }

    pub fn iters(&self) -> usize {
        self.records.len() - 1
    }

    /// `‖x_t − x‖` for every `t`, if recorded.
    pub fn errors(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.error).collect()
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.residual).collect()
    }

    /// `(w_t, x_t+1)` pairs in order.
    pub fn steps(&self) -> impl Iterator<Item = (&Tensor<T>, &Tensor<T>)> {
        self.records.windows(2).map(|p| (p[0].w.as_ref().expect("non-final record has w"), &p[1].x))
    }
}

fn check_problem<T: Real>(y: &Tensor<T>, op: &LinearOp<T>, truth: Option<&Tensor<T>>) -> Result<()> {
    if y.shape() != op.out_shape() {
        return shape_err(format!("measurements {:?} vs operator output {:?}", y.shape(), op.out_shape()));
    }
    if let Some(x) = truth {
        if x.shape() != op.in_shape() {
            return shape_err(format!("ground truth {:?} vs operator input {:?}", x.shape(), op.in_shape()));
        }
    }
    Ok(())
}

/// Projected gradient descent: from `x_0 = 0`,
/// `w_t = x_t − η Aᵀ(A x_t − y)` and `x_{t+1} = f(w_t)`, for `T` steps.
pub fn dae_pgd<T: Real>(
    y: &Tensor<T>,
    op: &LinearOp<T>,
    f: &dyn Projector<T>,
    cfg: &RecoveryConfig,
    truth: Option<&Tensor<T>>,
) -> Result<RecoveryTrace<T>> {
    check_problem(y, op, truth)?;
    if cfg.eta.is_nan() || cfg.eta <= 0.0 {
        return Err(Error::Contract(format!("step size must be positive, got {}", cfg.eta)));
    }
    let start = Instant::now();
    let eta = T::c(cfg.eta);
    let error = |x: &Tensor<T>| truth.map(|g| x.sq_dist(g).map(f64::sqrt)).transpose();
    let mut records = Vec::with_capacity(cfg.iters + 1);
    let mut x = Tensor::zeros(op.in_shape())?;
    for t in 0..=cfg.iters {
        let r = op.apply(&x)?.sub(y)?;
        let residual = r.norm2_f64();
        let err = error(&x)?;
        if t == cfg.iters {
            records.push(IterRecord { t, x, w: None, residual, error: err });
            break;
        }
        let mut w = x.clone();
        w.axpy(-eta, &op.adjoint(&r)?)?;
        let next = f.project(&w)?;
        if next.shape() != op.in_shape() {
            return shape_err(format!("projector returned {:?}, expected {:?}", next.shape(), op.in_shape()));
        }
        if !next.all_finite() {
            return Err(Error::Solver { iteration: t + 1, reason: "non-finite iterate".into() });
        }
        records.push(IterRecord { t, x, w: Some(w), residual, error: err });
        x = next;
    }
    Ok(RecoveryTrace { records, duration: start.elapsed() })
}

/// Latent optimisation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsgmConfig {
    /// Weight λ of `‖z‖²`.
    pub lambda: f64,
    pub steps: usize,
    pub restarts: usize,
    /// Adam learning rate on `z`.
    pub z_lr: f64,
    /// Standard deviation of the random initial `z`.
    pub z_init_std: f64,
}

impl Default for CsgmConfig {
    fn default() -> Self {
        Self { lambda: 0.1, steps: 500, restarts: 2, z_lr: 0.01, z_init_std: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsgmOutcome<T> {
    /// `D(ẑ)`.
    pub estimate: Tensor<T>,
    pub latent: Tensor<T>,
    /// `‖A D(ẑ) − y‖²` of the chosen restart.
    pub measurement_loss: f64,
    /// Objective `‖A D(z) − y‖² + λ‖z‖²` at each restart's initial and final `z`.
    pub objective: Vec<(f64, f64)>,
    pub duration: Duration,
}

/// Minimises `‖A D(z) − y‖² + λ‖z‖²` over the decoder input `z` with Adam,
/// from `restarts` random starts. Returns `D(ẑ)` for the restart whose final
/// measurement loss is smallest.
pub fn csgm_recover<T: Real>(
    y: &Tensor<T>,
    op: &LinearOp<T>,
    model: &DaeModel<T>,
    cfg: &CsgmConfig,
    rng: &mut SeededRng,
) -> Result<CsgmOutcome<T>> {
    check_problem(y, op, None)?;
    if cfg.restarts == 0 || cfg.steps == 0 {
        return Err(Error::Contract("latent search needs restarts >= 1 and steps >= 1".into()));
    }
    let start = Instant::now();
    let k = model.latent_dim();
    let lam = T::c(cfg.lambda);
    let two = T::c(2.0);
    let objective = |z: &Tensor<T>| -> Result<(f64, f64)> {
        let g = model.decode(z)?;
        let meas = op.apply(&g)?.sq_dist(y)?;
        Ok((meas, meas + cfg.lambda * z.norm2_f64().powi(2)))
    };

    let mut best: Option<(f64, Tensor<T>)> = None;
    let mut objectives = Vec::with_capacity(cfg.restarts);
    for _ in 0..cfg.restarts {
        let mut z = rng.gaussian::<T>(&[k], 0.0, cfg.z_init_std)?;
        let initial = objective(&z)?.1;
        let mut adam = AdamState::new(&[&z], cfg.z_lr);
        for step in 0..cfg.steps {
            let (g, caches) = model.decode_cached(&z)?;
            let r = op.apply(&g)?.sub(y)?;
            let grad_img = op.adjoint(&r)?.scale(two);
            let mut gz = model.decode_backward(&caches, &grad_img)?;
            gz.axpy(two * lam, &z)?;
            if !gz.all_finite() {
                return Err(Error::Solver { iteration: step, reason: "non-finite latent gradient".into() });
            }
            adam.step(&mut [&mut z], &[gz])?;
        }
        let (meas, fin) = objective(&z)?;
        objectives.push((initial, fin));
        if best.as_ref().is_none_or(|(b, _)| meas < *b) {
            best = Some((meas, z));
        }
    }
    let (measurement_loss, latent) = best.expect("restarts >= 1");
    Ok(CsgmOutcome {
        estimate: model.decode(&latent)?,
        latent,
        measurement_loss,
        objective: objectives,
        duration: start.elapsed(),
    })
}

/// Per-channel orthonormal inverse DCT `Ψ` on `[H, W]` or `[H, W, C]` images.
pub struct DctSynthesis {
    h: usize,
    w: usize,
    c: usize,
}

impl DctSynthesis {
    pub fn new(img_shape: &[usize]) -> Result<Self> {
        match *img_shape {
            [h, w] => Ok(Self { h, w, c: 1 }),
            [h, w, c] => Ok(Self { h, w, c }),
            _ => shape_err(format!("DCT basis needs an image shape, got {img_shape:?}")),
        }
    }

    fn per_channel<T: Real>(&self, x: &[T], out: &mut [T], f: fn(&Tensor<T>) -> Result<Tensor<T>>) {
        let (h, w, c) = (self.h, self.w, self.c);
        for k in 0..c {
            let plane: Vec<T> = (0..h * w).map(|p| x[p * c + k]).collect();
            let t = f(&Tensor::new(vec![h, w], plane).expect("plane shape")).expect("2-D input");
            for (p, &v) in t.data().iter().enumerate() {
                out[p * c + k] = v;
            }
        }
    }
}

impl<T: Real> LinearMap<T> for DctSynthesis {
    fn in_len(&self) -> usize {
        self.h * self.w * self.c
    }

    fn out_len(&self) -> usize {
        self.h * self.w * self.c
    }

    fn apply_flat(&self, x: &[T], out: &mut [T]) {
        self.per_channel(x, out, idct2d);
    }

    fn adjoint_flat(&self, y: &[T], out: &mut [T]) {
        self.per_channel(y, out, dct2d);
    }
}

/// `sign(v) · max(|v| − t, 0)`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// Lipschitz constant `‖A Ψ‖²` of the ISTA data term, by power iteration.
pub fn ista_lipschitz<T: Real>(op: &LinearOp<T>) -> Result<f64> {
    let psi = DctSynthesis::new(op.in_shape())?;
    let composed = Composed { outer: op, inner: &psi };
    Ok(operator_norm_sq(&composed, 1000, 1e-9, &mut SeededRng::new(0))?.value)
}

/// Lasso with a DCT basis solved by ISTA from `c = 0`:
/// `c ← soft(c − Ψᵀ Aᵀ(A Ψ c − y)/L, λ/L)`, returning `Ψ c`.
pub fn ista_dct<T: Real>(y: &Tensor<T>, op: &LinearOp<T>, lambda: f64, steps: usize) -> Result<Tensor<T>> {
    ista_dct_with(y, op, lambda, steps, ista_lipschitz(op)?)
}

/// [`ista_dct`] with a precomputed Lipschitz constant.
pub fn ista_dct_with<T: Real>(
    y: &Tensor<T>,
    op: &LinearOp<T>,
    lambda: f64,
    steps: usize,
    lipschitz: f64,
) -> Result<Tensor<T>> {
    check_problem(y, op, None)?;
    if steps == 0 || lambda.is_nan() || lambda < 0.0 {
        return Err(Error::Contract(format!("ISTA needs steps >= 1 and lambda >= 0 (got {steps}, {lambda})")));
    }
    if lipschitz.is_nan() || lipschitz <= 0.0 || !lipschitz.is_finite() {
        return Err(Error::Solver { iteration: 0, reason: format!("Lipschitz estimate is {lipschitz}") });
    }
    let psi = DctSynthesis::new(op.in_shape())?;
    let n = op.in_len();
    let step = T::c(1.0 / lipschitz);
    let thresh = lambda / lipschitz;
    let mut c = vec![T::zero(); n];
    let mut x = vec![T::zero(); n];
    let mut ax = vec![T::zero(); op.out_len()];
    let mut g = vec![T::zero(); n];
    let mut gc = vec![T::zero(); n];
    for it in 0..steps {
        psi.apply_flat(&c, &mut x);
        op.apply_flat(&x, &mut ax);
        for (a, &b) in ax.iter_mut().zip(y.data()) {
            *a -= b;
        }
        op.adjoint_flat(&ax, &mut g);
        psi.adjoint_flat(&g, &mut gc);
        for (ci, &gi) in c.iter_mut().zip(&gc) {
            *ci = T::c(soft_threshold((*ci - step * gi).f64(), thresh));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver { iteration: it + 1, reason: "non-finite coefficients".into() });
        }
    }
    psi.apply_flat(&c, &mut x);
    Tensor::new(op.in_shape().to_vec(), x)
}

/// `‖x − x̂‖²` summed over all pixels.
pub fn recovery_error<T: Real>(x: &Tensor<T>, estimate: &Tensor<T>) -> Result<f64> {
    x.sq_dist(estimate)
}
