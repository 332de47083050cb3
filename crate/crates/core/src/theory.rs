//! Convergence constants of projected gradient descent with an approximate
//! projector: the contraction factor γ, the error bound after `T` steps, the
//! projection slack α, and a per-step check of `e_{t+1} ≤ 2γ e_t + α` on
//! recorded traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recovery::{Projector, RecoveryTrace};
use crate::tensor::{Real, Tensor};

/// Absolute slack of the per-step check, absorbing f32 → f64 rounding.
pub const CONTRACTION_SLACK: f64 = 1e-9;

/// Probes with `‖f(w) − x‖` below this are skipped by [`estimate_alpha`].
pub const ALPHA_MIN_DENOM: f64 = 1e-9;

/// `γ = √(η²M(1+δ) + 2η(δ−1) + 1)`.
pub fn gamma(eta: f64, m: f64, delta: f64) -> Result<f64> {
    let radicand = eta * eta * m * (1.0 + delta) + 2.0 * eta * (delta - 1.0) + 1.0;
    if radicand < 0.0 || radicand.is_nan() {
        return Err(Error::Domain(format!("gamma radicand is {radicand} for eta={eta}, M={m}, delta={delta}")));
    }
    Ok(radicand.sqrt())
}

/// Number of iterations the bound is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    /// `2γ = 1` exactly: the value is the limit `e0 + T·α`.
    pub limit_form: bool,
    /// `2γ ≥ 1`: the bound does not shrink with `T`.
    pub vacuous: bool,
}

/// `(2γ)^T e0 + α (1 − (2γ)^T) / (1 − 2γ)`.
///
/// For an infinite horizon this is `α / (1 − 2γ)` when `2γ < 1` and `+∞`
/// otherwise.
pub fn error_bound(horizon: Horizon, gamma: f64, alpha: f64, e0: f64) -> Result<Bound> {
    if !(gamma >= 0.0 && alpha >= 0.0 && e0 >= 0.0) {
        return Err(Error::Domain(format!("bound needs non-negative gamma, alpha, e0 (got {gamma}, {alpha}, {e0})")));
    }
    let q = 2.0 * gamma;
    let vacuous = q >= 1.0;
    if q == 1.0 {
        let value = match horizon {
            Horizon::Finite(t) => e0 + t as f64 * alpha,
            Horizon::Infinite if alpha == 0.0 => e0,
            Horizon::Infinite => f64::INFINITY,
        };
        return Ok(Bound { value, limit_form: true, vacuous });
    }
    let value = match horizon {
        Horizon::Finite(0) => e0,
        Horizon::Finite(t) => {
            let qt = q.powi(t.min(i32::MAX as usize) as i32);
            qt * e0 + alpha * (1.0 - qt) / (1.0 - q)
        }
        Horizon::Infinite if q < 1.0 => alpha / (1.0 - q),
        Horizon::Infinite => f64::INFINITY,
    };
    Ok(Bound { value, limit_form: false, vacuous })
}

/// `2γ` needed for the per-step inequality to hold at every step of a
/// trace with the given α: `max_t (e_{t+1} − α) / e_t` over steps with
/// `e_t > 0`.
pub fn required_two_gamma<T: Real>(trace: &RecoveryTrace<T>, alpha: f64) -> Result<f64> {
    let e = trace_errors(trace)?;
    Ok(e.windows(2).filter(|w| w[0] > 0.0).map(|w| (w[1] - alpha) / w[0]).fold(0.0, f64::max))
}

/// Smallest α that satisfies the projection inequality
/// `‖w − f(w)‖² ≤ ‖w − x‖² + α‖f(w) − x‖` for one probe, or `None` when
/// `f(w)` is (numerically) `x`.
pub fn alpha_required<T: Real>(w: &Tensor<T>, fw: &Tensor<T>, x: &Tensor<T>) -> Result<Option<f64>> {
    let denom = fw.sq_dist(x)?.sqrt();
    if denom < ALPHA_MIN_DENOM {
        return Ok(None);
    }
    let slack = w.sq_dist(fw)? - w.sq_dist(x)?;
    Ok(Some((slack / denom).max(0.0)))
}

/// Largest [`alpha_required`] over the probes `(w, x)`.
pub fn estimate_alpha<T: Real>(f: &dyn Projector<T>, probes: &[(Tensor<T>, Tensor<T>)]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for (w, x) in probes {
        let fw = f.project(w)?;
        if let Some(a) = alpha_required(w, &fw, x)? {
            best = Some(best.map_or(a, |b| b.max(a)));
        }
    }
    best.ok_or_else(|| Error::Estimation("every alpha probe was degenerate".into()))
}

/// [`estimate_alpha`] on a trace's own `(w_t, x)` pairs, reusing the
/// recorded `x_{t+1} = f(w_t)` instead of re-running the projector.
pub fn trace_alpha<T: Real>(trace: &RecoveryTrace<T>, truth: &Tensor<T>) -> Result<Option<f64>> {
    let mut best: Option<f64> = None;
    for (w, fw) in trace.steps() {
        if let Some(a) = alpha_required(w, fw, truth)? {
            best = Some(best.map_or(a, |b| b.max(a)));
        }
    }
    Ok(best)
}

fn trace_errors<T: Real>(trace: &RecoveryTrace<T>) -> Result<Vec<f64>> {
    trace.errors().ok_or_else(|| Error::Contract("trace was recorded without ground truth".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// Fraction of steps satisfying the inequality; 1 for an empty trace.
    pub fraction: f64,
    pub satisfied: usize,
    pub steps: usize,
    /// Step `t` with the largest `e_{t+1} − (2γ e_t + α)`.
    pub worst_step: Option<usize>,
    pub worst_excess: f64,
}

/// Checks `‖x_{t+1} − x‖ ≤ 2γ ‖x_t − x‖ + α` at every step of a trace.
pub fn check_contraction<T: Real>(trace: &RecoveryTrace<T>, gamma: f64, alpha: f64) -> Result<ContractionReport> {
    let e = trace_errors(trace)?;
    let mut satisfied = 0;
    let mut worst: Option<(usize, f64)> = None;
    for (t, w) in e.windows(2).enumerate() {
        let excess = w[1] - (2.0 * gamma * w[0] + alpha);
        if excess <= CONTRACTION_SLACK {
            satisfied += 1;
        }
        if worst.is_none_or(|(_, x)| excess > x) {
            worst = Some((t, excess));
        }
    }
    let steps = e.len() - 1;
    Ok(ContractionReport {
        fraction: if steps == 0 { 1.0 } else { satisfied as f64 / steps as f64 },
        satisfied,
        steps,
        worst_step: worst.map(|w| w.0),
        worst_excess: worst.map_or(0.0, |w| w.1),
    })
}

/// Empirical constants of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryEstimates {
    pub delta: f64,
    pub alpha: f64,
    /// Estimate of `‖A‖²`.
    pub m_hat: f64,
    pub gamma: f64,
    pub contraction_fraction: f64,
}

impl TheoryEstimates {
    pub fn new(eta: f64, delta: f64, alpha: f64, m_hat: f64) -> Result<Self> {
        if !(delta >= 0.0 && alpha >= 0.0 && m_hat > 0.0) {
            return Err(Error::Domain(format!(
                "estimates need delta >= 0, alpha >= 0, M > 0 (got {delta}, {alpha}, {m_hat})"
            )));
        }
        Ok(Self { delta, alpha, m_hat, gamma: gamma(eta, m_hat, delta)?, contraction_fraction: f64::NAN })
    }

    pub fn two_gamma(&self) -> f64 {
        2.0 * self.gamma
    }

    pub fn bound(&self, horizon: Horizon, e0: f64) -> Result<Bound> {
        error_bound(horizon, self.gamma, self.alpha, e0)
    }
}
