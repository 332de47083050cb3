//! Denoising-autoencoder priors for linear inverse problems.
//!
//! A denoising autoencoder `F = D ∘ E` trained on noise-corrupted images is
//! used as the projection step of projected gradient descent:
//! `w ← x − ηAᵀ(Ax − y)`, `x ← F(w)`. The crate also ships the measurement
//! operators, two baselines (latent-space optimisation through the decoder
//! and ISTA in a DCT basis) and estimators for the constants in the
//! convergence bound.

pub mod dae;
pub mod datasets;
pub mod error;
pub mod operators;
pub mod recovery;
pub mod rng;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use operators::{LinearMap, LinearOp, OpKind};
pub use rng::SeededRng;
pub use tensor::{DType, Real, Tensor};
