//! Seeded, platform-independent random streams.
//!
//! The generator is xoshiro256++ initialized from a `u64` seed through
//! SplitMix64 (the reference seeding procedure). Gaussian variates use the
//! Box–Muller transform with both outputs consumed in order.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Deterministic random stream. Never shared between threads: derive a child
/// stream with [`SeededRng::derive`] instead.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: Xoshiro256PlusPlus::seed_from_u64(seed), spare: None }
    }

    /// Independent stream for `(seed, stream)`. Depends only on the pair,
    /// never on how much of the parent stream has been consumed.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mixed = splitmix_finalize(seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Self::new(mixed)
    }

    /// Child stream of this generator's seed.
    pub fn child(&self, stream: u64) -> Self {
        Self::derive(self.seed, stream)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`, rejection-sampled to avoid modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal variate.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// Tensor of i.i.d. `N(mean, std²)` draws.
    pub fn gaussian<T: Real>(&mut self, shape: &[usize], mean: f64, std: f64) -> Result<Tensor<T>> {
        gaussian_sample(self, shape, mean, std)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<V>(&mut self, items: &mut [V]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Tensor of i.i.d. Gaussian draws in row-major order.
pub fn gaussian_sample<T: Real>(rng: &mut SeededRng, shape: &[usize], mean: f64, std: f64) -> Result<Tensor<T>> {
    if std.is_nan() || std < 0.0 {
        return shape_err(format!("standard deviation must be non-negative, got {std}"));
    }
    let n = crate::tensor::check_dims(shape)?;
    let data = (0..n).map(|_| T::c(rng.normal(mean, std))).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_gives_constant() {
        let mut rng = SeededRng::new(1);
        let t = rng.gaussian::<f64>(&[4], 0.0, 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
    }

    #[test]
    fn same_seed_same_stream() {
        let a = SeededRng::new(7).gaussian::<f32>(&[64], 0.0, 1.0).unwrap();
        let b = SeededRng::new(7).gaussian::<f32>(&[64], 0.0, 1.0).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = SeededRng::new(8).gaussian::<f32>(&[64], 0.0, 1.0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn known_stream_prefix() {
        // Frozen from the first run; guards against silent generator changes.
        assert_eq!(SeededRng::new(0).next_u64(), 5987356902031041503);
        assert_eq!(SeededRng::derive(5, 3).next_u64(), 14314575222023748778);
        assert_ne!(SeededRng::derive(5, 3).next_u64(), SeededRng::derive(5, 4).next_u64());
    }

    #[test]
    fn moments_over_a_million_draws() {
        let mut rng = SeededRng::new(2024);
        let t = rng.gaussian::<f64>(&[1_000_000], 0.0, 1.0).unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        let std = var.sqrt();
        assert!((0.99..=1.01).contains(&std), "std {std}");

        let t = rng.gaussian::<f64>(&[1_000_000], 3.0, 2.0).unwrap();
        let mean = t.sum() / n;
        let std = (t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 3.0).abs() < 0.03 && (std - 2.0).abs() < 0.02);
    }

    #[test]
    fn invalid_arguments() {
        let mut rng = SeededRng::new(0);
        assert!(rng.gaussian::<f64>(&[0], 0.0, 1.0).is_err());
        assert!(rng.gaussian::<f64>(&[3], 0.0, -1.0).is_err());
    }

    #[test]
    fn below_is_in_range() {
        let mut rng = SeededRng::new(9);
        let mut seen = [0usize; 5];
        for _ in 0..5000 {
            seen[rng.below(5)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 800));
    }
}
