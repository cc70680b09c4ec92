//! Seeded random streams.
//!
//! Uniforms come from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`. Standard normals use the polar-free Box–Muller transform:
//! with `u1` uniform on (0, 1] and `u2` uniform on [0, 1),
//! `z0 = sqrt(-2 ln u1) cos(2π u2)` and `z1 = sqrt(-2 ln u1) sin(2π u2)`.
//! `z0` is returned first and `z1` is cached for the next call. Both the
//! generator and the transform are fixed so that a seed reproduces the same
//! stream bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SvbError};

#[derive(Debug, Clone)]
pub struct SvbRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl SvbRng {
    pub fn seed_from_u64(seed: u64) -> Self {
        SvbRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Independent stream derived from the same seed.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SvbRng { inner, spare: None }
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn std_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// `dim` independent standard-normal draws.
pub fn sample_std_normal(dim: usize, rng: &mut SvbRng) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(SvbError::InvalidConfig(
            "dimension must be at least 1".into(),
        ));
    }
    Ok((0..dim).map(|_| rng.std_normal()).collect())
}
