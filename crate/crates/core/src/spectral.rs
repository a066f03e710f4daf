//! Power iteration for the extreme eigenvalue of a symmetric positive
//! semidefinite operator given as a closure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::vector::{dot, norm2};

pub const SPECTRAL_MAX_ITER: usize = 200;
pub const SPECTRAL_TOL: f64 = 1e-10;
const SPECTRAL_SEED: u64 = 0x5eed_a11e;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest eigenvalue of `k` (assumed symmetric PSD) by power iteration
/// from a seeded random start. Convergence is judged on the Rayleigh
/// quotient.
pub fn power_iteration<F, E>(n: usize, mut k: F) -> Result<SpectralEstimate, E>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, E>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(SPECTRAL_SEED);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut theta = 0.0;
    for it in 1..=SPECTRAL_MAX_ITER {
        let kx = k(&x)?;
        let next = dot(&x, &kx);
        let nk = norm2(&kx);
        if nk == 0.0 {
            return Ok(SpectralEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            });
        }
        let done = it > 1 && (next - theta).abs() <= SPECTRAL_TOL * next.abs();
        theta = next;
        if done {
            return Ok(SpectralEstimate {
                value: theta,
                iterations: it,
                converged: true,
            });
        }
        x = kx.into_iter().map(|v| v / nk).collect();
    }
    Ok(SpectralEstimate {
        value: theta,
        iterations: SPECTRAL_MAX_ITER,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_operator() {
        let d = [1.0, 5.0, 2.0];
        let est = power_iteration::<_, ()>(3, |x| {
            Ok(x.iter().zip(&d).map(|(a, b)| a * b).collect())
        })
        .unwrap();
        assert!(est.converged);
        assert!((est.value - 5.0).abs() < 1e-8);
    }
}
