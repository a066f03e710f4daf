#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use qvi_core::mesh::AdvectionScheme;
use qvi_core::{assemble_operator, build_grid, DiscreteOperator, OperatorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn operator(dim: usize, n: usize, diffusion: f64, advection: Vec<f64>, reaction: f64) -> DiscreteOperator {
    let grid = build_grid(dim, n).unwrap();
    let spec = OperatorSpec {
        diffusion,
        advection,
        reaction,
        scheme: AdvectionScheme::Upwind,
        require_t_monotone: true,
    };
    assemble_operator(grid, &spec).unwrap()
}

pub fn laplacian(n: usize) -> Arc<DiscreteOperator> {
    Arc::new(operator(1, n, 1.0, vec![], 0.0))
}

pub fn random_operator(r: &mut ChaCha8Rng, dim: usize, n: usize) -> DiscreteOperator {
    let adv = (0..dim).map(|_| r.random_range(-5.0..5.0)).collect();
    operator(dim, n, r.random_range(0.2..3.0), adv, r.random_range(0.0..3.0))
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Obstacle problem `y ≤ ψ` solved by trying every active set.
pub fn enumerate_vi(a: &DMatrix<f64>, f: &[f64], psi: &[f64]) -> Option<Vec<f64>> {
    let n = f.len();
    let mut found = None;
    for mask in 0u32..(1 << n) {
        let mut m = a.clone();
        let mut rhs = DVector::from_column_slice(f);
        for i in 0..n {
            if mask & (1 << i) != 0 {
                m.row_mut(i).fill(0.0);
                m[(i, i)] = 1.0;
                rhs[i] = psi[i];
            }
        }
        let Some(y) = m.lu().solve(&rhs) else { continue };
        let xi = DVector::from_column_slice(f) - a * &y;
        let scale = 1e-10 * (1.0 + f.iter().fold(0.0f64, |s, v| s.max(v.abs())));
        let feasible = (0..n).all(|i| y[i] <= psi[i] + 1e-12 && xi[i] >= -scale);
        let complementary = (0..n).all(|i| (xi[i] * (psi[i] - y[i])).abs() <= scale);
        if feasible && complementary {
            found = Some(y.iter().copied().collect());
            break;
        }
    }
    found
}
