//! Obstacle maps `Φ` with exact directional derivatives and Lipschitz
//! certificates.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::mesh::DiscreteOperator;
use crate::spectral::power_iteration;
use crate::vector::{dot, StateVector};

/// Number of sample points for sampled certificates.
pub const CERTIFICATE_SAMPLES: usize = 200;
/// Inflation applied to sampled suprema.
pub const CERTIFICATE_SAFETY: f64 = 1.5;
const CERTIFICATE_SEED: u64 = 0xce27_1f1c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MapKind {
    PdeInverse,
    CutoffMultiplicity1,
    CutoffMultiplicity2,
    Constant,
    AffineScaling,
}

impl MapKind {
    pub fn name(self) -> &'static str {
        match self {
            MapKind::PdeInverse => "pde_inverse",
            MapKind::CutoffMultiplicity1 => "cutoff_multiplicity_1",
            MapKind::CutoffMultiplicity2 => "cutoff_multiplicity_2",
            MapKind::Constant => "constant",
            MapKind::AffineScaling => "affine_scaling",
        }
    }
}

/// A Lipschitz constant together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzCertificate {
    pub value: f64,
    /// Sampled certificates are estimates, not proven upper bounds.
    pub is_estimate: bool,
    pub method: &'static str,
    /// Ball radius in the grid L² norm; `None` when the bound is global.
    pub radius: Option<f64>,
}

/// `Φ(w) = σ L⁻¹ w + f₀`.
#[derive(Debug, Clone)]
pub struct PdeInverseMap {
    pub operator: Arc<DiscreteOperator>,
    pub sigma: f64,
    pub f0: StateVector,
    inverse: Arc<OnceLock<DMatrix<f64>>>,
}

impl PdeInverseMap {
    pub fn new(operator: Arc<DiscreteOperator>, sigma: f64, f0: StateVector) -> Result<Self> {
        check_len(operator.node_count(), f0.len())?;
        if !sigma.is_finite() {
            return Err(Error::InvalidInput(format!("sigma must be finite, got {sigma}")));
        }
        Ok(Self {
            operator,
            sigma,
            f0,
            inverse: Arc::new(OnceLock::new()),
        })
    }

    fn inverse(&self) -> Result<&DMatrix<f64>> {
        if let Some(m) = self.inverse.get() {
            return Ok(m);
        }
        let n = self.operator.node_count();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.operator.solve(&e)?;
            e[j] = 0.0;
            m.set_column(j, &nalgebra::DVector::from_column_slice(&col));
        }
        Ok(self.inverse.get_or_init(|| m))
    }

    /// `‖L⁻¹‖₂` by power iteration on `L⁻ᵀL⁻¹`.
    pub fn inverse_norm(&self) -> Result<(f64, crate::spectral::SpectralEstimate)> {
        let op = &self.operator;
        let est = power_iteration::<_, Error>(op.node_count(), |x| {
            let y = op.solve(x)?;
            Ok(op.solve_transpose(&y)?.into_inner())
        })?;
        Ok((est.value.max(0.0).sqrt(), est))
    }
}

/// Smooth-bump sum over separated centers.
///
/// With `targets == centers` this reproduces each center as a fixed point;
/// otherwise each center maps to its own target obstacle.
#[derive(Debug, Clone)]
pub struct CutoffMap {
    pub delta: f64,
    pub centers: Vec<StateVector>,
    pub targets: Vec<StateVector>,
    /// Weight `h^dim` of the grid L² inner product.
    pub weight: f64,
}

impl CutoffMap {
    pub fn new(
        delta: f64,
        centers: Vec<StateVector>,
        targets: Vec<StateVector>,
        weight: f64,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidInput(format!("delta must be positive, got {delta}")));
        }
        if !(weight > 0.0) {
            return Err(Error::InvalidInput("norm weight must be positive".into()));
        }
        if centers.is_empty() || centers.len() != targets.len() {
            return Err(Error::InvalidInput(format!(
                "need matching nonempty centers and targets, got {} and {}",
                centers.len(),
                targets.len()
            )));
        }
        let n = centers[0].len();
        for v in centers.iter().chain(&targets) {
            check_len(n, v.len())?;
            if !v.is_finite() {
                return Err(Error::InvalidInput("cutoff data must be finite".into()));
            }
        }
        for a in 0..centers.len() {
            for b in a + 1..centers.len() {
                let d2 = weight * sq_dist(&centers[a], &centers[b]);
                if d2 <= 4.0 * delta * delta {
                    return Err(Error::InvalidInput(format!(
                        "centers {a} and {b} violate the separation condition: ‖y_a − y_b‖² = {d2:e} ≤ 4δ² = {:e}",
                        4.0 * delta * delta
                    )));
                }
            }
        }
        Ok(Self {
            delta,
            centers,
            targets,
            weight,
        })
    }

    pub fn is_fixed_point_kind(&self) -> bool {
        self.centers == self.targets
    }

    fn sq_norm_h(&self, u: &[f64], c: &[f64]) -> f64 {
        self.weight * sq_dist(u, c)
    }

    /// Bump value `ν(t)`.
    pub fn nu(&self, t: f64) -> f64 {
        let d2 = self.delta * self.delta;
        if t < d2 {
            1.0
        } else if t >= 2.0 * d2 {
            0.0
        } else {
            smooth_step((2.0 * d2 - t) / d2)
        }
    }

    /// Derivative `ν'(t)`.
    pub fn nu_prime(&self, t: f64) -> f64 {
        let d2 = self.delta * self.delta;
        if t <= d2 || t >= 2.0 * d2 {
            0.0
        } else {
            -smooth_step_prime((2.0 * d2 - t) / d2) / d2
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn bump_e(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

fn bump_e_prime(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        bump_e(x) / (x * x)
    }
}

/// C^∞ step, 0 for `x ≤ 0`, 1 for `x ≥ 1`.
pub fn smooth_step(x: f64) -> f64 {
    let a = bump_e(x);
    let b = bump_e(1.0 - x);
    a / (a + b)
}

fn smooth_step_prime(x: f64) -> f64 {
    let a = bump_e(x);
    let b = bump_e(1.0 - x);
    let s = a + b;
    (bump_e_prime(x) * b + a * bump_e_prime(1.0 - x)) / (s * s)
}

#[derive(Debug, Clone)]
pub enum ObstacleMap {
    PdeInverse(PdeInverseMap),
    Cutoff(CutoffMap),
    Constant(StateVector),
    /// `Φ(y) = scale·y + offset`.
    AffineScaling { scale: f64, offset: StateVector },
}

impl ObstacleMap {
    pub fn kind(&self) -> MapKind {
        match self {
            ObstacleMap::PdeInverse(_) => MapKind::PdeInverse,
            ObstacleMap::Cutoff(c) if c.is_fixed_point_kind() => MapKind::CutoffMultiplicity1,
            ObstacleMap::Cutoff(_) => MapKind::CutoffMultiplicity2,
            ObstacleMap::Constant(_) => MapKind::Constant,
            ObstacleMap::AffineScaling { .. } => MapKind::AffineScaling,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            ObstacleMap::PdeInverse(m) => m.f0.len(),
            ObstacleMap::Cutoff(c) => c.centers[0].len(),
            ObstacleMap::Constant(p) => p.len(),
            ObstacleMap::AffineScaling { offset, .. } => offset.len(),
        }
    }

    /// Whether the map is order preserving by construction.
    pub fn is_increasing_by_construction(&self) -> bool {
        match self {
            ObstacleMap::PdeInverse(m) => m.sigma >= 0.0 && m.operator.is_t_monotone,
            ObstacleMap::Cutoff(_) => false,
            ObstacleMap::Constant(_) => true,
            ObstacleMap::AffineScaling { scale, .. } => *scale >= 0.0,
        }
    }

    pub fn eval(&self, y: &[f64]) -> Result<StateVector> {
        check_len(self.node_count(), y.len())?;
        match self {
            ObstacleMap::PdeInverse(m) => {
                let phi = m.operator.solve(y)?;
                Ok(StateVector::new(
                    phi.iter().zip(m.f0.iter()).map(|(p, f)| m.sigma * p + f).collect(),
                ))
            }
            ObstacleMap::Cutoff(c) => {
                let mut out = vec![0.0; y.len()];
                for (center, target) in c.centers.iter().zip(&c.targets) {
                    let w = c.nu(c.sq_norm_h(y, center));
                    if w != 0.0 {
                        for (o, t) in out.iter_mut().zip(target.iter()) {
                            *o += w * t;
                        }
                    }
                }
                Ok(StateVector::new(out))
            }
            ObstacleMap::Constant(p) => Ok(p.clone()),
            ObstacleMap::AffineScaling { scale, offset } => Ok(StateVector::new(
                y.iter().zip(offset.iter()).map(|(v, o)| scale * v + o).collect(),
            )),
        }
    }

    /// `Φ'(y)(h)`.
    pub fn deriv(&self, y: &[f64], h: &[f64]) -> Result<StateVector> {
        let n = self.node_count();
        check_len(n, y.len())?;
        check_len(n, h.len())?;
        match self {
            ObstacleMap::PdeInverse(m) => Ok(m.operator.solve(h)?.scaled(m.sigma)),
            ObstacleMap::Cutoff(c) => {
                let mut out = vec![0.0; n];
                for (center, target) in c.centers.iter().zip(&c.targets) {
                    let np = c.nu_prime(c.sq_norm_h(y, center));
                    if np == 0.0 {
                        continue;
                    }
                    let diff: Vec<f64> = y.iter().zip(center.iter()).map(|(a, b)| a - b).collect();
                    let s = 2.0 * np * c.weight * dot(h, &diff);
                    for (o, t) in out.iter_mut().zip(target.iter()) {
                        *o += s * t;
                    }
                }
                Ok(StateVector::new(out))
            }
            ObstacleMap::Constant(_) => Ok(StateVector::zeros(n)),
            ObstacleMap::AffineScaling { scale, .. } => {
                Ok(StateVector::new(h.iter().map(|v| scale * v).collect()))
            }
        }
    }

    /// `Φ'(y)ᵀ g` with respect to the Euclidean pairing.
    pub fn deriv_transpose(&self, y: &[f64], g: &[f64]) -> Result<StateVector> {
        let n = self.node_count();
        check_len(n, y.len())?;
        check_len(n, g.len())?;
        match self {
            ObstacleMap::PdeInverse(m) => Ok(m.operator.solve_transpose(g)?.scaled(m.sigma)),
            ObstacleMap::Cutoff(c) => {
                let mut out = vec![0.0; n];
                for (center, target) in c.centers.iter().zip(&c.targets) {
                    let np = c.nu_prime(c.sq_norm_h(y, center));
                    if np == 0.0 {
                        continue;
                    }
                    let s = 2.0 * np * c.weight * dot(target, g);
                    for ((o, a), b) in out.iter_mut().zip(y).zip(center.iter()) {
                        *o += s * (a - b);
                    }
                }
                Ok(StateVector::new(out))
            }
            ObstacleMap::Constant(_) => Ok(StateVector::zeros(n)),
            ObstacleMap::AffineScaling { scale, .. } => {
                Ok(StateVector::new(g.iter().map(|v| scale * v).collect()))
            }
        }
    }

    /// Dense matrix of `Φ'(y)`.
    pub fn jacobian_dense(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.node_count();
        check_len(n, y.len())?;
        match self {
            ObstacleMap::PdeInverse(m) => Ok(m.inverse()? * m.sigma),
            ObstacleMap::Cutoff(c) => {
                let mut j = DMatrix::zeros(n, n);
                for (center, target) in c.centers.iter().zip(&c.targets) {
                    let np = c.nu_prime(c.sq_norm_h(y, center));
                    if np == 0.0 {
                        continue;
                    }
                    let s = 2.0 * np * c.weight;
                    for r in 0..n {
                        for k in 0..n {
                            j[(r, k)] += s * target[r] * (y[k] - center[k]);
                        }
                    }
                }
                Ok(j)
            }
            ObstacleMap::Constant(_) => Ok(DMatrix::zeros(n, n)),
            ObstacleMap::AffineScaling { scale, .. } => Ok(DMatrix::identity(n, n) * *scale),
        }
    }

    /// Euclidean operator norm of `Φ'(y)`.
    pub fn derivative_norm(&self, y: &[f64]) -> Result<f64> {
        match self {
            ObstacleMap::PdeInverse(m) => Ok(m.sigma.abs() * m.inverse_norm()?.0),
            ObstacleMap::Constant(_) => Ok(0.0),
            ObstacleMap::AffineScaling { scale, .. } => Ok(scale.abs()),
            ObstacleMap::Cutoff(_) => {
                let est = power_iteration::<_, Error>(self.node_count(), |x| {
                    let jx = self.deriv(y, x)?;
                    Ok(self.deriv_transpose(y, &jx)?.into_inner())
                })?;
                Ok(est.value.max(0.0).sqrt())
            }
        }
    }

    /// Lipschitz constant of `Φ` on the grid-L² ball of `radius` around
    /// `center`.
    pub fn lipschitz_certificate(
        &self,
        center: &[f64],
        radius: f64,
    ) -> Result<LipschitzCertificate> {
        check_len(self.node_count(), center.len())?;
        if !(radius > 0.0) {
            return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
        }
        match self {
            ObstacleMap::PdeInverse(m) => {
                let (norm, _) = m.inverse_norm()?;
                Ok(LipschitzCertificate {
                    value: m.sigma.abs() * norm,
                    is_estimate: false,
                    method: "power_iteration(L⁻ᵀL⁻¹)",
                    radius: None,
                })
            }
            ObstacleMap::Constant(_) => Ok(LipschitzCertificate {
                value: 0.0,
                is_estimate: false,
                method: "exact",
                radius: None,
            }),
            ObstacleMap::AffineScaling { scale, .. } => Ok(LipschitzCertificate {
                value: scale.abs(),
                is_estimate: false,
                method: "exact",
                radius: None,
            }),
            ObstacleMap::Cutoff(c) => {
                let mut rng = ChaCha8Rng::seed_from_u64(CERTIFICATE_SEED);
                let n = center.len();
                let mut sup: f64 = self.derivative_norm(center)?;
                for _ in 0..CERTIFICATE_SAMPLES {
                    let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let len = (c.weight * dot(&dir, &dir)).sqrt();
                    let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
                    let p: Vec<f64> = center
                        .iter()
                        .zip(&dir)
                        .map(|(x, d)| x + r * d / len)
                        .collect();
                    sup = sup.max(self.derivative_norm(&p)?);
                }
                Ok(LipschitzCertificate {
                    value: CERTIFICATE_SAFETY * sup,
                    is_estimate: true,
                    method: "sampled_derivative_norm",
                    radius: Some(radius),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{assemble_operator, build_grid, OperatorSpec};

    fn pde_map(n: usize, sigma: f64) -> ObstacleMap {
        let op = assemble_operator(build_grid(1, n).unwrap(), &OperatorSpec::laplacian()).unwrap();
        let f0 = StateVector::new((0..n).map(|i| 0.1 + 0.01 * i as f64).collect());
        ObstacleMap::PdeInverse(PdeInverseMap::new(Arc::new(op), sigma, f0).unwrap())
    }

    fn two_centers() -> ObstacleMap {
        let n = 9;
        let h = 0.1;
        let c1 = StateVector::constant(n, 0.5);
        let c2 = StateVector::constant(n, -0.5);
        // ‖c1 − c2‖²_h = 0.9, so δ = 0.3 satisfies 4δ² = 0.36 < 0.9.
        ObstacleMap::Cutoff(CutoffMap::new(0.3, vec![c1.clone(), c2.clone()], vec![c1, c2], h).unwrap())
    }

    #[test]
    fn smooth_step_endpoints() {
        assert_eq!(smooth_step(0.0), 0.0);
        assert_eq!(smooth_step(1.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nu_plateau_and_support() {
        let ObstacleMap::Cutoff(c) = two_centers() else { unreachable!() };
        let d2 = c.delta * c.delta;
        assert_eq!(c.nu(0.5 * d2), 1.0);
        assert_eq!(c.nu(2.0 * d2), 0.0);
        assert_eq!(c.nu(3.0 * d2), 0.0);
        let t = 1.4 * d2;
        let fd = (c.nu(t + 1e-7) - c.nu(t - 1e-7)) / 2e-7;
        assert!((fd - c.nu_prime(t)).abs() < 1e-5 * (1.0 + fd.abs()));
    }

    #[test]
    fn centers_are_fixed_points_with_zero_derivative() {
        let m = two_centers();
        let ObstacleMap::Cutoff(c) = &m else { unreachable!() };
        for y in &c.centers {
            assert_eq!(&m.eval(y).unwrap(), y);
            let h = StateVector::new((0..9).map(|i| i as f64).collect());
            assert_eq!(m.deriv(y, &h).unwrap().norm_inf(), 0.0);
            let cert = m.lipschitz_certificate(y, c.delta / 2.0).unwrap();
            assert_eq!(cert.value, 0.0);
            assert!(cert.is_estimate);
        }
    }

    #[test]
    fn separation_is_enforced() {
        let c1 = StateVector::constant(4, 0.1);
        let c2 = StateVector::constant(4, 0.0);
        assert!(CutoffMap::new(1.0, vec![c1.clone(), c2.clone()], vec![c1, c2], 0.2).is_err());
    }

    #[test]
    fn pde_inverse_at_zero_returns_offset() {
        let m = pde_map(6, 0.5);
        let ObstacleMap::PdeInverse(p) = &m else { unreachable!() };
        assert_eq!(m.eval(&[0.0; 6]).unwrap(), p.f0);
    }

    #[test]
    fn constant_map() {
        let psi = StateVector::new(vec![1.0, 2.0, 3.0]);
        let m = ObstacleMap::Constant(psi.clone());
        assert_eq!(m.eval(&[5.0, -1.0, 0.0]).unwrap(), psi);
        let cert = m.lipschitz_certificate(&[0.0; 3], 1.0).unwrap();
        assert_eq!(cert.value, 0.0);
    }

    #[test]
    fn pde_inverse_derivative_matches_central_differences() {
        let m = pde_map(8, 2.0);
        let y: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).cos()).collect();
        let h: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).sin()).collect();
        let s = 1e-5;
        let yp: Vec<f64> = y.iter().zip(&h).map(|(a, b)| a + s * b).collect();
        let ym: Vec<f64> = y.iter().zip(&h).map(|(a, b)| a - s * b).collect();
        let fp = m.eval(&yp).unwrap();
        let fm = m.eval(&ym).unwrap();
        let d = m.deriv(&y, &h).unwrap();
        for i in 0..8 {
            assert!(((fp[i] - fm[i]) / (2.0 * s) - d[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn transpose_and_jacobian_are_consistent() {
        let mut maps = vec![pde_map(6, 0.3)];
        let c1 = StateVector::new(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let c2 = StateVector::new(vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let t1 = StateVector::constant(6, 0.3);
        let t2 = StateVector::constant(6, -0.2);
        maps.push(ObstacleMap::Cutoff(CutoffMap::new(0.5, vec![c1, c2], vec![t1, t2], 1.0).unwrap()));
        // Inside the transition band of the first center: ‖y‖² = 0.4 ∈ (δ², 2δ²).
        let y = vec![0.2, 0.2, 0.2, 0.3, 0.3, 0.4];
        let g = vec![1.0, -1.0, 0.5, 2.0, 0.0, 1.0];
        let h = vec![0.3, 0.1, -0.2, 0.5, 1.0, -1.0];
        for m in &maps {
            let jh = m.deriv(&y, &h).unwrap();
            let jtg = m.deriv_transpose(&y, &g).unwrap();
            let lhs = dot(&g, &jh);
            let rhs = dot(&jtg, &h);
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
            let jd = m.jacobian_dense(&y).unwrap();
            let jh2 = &jd * nalgebra::DVector::from_column_slice(&h);
            for i in 0..6 {
                assert!((jh2[i] - jh[i]).abs() < 1e-10);
            }
        }
        assert!(maps[1].deriv(&y, &h).unwrap().norm() > 0.0);
    }

    #[test]
    fn pde_certificate_matches_svd() {
        let m = pde_map(40, 0.7);
        let ObstacleMap::PdeInverse(p) = &m else { unreachable!() };
        let cert = m.lipschitz_certificate(&[0.0; 40], 1.0).unwrap();
        let svd = p.operator.to_dense().try_inverse().unwrap().singular_values();
        let oracle = 0.7 * svd.max();
        assert!((cert.value - oracle).abs() <= 0.05 * oracle);
        assert!(!cert.is_estimate);
    }
}
