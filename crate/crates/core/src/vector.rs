//! Nodal vectors on the grid and the lattice operations on them.
//!
//! A [`StateVector`] holds primal nodal values (y, v, obstacles), a
//! [`DualVector`] holds load coefficients (f, d, ξ). The duality pairing is
//! the plain dot product of the coefficient arrays.

use std::ops::{Deref, DerefMut};

use crate::error::{check_len, Result};

macro_rules! nodal_vector {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Default)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(n: usize) -> Self {
                Self(vec![0.0; n])
            }

            pub fn constant(n: usize, value: f64) -> Self {
                Self(vec![value; n])
            }

            pub fn values(&self) -> &[f64] {
                &self.0
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn norm(&self) -> f64 {
                norm2(&self.0)
            }

            pub fn norm_inf(&self) -> f64 {
                norm_inf(&self.0)
            }

            pub fn scaled(&self, s: f64) -> Self {
                Self(self.0.iter().map(|v| s * v).collect())
            }

            /// `self + s * other`.
            pub fn add_scaled(&self, s: f64, other: &Self) -> Result<Self> {
                check_len(self.len(), other.len())?;
                Ok(Self(
                    self.0.iter().zip(&other.0).map(|(a, b)| a + s * b).collect(),
                ))
            }

            pub fn sub(&self, other: &Self) -> Result<Self> {
                self.add_scaled(-1.0, other)
            }

            pub fn dist(&self, other: &Self) -> Result<f64> {
                check_len(self.len(), other.len())?;
                Ok(dist2(&self.0, &other.0))
            }
        }

        impl Deref for $name {
            type Target = [f64];
            fn deref(&self) -> &[f64] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

nodal_vector!(StateVector);
nodal_vector!(DualVector);

impl StateVector {
    /// Reinterpret primal coefficients as a load functional (lumped identification).
    pub fn to_dual(&self) -> DualVector {
        DualVector(self.0.clone())
    }
}

impl DualVector {
    pub fn to_state(&self) -> StateVector {
        StateVector(self.0.clone())
    }
}

/// Nodewise `max(v, 0)`.
pub fn positive_part(v: &StateVector) -> StateVector {
    StateVector(v.iter().map(|x| x.max(0.0)).collect())
}

/// Nodewise `max(-v, 0)`, so that `v = v⁺ - v⁻`.
pub fn negative_part(v: &StateVector) -> StateVector {
    StateVector(v.iter().map(|x| (-x).max(0.0)).collect())
}

pub fn lattice_sup(v: &StateVector, w: &StateVector) -> Result<StateVector> {
    check_len(v.len(), w.len())?;
    Ok(StateVector(v.iter().zip(w.iter()).map(|(a, b)| a.max(*b)).collect()))
}

pub fn lattice_inf(v: &StateVector, w: &StateVector) -> Result<StateVector> {
    check_len(v.len(), w.len())?;
    Ok(StateVector(v.iter().zip(w.iter()).map(|(a, b)| a.min(*b)).collect()))
}

/// Duality pairing `⟨f, v⟩`.
pub fn pair(f: &DualVector, v: &StateVector) -> Result<f64> {
    check_len(f.len(), v.len())?;
    Ok(dot(f, v))
}

/// Largest amount by which `lower ≤ upper` fails nodewise (0 when it holds).
pub fn order_violation(lower: &[f64], upper: &[f64]) -> f64 {
    lower
        .iter()
        .zip(upper)
        .map(|(l, u)| (l - u).max(0.0))
        .fold(0.0, f64::max)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_part_clips_negatives() {
        let v = StateVector::new(vec![-1.0, 2.0]);
        assert_eq!(positive_part(&v).values(), &[0.0, 2.0]);
    }

    #[test]
    fn sup_and_inf() {
        let v = StateVector::new(vec![1.0, -3.0]);
        let z = StateVector::zeros(2);
        assert_eq!(lattice_sup(&v, &z).unwrap().values(), &[1.0, 0.0]);
        assert_eq!(lattice_inf(&v, &z).unwrap().values(), &[0.0, -3.0]);
        assert_eq!(lattice_sup(&v, &v).unwrap(), v);
    }

    #[test]
    fn pairing_is_dot_product() {
        let f = DualVector::new(vec![1.0, 2.0]);
        let v = StateVector::new(vec![3.0, 4.0]);
        assert_eq!(pair(&f, &v).unwrap(), 11.0);
        assert_eq!(pair(&DualVector::zeros(2), &v).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let v = StateVector::zeros(2);
        let w = StateVector::zeros(3);
        assert!(lattice_sup(&v, &w).is_err());
        assert!(pair(&DualVector::zeros(3), &v).is_err());
    }

    #[test]
    fn positive_minus_negative_part() {
        let v = StateVector::new(vec![-2.5, 0.0, 4.0]);
        let back = positive_part(&v).sub(&negative_part(&v)).unwrap();
        assert_eq!(back, v);
    }
}
