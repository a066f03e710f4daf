mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use qvi_core::control::{solve_oc_penalized, ControlProblem};
use qvi_core::linsolve::{solve_dense, solve_sparse, sparse_to_dense, threshold};
use qvi_core::obstacle::{CutoffMap, ObstacleMap, PdeInverseMap};
use qvi_core::qvi::{
    check_increasing_sampled, penalty_path, penalty_uniform_bound_constant, solve_penalized,
    solve_qvi_interval, solve_qvi_iteration, EpsRule, MONOTONE_TOL,
};
use qvi_core::sensitivity::solve_derivative_qvi;
use qvi_core::vector::{lattice_inf, lattice_sup, negative_part, pair, positive_part};
use qvi_core::vi::solve_vi_upper;
use qvi_core::{DiscreteOperator, DualVector, StateVector};
use rand::Rng;
use sprs::TriMat;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn shape() -> impl Strategy<Value = (usize, usize)> {
    prop_oneof![(Just(1usize), 3usize..40), (Just(2usize), 2usize..7)]
}

/// Contractive PDE-inverse obstacle `Φ(y) = σA⁻¹y + f0` with `σ = frac·c_a²/(c_a + c_b)`.
fn contraction_map(a: &Arc<DiscreteOperator>, frac: f64, f0: f64) -> ObstacleMap {
    let sigma = frac * a.c_a * a.c_a / (a.c_a + a.c_b);
    let n = a.node_count();
    ObstacleMap::PdeInverse(PdeInverseMap::new(a.clone(), sigma, StateVector::constant(n, f0)).unwrap())
}

/// Point at H-distance `1.2δ` from `center`, inside the cutoff's transition band.
fn transition_point(r: &mut rand_chacha::ChaCha8Rng, center: &[f64], delta: f64, weight: f64) -> Vec<f64> {
    let e = random_vec(r, center.len(), -1.0, 1.0);
    let scale = 1.2 * delta / (weight.sqrt() * norm(&e));
    center.iter().zip(&e).map(|(c, v)| c + scale * v).collect()
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn operator_constants_bound_random_vectors(seed in any::<u64>(), (dim, n) in shape()) {
        let mut r = rng(seed);
        let a = random_operator(&mut r, dim, n);
        let m = a.node_count();
        for _ in 0..1000 {
            let v = StateVector::new(random_vec(&mut r, m, -1.0, 1.0));
            let av = a.apply(&v).unwrap();
            let vv = v.norm() * v.norm();
            prop_assert!(pair(&av, &v).unwrap() >= a.c_a * vv * (1.0 - 1e-9));
            prop_assert!(av.norm() <= a.c_b * v.norm() * (1.0 + 1e-9));
        }
    }

    #[test]
    fn operator_is_t_monotone(seed in any::<u64>(), (dim, n) in shape()) {
        let mut r = rng(seed);
        let a = random_operator(&mut r, dim, n);
        prop_assert!(a.is_t_monotone);
        for _ in 0..50 {
            let v = StateVector::new(random_vec(&mut r, a.node_count(), -1.0, 1.0));
            let plus = positive_part(&v);
            let minus = negative_part(&v);
            prop_assert!(pair(&a.apply(&plus).unwrap(), &minus).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn lattice_sup_plus_inf_is_sum(v in prop::collection::vec(-1e3f64..1e3, 1..50), seed in any::<u64>()) {
        let mut r = rng(seed);
        let w: Vec<f64> = v.iter().map(|_| r.random_range(-1e3..1e3)).collect();
        let (v, w) = (StateVector::new(v), StateVector::new(w));
        let s = lattice_sup(&v, &w).unwrap();
        let i = lattice_inf(&v, &w).unwrap();
        for k in 0..v.len() {
            prop_assert_eq!(s[k] + i[k], v[k] + w[k]);
        }
    }

    #[test]
    fn sparse_and_dense_solves_agree(seed in any::<u64>(), n in 2usize..200, symmetric in any::<bool>()) {
        let mut r = rng(seed);
        let mut t = TriMat::new((n, n));
        let mut diag = vec![1.0; n];
        for i in 0..n {
            for j in [i + 1, i + 3] {
                if j < n {
                    let v: f64 = r.random_range(-1.0..1.0);
                    let w = if symmetric { v } else { r.random_range(-1.0..1.0) };
                    t.add_triplet(i, j, v);
                    t.add_triplet(j, i, w);
                    diag[i] += v.abs().max(w.abs());
                    diag[j] += v.abs().max(w.abs());
                }
            }
        }
        for (i, d) in diag.iter().enumerate() {
            t.add_triplet(i, i, *d);
        }
        let m = t.to_csr();
        let b = random_vec(&mut r, n, -5.0, 5.0);
        let (x, rep) = solve_sparse(&m, &b, 1e-12).unwrap();
        prop_assert!(rep.converged);
        prop_assert!(rep.final_residual <= threshold(1e-12, &b));
        let xd = solve_dense(&sparse_to_dense(&m), &b).unwrap();
        prop_assert!(dist(&x, &xd) <= 1e-8 * (1.0 + norm(&xd)));
    }

    #[test]
    fn obstacle_solution_is_order_preserving(seed in any::<u64>(), (dim, n) in shape()) {
        let mut r = rng(seed);
        let a = random_operator(&mut r, dim, n);
        let m = a.node_count();
        let f1 = random_vec(&mut r, m, -20.0, 40.0);
        let f2: Vec<f64> = f1.iter().map(|v| v + r.random_range(0.0..10.0)).collect();
        let p1 = random_vec(&mut r, m, 0.0, 0.2);
        let p2: Vec<f64> = p1.iter().map(|v| v + r.random_range(0.0..0.1)).collect();
        let s1 = solve_vi_upper(&a, &DualVector::new(f1), &StateVector::new(p1), 1e-12).unwrap();
        let s2 = solve_vi_upper(&a, &DualVector::new(f2), &StateVector::new(p2), 1e-12).unwrap();
        for k in 0..m {
            prop_assert!(s1.y[k] <= s2.y[k] + 1e-9);
        }
    }

    #[test]
    fn obstacle_solution_is_lipschitz_in_obstacle(seed in any::<u64>(), (dim, n) in shape()) {
        let mut r = rng(seed);
        let a = random_operator(&mut r, dim, n);
        let m = a.node_count();
        let f = DualVector::new(random_vec(&mut r, m, -20.0, 60.0));
        let p1 = StateVector::new(random_vec(&mut r, m, 0.0, 0.2));
        let p2 = StateVector::new(random_vec(&mut r, m, 0.0, 0.2));
        let s1 = solve_vi_upper(&a, &f, &p1, 1e-12).unwrap();
        let s2 = solve_vi_upper(&a, &f, &p2, 1e-12).unwrap();
        let bound = (1.0 + a.c_b / a.c_a) * p1.dist(&p2).unwrap() + 1e-9;
        prop_assert!(s1.y.dist(&s2.y).unwrap() <= bound);
    }

    #[test]
    fn obstacle_derivative_is_linear(seed in any::<u64>(), n in 3usize..30) {
        let mut r = rng(seed);
        let a = Arc::new(random_operator(&mut r, 1, n));
        let w = a.grid.cell_volume();
        let c1 = StateVector::new(random_vec(&mut r, n, 0.0, 0.1));
        let c2 = StateVector::new(c1.iter().map(|v| v + 0.5).collect());
        let cut = CutoffMap::new(0.05, vec![c1.clone(), c2], vec![c1.clone(), c1.clone()], w).unwrap();
        let maps = [contraction_map(&a, 0.5, 0.01), ObstacleMap::Cutoff(cut)];
        for map in &maps {
            let y = transition_point(&mut r, &c1, 0.05, w);
            let h1 = random_vec(&mut r, n, -1.0, 1.0);
            let h2 = random_vec(&mut r, n, -1.0, 1.0);
            let (s, t) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
            let comb: Vec<f64> = h1.iter().zip(&h2).map(|(x, y)| s * x + t * y).collect();
            let lhs = map.deriv(&y, &comb).unwrap();
            let d1 = map.deriv(&y, &h1).unwrap();
            let d2 = map.deriv(&y, &h2).unwrap();
            let rhs: Vec<f64> = d1.iter().zip(d2.iter()).map(|(x, y)| s * x + t * y).collect();
            prop_assert!(dist(&lhs, &rhs) <= 1e-10 * (1.0 + norm(&rhs)));
        }
    }

    #[test]
    fn obstacle_derivative_is_first_order_accurate(seed in any::<u64>(), n in 3usize..30) {
        let mut r = rng(seed);
        let a = Arc::new(random_operator(&mut r, 1, n));
        let w = a.grid.cell_volume();
        let center = StateVector::new(random_vec(&mut r, n, 0.0, 0.1));
        let cut = CutoffMap::new(0.5, vec![center.clone()], vec![center.clone()], w).unwrap();
        let maps = [contraction_map(&a, 0.5, 0.01), ObstacleMap::Cutoff(cut)];
        for map in &maps {
            let y = transition_point(&mut r, &center, 0.5, w);
            let h = random_vec(&mut r, n, -1.0, 1.0);
            let phi = map.eval(&y).unwrap();
            let dh = map.deriv(&y, &h).unwrap();
            let remainder = |t: f64| {
                let yt: Vec<f64> = y.iter().zip(&h).map(|(a, b)| a + t * b).collect();
                let pt = map.eval(&yt).unwrap();
                let e: Vec<f64> = (0..n).map(|i| pt[i] - phi[i] - t * dh[i]).collect();
                norm(&e) / t
            };
            let (big, small) = (remainder(1e-3), remainder(1e-5));
            prop_assert!(small <= 0.1 * big + 1e-8, "remainder/t {big:e} -> {small:e}");
        }
    }

    #[test]
    fn pde_inverse_map_is_increasing(seed in any::<u64>(), (dim, n) in shape()) {
        let mut r = rng(seed);
        let a = Arc::new(random_operator(&mut r, dim, n));
        let map = contraction_map(&a, r.random_range(0.1..0.9), 0.0);
        prop_assert!(map.is_increasing_by_construction());
        let m = a.node_count();
        let worst = check_increasing_sampled(&map, &vec![-1.0; m], &vec![1.0; m], 20, seed).unwrap();
        prop_assert!(worst <= 1e-12);
    }

    #[test]
    fn projection_is_idempotent_and_feasible(v in prop::collection::vec(-50f64..50.0, 1..40), seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = v.len();
        let a = laplacian(n);
        let lo: Vec<f64> = (0..n).map(|_| if r.random_bool(0.3) { f64::NEG_INFINITY } else { r.random_range(-10.0..0.0) }).collect();
        let hi: Vec<f64> = (0..n).map(|_| if r.random_bool(0.3) { f64::INFINITY } else { r.random_range(0.0..10.0) }).collect();
        let problem = ControlProblem::new(
            a,
            ObstacleMap::Constant(StateVector::constant(n, 1.0)),
            StateVector::zeros(n),
            1.0,
            StateVector::new(lo.clone()),
            StateVector::new(hi.clone()),
        ).unwrap();
        let p = problem.project(&v);
        prop_assert_eq!(problem.project(&p), p.clone());
        for k in 0..n {
            prop_assert!(lo[k] <= p[k] && p[k] <= hi[k]);
        }
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn qvi_routes_agree(seed in any::<u64>(), n in 5usize..30, frac in 0.1f64..0.9) {
        let mut r = rng(seed);
        let a = Arc::new(random_operator(&mut r, 1, n));
        let map = contraction_map(&a, frac, 0.02);
        let f = DualVector::new(random_vec(&mut r, n, 0.0, 10.0));
        let it = solve_qvi_iteration(&a, &f, &map, None, 1e-12, 1000).unwrap();
        let f_upper = DualVector::new(f.iter().map(|v| v + 1.0).collect());
        let (lo, hi) = solve_qvi_interval(&a, &f, &f_upper, &StateVector::zeros(n), &map, 1e-12, 1000).unwrap();
        let schedule: Vec<f64> = (1..=9).map(|k| 10f64.powi(-k)).collect();
        let (pen, rep) = penalty_path(&a, &f, &map, &schedule, EpsRule::EqualsRho, 1e-12).unwrap();
        prop_assert!(rep.failure.is_none());
        for other in [&lo.y, &hi.y, &pen.y] {
            prop_assert!(it.y.dist(other).unwrap() <= 1e-5 * (1.0 + it.y.norm()));
        }
    }

    #[test]
    fn interval_sequences_are_monotone(seed in any::<u64>(), n in 5usize..30, frac in 0.1f64..0.9) {
        let mut r = rng(seed);
        let a = Arc::new(random_operator(&mut r, 1, n));
        let map = contraction_map(&a, frac, 0.02);
        let f = DualVector::new(random_vec(&mut r, n, 0.0, 10.0));
        let f_upper = DualVector::new(f.iter().map(|v| v + 5.0).collect());
        let (lo, hi) = solve_qvi_interval(&a, &f, &f_upper, &StateVector::zeros(n), &map, 1e-12, 1000).unwrap();
        let slack = MONOTONE_TOL * (1.0 + f_upper.norm_inf());
        prop_assert!(lo.history.iter().all(|h| h.max_decrease <= slack));
        prop_assert!(hi.history.iter().all(|h| h.max_increase <= slack));
        for k in 0..n {
            prop_assert!(lo.y[k] <= hi.y[k] + 1e-8);
        }
    }

    #[test]
    fn penalized_states_are_uniformly_bounded(seed in any::<u64>(), (dim, n) in shape()) {
        let mut r = rng(seed);
        let a = Arc::new(random_operator(&mut r, dim, n));
        let map = contraction_map(&a, 0.5, 0.05);
        let f = DualVector::new(random_vec(&mut r, a.node_count(), 0.0, 10.0));
        let c = penalty_uniform_bound_constant(a.c_a, a.c_b);
        let mut start: Option<StateVector> = None;
        for k in 1..=7 {
            let rho = 10f64.powi(-k);
            let pf = EpsRule::EqualsRho.penalty(rho).unwrap();
            let (y, _) = solve_penalized(&a, &f, &map, rho, &pf, 1e-12, start.as_ref()).unwrap();
            prop_assert!(y.norm() <= 2.0 * c * f.norm());
            start = Some(y);
        }
    }

    #[test]
    fn derivative_iteration_contracts(seed in any::<u64>(), n in 5usize..30, frac in 0.1f64..0.9) {
        let mut r = rng(seed);
        let a = Arc::new(random_operator(&mut r, 1, n));
        let map = contraction_map(&a, frac, 0.02);
        let f = DualVector::new(random_vec(&mut r, n, 0.0, 20.0));
        let sol = solve_qvi_iteration(&a, &f, &map, None, 1e-12, 1000).unwrap();
        let d = DualVector::new(random_vec(&mut r, n, -10.0, 10.0));
        let s = solve_derivative_qvi(&a, &d, &sol, &map, 1e-12, 500, false).unwrap();
        if s.contraction_ratio.is_finite() {
            prop_assert!(s.contraction_ratio <= a.c_b * s.c_l / a.c_a + 0.05);
        }
    }

    #[test]
    fn projected_gradient_decreases_objective(seed in any::<u64>(), n in 5usize..30, nu in 1e-3f64..1.0) {
        let mut r = rng(seed);
        let a = laplacian(n);
        let y_d = StateVector::new(random_vec(&mut r, n, -0.05, 0.05));
        let problem = ControlProblem::new(
            a,
            ObstacleMap::Constant(StateVector::constant(n, 0.03)),
            y_d,
            nu,
            StateVector::constant(n, -5.0),
            StateVector::constant(n, 20.0),
        ).unwrap();
        let rho = 1e-2;
        let pf = EpsRule::EqualsRho.penalty(rho).unwrap();
        let u0 = StateVector::new(random_vec(&mut r, n, -5.0, 20.0));
        let res = solve_oc_penalized(&problem, rho, &pf, &u0, None, 1e-9, 300).unwrap();
        for w in res.history.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective + 64.0 * f64::EPSILON * (1.0 + w[0].objective.abs()));
        }
    }
}
