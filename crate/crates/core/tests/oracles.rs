mod common;

use std::sync::Arc;

use common::*;
use nalgebra::DMatrix;
use qvi_core::control::*;
use qvi_core::obstacle::{ObstacleMap, PdeInverseMap};
use qvi_core::qvi::{solve_penalized, solve_qvi_iteration, EpsRule};
use qvi_core::sensitivity::solve_derivative_qvi;
use qvi_core::vi::solve_vi_upper;
use qvi_core::{DualVector, StateVector};
use rand::Rng;

fn window(a: &qvi_core::DiscreteOperator, value: f64, outside: f64) -> StateVector {
    StateVector::new(
        (0..a.node_count())
            .map(|k| {
                let x = a.grid.coords(k)[0];
                if (0.3..=0.7).contains(&x) {
                    value
                } else {
                    outside
                }
            })
            .collect(),
    )
}

fn sine(a: &qvi_core::DiscreteOperator, amplitude: f64) -> StateVector {
    StateVector::new(
        (0..a.node_count())
            .map(|k| amplitude * (std::f64::consts::PI * a.grid.coords(k)[0]).sin())
            .collect(),
    )
}

/// Constant obstacle, lower control bound on a window forcing contact.
fn box_problem(n: usize) -> ControlProblem {
    let a = laplacian(n);
    ControlProblem::new(
        a.clone(),
        ObstacleMap::Constant(StateVector::constant(n, 0.05)),
        sine(&a, 0.02),
        0.01,
        window(&a, 10.0, f64::NEG_INFINITY),
        StateVector::constant(n, f64::INFINITY),
    )
    .unwrap()
}

fn schedule(k: i32) -> Vec<f64> {
    (1..=k).map(|j| 10f64.powi(-j)).collect()
}

#[test]
fn vi_matches_active_set_enumeration() {
    let mut r = rng(11);
    for _ in 0..20 {
        let a = random_operator(&mut r, 1, 5);
        let f = random_vec(&mut r, 5, -50.0, 150.0);
        let psi = random_vec(&mut r, 5, 0.0, 0.3);
        let want = enumerate_vi(&a.to_dense(), &f, &psi).expect("enumeration finds the solution");
        let got = solve_vi_upper(&a, &DualVector::new(f), &StateVector::new(psi), 1e-13).unwrap();
        assert!(dist(&got.y, &want) <= 1e-10, "{:?} vs {:?}", got.y, want);
    }
}

#[test]
fn adjoint_matches_dense_assembly() {
    let n = 5;
    let a = laplacian(n);
    let f0 = StateVector::constant(n, 0.01);
    let map = ObstacleMap::PdeInverse(PdeInverseMap::new(a.clone(), 2.0, f0).unwrap());
    let u = StateVector::new(vec![3.0, 8.0, 12.0, 6.0, 1.0]);
    let y_d = StateVector::new(vec![0.0, 0.01, 0.03, 0.02, 0.0]);
    let problem = ControlProblem::new(
        a.clone(),
        map.clone(),
        y_d.clone(),
        1e-2,
        StateVector::constant(n, f64::NEG_INFINITY),
        StateVector::constant(n, f64::INFINITY),
    )
    .unwrap();
    let rho = 1e-3;
    let pf = EpsRule::EqualsRho.penalty(rho).unwrap();
    let (y, _) = solve_penalized(&a, &u.to_dual(), &map, rho, &pf, 1e-12, None).unwrap();
    let (p, slopes) = solve_adjoint_penalized(&problem, &y, rho, &pf, None).unwrap();
    assert!(slopes.iter().any(|m| *m > 0.0), "penalty must be engaged");

    let jphi = map.jacobian_dense(&y).unwrap();
    let phi = map.eval(&y).unwrap();
    let mut m: DMatrix<f64> = a.to_dense().transpose();
    let ipj = DMatrix::identity(n, n) - jphi;
    for i in 0..n {
        let s = pf.deriv(y[i] - phi[i]) / rho;
        for k in 0..n {
            m[(k, i)] += ipj[(i, k)] * s;
        }
    }
    let rhs: Vec<f64> = (0..n).map(|i| y_d[i] - y[i]).collect();
    let want = m.lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
    let err = dist(&p, want.as_slice());
    assert!(err <= 1e-9 * (1.0 + norm(want.as_slice())), "adjoint error {err:e}");
}

#[test]
fn adjoint_vanishes_at_target_state() {
    let n = 20;
    let a = laplacian(n);
    let map = ObstacleMap::Constant(StateVector::constant(n, 0.02));
    let u = StateVector::constant(n, 5.0);
    let rho = 1e-4;
    let pf = EpsRule::EqualsRho.penalty(rho).unwrap();
    let (y, _) = solve_penalized(&a, &u.to_dual(), &map, rho, &pf, 1e-12, None).unwrap();
    let problem = ControlProblem::new(
        a,
        map,
        y.clone(),
        0.1,
        StateVector::constant(n, f64::NEG_INFINITY),
        StateVector::constant(n, f64::INFINITY),
    )
    .unwrap();
    let (p, _) = solve_adjoint_penalized(&problem, &y, rho, &pf, None).unwrap();
    assert!(p.norm() <= 1e-12);
}

#[test]
fn unconstrained_problem_meets_kkt_and_dense_oracle() {
    let n = 30;
    let a = laplacian(n);
    let problem = ControlProblem::new(
        a.clone(),
        ObstacleMap::Constant(StateVector::constant(n, 100.0)),
        sine(&a, 0.02),
        1e-3,
        StateVector::constant(n, f64::NEG_INFINITY),
        StateVector::constant(n, f64::INFINITY),
    )
    .unwrap();
    let (b, rep) = oc_path(&problem, &schedule(4), EpsRule::EqualsRho, &StateVector::zeros(n), 1e-11, 5000).unwrap();
    assert!(rep.failure.is_none());
    let (u, y) = lq_oracle(&problem).unwrap();
    assert!(b.u.dist(&u).unwrap() <= 1e-6 * (1.0 + u.norm()));
    assert!(b.y.dist(&y).unwrap() <= 1e-6 * (1.0 + y.norm()));

    let ay = a.apply(&b.y).unwrap();
    assert!(dist(&ay, &b.u) <= 1e-8 * (1.0 + b.u.norm()));
    let atp = a.apply_transpose(&b.p).unwrap();
    let adj: Vec<f64> = (0..n).map(|i| problem.y_d[i] - b.y[i]).collect();
    assert!(dist(&atp, &adj) <= 1e-8);
    let nu_u: Vec<f64> = b.u.iter().map(|v| problem.nu * v).collect();
    assert!(dist(&nu_u, &b.p) <= 1e-8);
    assert!(b.lambda.norm_inf() <= 1e-8, "inactive obstacle carries no multiplier");
}

#[test]
fn heavy_control_cost_projects_zero() {
    let n = 30;
    let a = laplacian(n);
    let lower = window(&a, 1.0, -2.0);
    let problem = ControlProblem::new(
        a.clone(),
        ObstacleMap::Constant(StateVector::constant(n, 0.05)),
        sine(&a, 0.02),
        1e6,
        lower,
        StateVector::constant(n, 3.0),
    )
    .unwrap();
    let (b, _) = oc_path(&problem, &schedule(4), EpsRule::EqualsRho, &StateVector::zeros(n), 1e-12, 2000).unwrap();
    let target = problem.project(&vec![0.0; n]);
    assert!(b.u.dist(&target).unwrap() <= 1e-6);
}

#[test]
fn box_optimum_satisfies_control_inequality() {
    let problem = box_problem(40);
    let n = problem.node_count();
    let (b, rep) = oc_path(&problem, &schedule(9), EpsRule::EqualsRho, &StateVector::zeros(n), 1e-10, 5000).unwrap();
    assert!(rep.failure.is_none());
    assert!(rep.records.last().unwrap().converged);
    let g: Vec<f64> = (0..n).map(|i| problem.nu * b.u[i] - b.p[i]).collect();
    let mut r = rng(5);
    for _ in 0..100 {
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-20.0..20.0)).collect();
        let v = problem.project(&v);
        let diff: Vec<f64> = (0..n).map(|i| v[i] - b.u[i]).collect();
        assert!(problem.inner(&g, &diff) >= -1e-8);
    }
    let report = check_stationarity(&problem, &b, StationarityClass::WeakC, &StationarityOptions::default()).unwrap();
    assert!(report.pass, "{:?}", report.failures);
}

#[test]
fn adjoint_opposing_multiplier_is_flagged() {
    let problem = box_problem(40);
    let n = problem.node_count();
    let (b, _) = oc_path(&problem, &schedule(9), EpsRule::EqualsRho, &StateVector::zeros(n), 1e-10, 5000).unwrap();
    assert!(b.lambda.norm() > 1e-2, "contact must carry a multiplier");
    let mut bad = b.clone();
    bad.p = StateVector::new(b.p.iter().zip(b.lambda.iter()).map(|(p, l)| p - l).collect());
    let report = check_stationarity(&problem, &bad, StationarityClass::WeakC, &StationarityOptions::default()).unwrap();
    assert!(!report.pass);
    let sign = report.residual("lambda_p_sign").unwrap();
    assert!(sign > 1e-3);
}

#[test]
fn derivative_without_contact_is_unconstrained_solve() {
    let n = 25;
    let a = laplacian(n);
    let map = ObstacleMap::Constant(StateVector::constant(n, 1e3));
    let f = DualVector::constant(n, 3.0);
    let sol = solve_qvi_iteration(&a, &f, &map, None, 1e-12, 50).unwrap();
    assert!(sol.sets.strongly_active.is_empty() && sol.sets.biactive.is_empty());
    let mut r = rng(2);
    let d = DualVector::new(random_vec(&mut r, n, -10.0, 10.0));
    let s = solve_derivative_qvi(&a, &d, &sol, &map, 1e-12, 100, false).unwrap();
    let want = a.solve(&d).unwrap();
    assert!(s.alpha.dist(&want).unwrap() <= 1e-10 * (1.0 + want.norm()));
}

#[test]
fn uniform_penalty_bound_holds() {
    let n = 30;
    let a = Arc::new(operator(1, n, 1.0, vec![3.0], 0.5));
    let f0 = StateVector::new((0..n).map(|k| 0.05 + 0.1 * a.grid.coords(k)[0]).collect());
    let map = ObstacleMap::PdeInverse(PdeInverseMap::new(a.clone(), 0.5 * a.c_a, f0).unwrap());
    let f = DualVector::constant(n, 5.0);
    let c = qvi_core::qvi::penalty_uniform_bound_constant(a.c_a, a.c_b);
    for rho in schedule(7) {
        let pf = EpsRule::EqualsRho.penalty(rho).unwrap();
        let (y, _) = solve_penalized(&a, &f, &map, rho, &pf, 1e-12, None).unwrap();
        // v0 = 0 is admissible since Φ(0) = f0 ≥ 0.
        assert!(y.norm() <= 2.0 * c * f.norm(), "rho {rho}: {} > {}", y.norm(), 2.0 * c * f.norm());
    }
}
