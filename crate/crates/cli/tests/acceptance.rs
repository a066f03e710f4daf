//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use qvi_core::mesh::AdvectionScheme;
use qvi_core::vi::solve_vi_upper;
use qvi_core::{assemble_operator, build_grid, DualVector, OperatorSpec, StateVector};
use qvi_lab::config::MultiplicityBlock;
use qvi_lab::report::Check;
use qvi_lab::{load_scenario, run_scenario, Artifacts, Command, Overrides};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCENARIOS: &[(&str, Command)] = &[
    ("qvi_contraction_1d", Command::QviSolve),
    ("qvi_contraction_2d", Command::QviSolve),
    ("qvi_affine_1d", Command::QviSolve),
    ("sensitivity_1d", Command::Sensitivity),
    ("multiplicity_centers_1d", Command::MultiplicityDemo),
    ("multiplicity_obstacles_1d", Command::MultiplicityDemo),
    ("control_box_1d", Command::Control),
    ("control_lq_1d", Command::Control),
    ("control_pde_1d", Command::Control),
];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn run_all() -> BTreeMap<&'static str, Artifacts> {
    let mut out = BTreeMap::new();
    for (name, command) in SCENARIOS {
        let cfg = load_scenario(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let art = run_scenario(&cfg, *command, Overrides::default())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        out.insert(*name, art);
    }
    out
}

fn checks(art: &Artifacts) -> impl Iterator<Item = &Check> {
    art.report.checks.iter().chain(&art.report.reported)
}

fn value(art: &Artifacts, name: &str) -> Option<f64> {
    checks(art).find(|c| c.name == name).map(|c| c.value)
}

/// Worst value of the named checks across scenarios; `None` if any is missing.
fn worst(runs: &BTreeMap<&str, Artifacts>, scenarios: &[&str], names: &[&str]) -> Option<f64> {
    let mut w = f64::NEG_INFINITY;
    for s in scenarios {
        for n in names {
            w = w.max(value(&runs[s], n)?);
        }
    }
    Some(w)
}

fn at_most(v: Option<f64>, tol: f64, what: &str) -> Outcome {
    match v {
        Some(v) => Outcome::new(v <= tol, format!("{what} = {v:.3e} (tol {tol:e})")),
        None => Outcome::new(false, format!("{what} missing")),
    }
}

fn negative(v: Option<f64>, what: &str) -> Outcome {
    match v {
        Some(v) => Outcome::new(v < 0.0, format!("{what} = {v:.3e} (must be < 0)")),
        None => Outcome::new(false, format!("{what} missing")),
    }
}

fn all(parts: Vec<Outcome>) -> Outcome {
    let pass = parts.iter().all(|o| o.pass);
    let detail = parts.iter().map(|o| o.detail.as_str()).collect::<Vec<_>>().join("; ");
    Outcome::new(pass, detail)
}

fn vi_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_dist: f64 = 0.0;
    let mut set_mismatch = 0;
    for _ in 0..20 {
        let spec = OperatorSpec {
            diffusion: rng.random_range(0.2..3.0),
            advection: vec![rng.random_range(-5.0..5.0)],
            reaction: rng.random_range(0.0..3.0),
            scheme: AdvectionScheme::Upwind,
            require_t_monotone: true,
        };
        let a = assemble_operator(build_grid(1, 5).unwrap(), &spec).unwrap();
        let f: Vec<f64> = (0..5).map(|_| rng.random_range(-50.0..150.0)).collect();
        let psi: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..0.3)).collect();
        let Some(y) = enumerate(&a.to_dense(), &f, &psi) else {
            return Outcome::new(false, "enumeration found no solution");
        };
        let got = solve_vi_upper(&a, &DualVector::new(f), &StateVector::new(psi.clone()), 1e-13).unwrap();
        let tol_act = got.thresholds.tol_act;
        let active: Vec<usize> = (0..5).filter(|&i| psi[i] - y[i] <= tol_act).collect();
        worst_dist = worst_dist.max(got.y.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max));
        if got.active != active {
            set_mismatch += 1;
        }
    }
    Outcome::new(
        set_mismatch == 0 && worst_dist <= 1e-9,
        format!("max |y − y_oracle| = {worst_dist:.3e}, active-set mismatches {set_mismatch}/20"),
    )
}

/// Solution of `y ≤ ψ, f − Ay ≥ 0, complementarity` by trying all active sets.
fn enumerate(a: &DMatrix<f64>, f: &[f64], psi: &[f64]) -> Option<Vec<f64>> {
    let n = f.len();
    let scale = 1e-10 * (1.0 + f.iter().fold(0.0f64, |s, v| s.max(v.abs())));
    for mask in 0u32..(1 << n) {
        let mut m = a.clone();
        let mut rhs = DVector::from_column_slice(f);
        for i in (0..n).filter(|i| mask & (1 << i) != 0) {
            m.row_mut(i).fill(0.0);
            m[(i, i)] = 1.0;
            rhs[i] = psi[i];
        }
        let Some(y) = m.lu().solve(&rhs) else { continue };
        let xi = DVector::from_column_slice(f) - a * &y;
        let ok = (0..n).all(|i| y[i] <= psi[i] + 1e-12 && xi[i] >= -scale && (xi[i] * (psi[i] - y[i])).abs() <= scale);
        if ok {
            return Some(y.iter().copied().collect());
        }
    }
    None
}

fn residual_certificate(runs: &BTreeMap<&str, Artifacts>) -> Outcome {
    let mut w: f64 = 0.0;
    let mut count = 0;
    for art in runs.values() {
        for c in checks(art) {
            let n = c.name.as_str();
            let is_residual = [".feasibility", ".dual_sign", ".complementarity"].iter().any(|s| n.ends_with(s))
                || n.starts_with("weakC.state_");
            if is_residual && !n.starts_with("b_perturbed") {
                w = w.max(c.value);
                count += 1;
            }
        }
    }
    Outcome::new(count > 0 && w <= 1e-6, format!("worst of {count} route residuals = {w:.3e}"))
}

fn multiplicity(runs: &BTreeMap<&str, Artifacts>) -> Outcome {
    let cfg = load_scenario(&scenario_path("multiplicity_centers_1d")).unwrap();
    let delta = match cfg.multiplicity {
        Some(MultiplicityBlock::Centers { delta, .. }) => delta,
        _ => return Outcome::new(false, "scenario has no center block"),
    };
    let art = &runs["multiplicity_centers_1d"];
    all(vec![
        at_most(
            worst(runs, &["multiplicity_centers_1d"], &["solution_1.distance_to_center", "solution_2.distance_to_center"]),
            1e-10,
            "distance to center",
        ),
        match value(art, "separation.min_distance") {
            Some(d) => Outcome::new(d >= 2.0 * delta, format!("separation {d:.4} ≥ 2δ = {}", 2.0 * delta)),
            None => Outcome::new(false, "separation missing"),
        },
    ])
}

fn control_names(prefix: &str, names: &[&str]) -> Vec<String> {
    names.iter().map(|n| format!("{prefix}.{n}")).collect()
}

fn main() {
    let runs = run_all();
    let qvi = ["qvi_contraction_1d", "qvi_contraction_2d", "qvi_affine_1d"];
    let control = ["control_box_1d", "control_lq_1d", "control_pde_1d"];
    let weak_c = control_names(
        "weakC",
        &["adjoint_equation", "state_equation", "state_feasibility", "state_dual_sign", "state_complementarity", "control_vi", "lambda_p_sign"],
    );
    let weak_c: Vec<&str> = weak_c.iter().map(String::as_str).collect();

    let mut criteria: Vec<(&str, Outcome)> = vec![("VI matches active-set enumeration", vi_oracle())];
    criteria.push(("QVI complementarity residuals on all scenarios", residual_certificate(&runs)));
    criteria.push(("Constructed centers are distinct solutions", multiplicity(&runs)));
    criteria.push((
        "Penalty path converges to the unique solution",
        all(vec![
            at_most(worst(&runs, &["qvi_contraction_1d"], &["penalty.reference_distance"]), 1e-4, "‖y_ρ − y_iter‖ at ρ = 1e-6"),
            negative(worst(&runs, &qvi, &["penalty.violation_rise"]), "largest violation rise"),
        ]),
    ));
    criteria.push((
        "Fixed-point iteration is monotone",
        at_most(worst(&runs, &qvi, &["iteration.monotone_increase"]), 1e-10, "largest wrong-way step"),
    ));
    criteria.push((
        "Interval method brackets the iteration",
        at_most(
            worst(&runs, &qvi, &["interval.order", "interval.bracket", "interval.bracket_iteration"]),
            1e-8,
            "worst ordering violation",
        ),
    ));
    criteria.push((
        "Directional derivative matches finite differences",
        all(vec![
            negative(worst(&runs, &["sensitivity_1d"], &["fd.ratio_rise"]), "largest ratio rise"),
            at_most(
                worst(&runs, &["sensitivity_1d"], &["derivative.cone", "derivative.polar", "derivative.orthogonality"]),
                1e-8,
                "derivative system residual",
            ),
        ]),
    ));
    criteria.push((
        "Derivative is homogeneous and Lipschitz in the direction",
        all(vec![
            at_most(worst(&runs, &["sensitivity_1d"], &["derivative.homogeneity"]), 1e-9, "‖α(2d) − 2α(d)‖"),
            at_most(worst(&runs, &["sensitivity_1d"], &["continuity.bound_ratio"]), 1.0, "worst pair / bound"),
        ]),
    ));
    criteria.push((
        "Adjoint gradient matches central differences",
        at_most(worst(&runs, &control, &["gradient.rho_1e-1", "gradient.rho_1e-3"]), 1e-4, "worst relative error"),
    ));
    let exceptional: Vec<String> = control
        .iter()
        .map(|s| {
            let nodes = runs[s].results["bundle"]["exceptional_nodes"].clone();
            format!("{s} exceptional {nodes}")
        })
        .collect();
    let mut weak = at_most(worst(&runs, &control, &weak_c), 1e-6, "worst weak-C residual");
    let e_almost = worst(&runs, &control, &["eAlmostC.lambda_inactive", "eAlmostC.xi_p_plus", "eAlmostC.xi_p_minus"]);
    weak.detail = format!("{}; E-almost-C worst {:?}; {}", weak.detail, e_almost, exceptional.join(", "));
    criteria.push(("Weak C-stationarity at the path limit", weak));
    criteria.push((
        "B-stationarity holds and a perturbed control fails it",
        all(vec![
            at_most(worst(&runs, &control, &["B.b_inequality"]), 1e-6, "worst B violation"),
            match value(&runs["control_box_1d"], "b_perturbed.b_inequality") {
                Some(v) => Outcome::new(v > 1e-6, format!("perturbed violation {v:.3e}")),
                None => Outcome::new(false, "perturbed check missing"),
            },
        ]),
    ));
    criteria.push((
        "Inactive obstacle reduces to the linear-quadratic optimum",
        all(vec![
            at_most(worst(&runs, &["control_lq_1d"], &["lq.u_distance", "lq.y_distance"]), 1e-6, "distance to oracle"),
            at_most(worst(&runs, &["control_lq_1d"], &["lq.lambda", "lq.xi"]), 1e-6, "‖λ*‖, ‖ξ*‖"),
        ]),
    ));

    let mut failed = 0;
    for (k, (title, o)) in criteria.iter().enumerate() {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {:>2}: {title} ({})", k + 1, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
