//! Cross-module consistency: the second-order methods against the
//! first-order integrator, one-step errors against the adaptive reference,
//! and the run-level energy behavior of the benchmark problems.

use expocol_core::ecr::{
    build_coefficients, dense_output, integrate, step, CollocationScheme,
};
use expocol_core::oscillatory::{build_tcr_coefficients, tcr_step};
use expocol_core::problems::{duffing, stiff_gradient, wind, Potential};
use expocol_core::reference::{dopri5, AdaptiveOptions};
use nalgebra::DVector;

fn duffing_rhs(
    p: &expocol_core::problems::ProblemInstance,
) -> impl Fn(f64, &DVector<f64>) -> DVector<f64> {
    let a = p.system.a().clone();
    let g = p.system.g().clone();
    move |_, y: &DVector<f64>| &a * y + g(y)
}

#[test]
fn tcr_equals_ecr_on_first_order_form() {
    // Applying the first-order method to the block form reproduces the
    // trigonometric method step by step.
    let p = duffing(5.0, 0.07).unwrap();
    let so = p.second_order.as_ref().unwrap();
    let first = so.first_order_form().unwrap();
    let scheme = CollocationScheme::new(2, 0.01).unwrap();
    let tcr = build_tcr_coefficients(so, &scheme).unwrap();
    let table = build_coefficients(&first, &scheme).unwrap();

    let mut q = DVector::from_vec(vec![0.0]);
    let mut momentum = DVector::from_vec(vec![5.0]);
    let mut y = DVector::from_vec(vec![0.0, 5.0]);
    for n in 0..100 {
        let a = tcr_step(so, &scheme, &tcr, &q, &momentum).unwrap();
        let b = step(&first, &scheme, &table, &y).unwrap();
        q = a.q1;
        momentum = a.p1;
        y = b.y1;
        let diff = (q[0] - y[0]).abs().max((momentum[0] - y[1]).abs());
        assert!(diff < 1e-10, "step {n}: diff {diff:e}");
    }
}

#[test]
fn one_step_matches_adaptive_reference_at_fifth_order() {
    // Local error against a 1e-13 adaptive reference is C h^5 for r = 2.
    let p = duffing(5.0, 0.07).unwrap();
    let y0 = DVector::from_vec(vec![0.0, 5.0]);
    let f = duffing_rhs(&p);
    let mut errors = Vec::new();
    for lvl in 0..2 {
        let h = 0.025 / 2f64.powi(lvl);
        let scheme = CollocationScheme::new(2, h).unwrap();
        let table = build_coefficients(&p.system, &scheme).unwrap();
        let out = step(&p.system, &scheme, &table, &y0).unwrap();
        let reference = dopri5(&f, 0.0, &y0, h, &AdaptiveOptions::with_tolerance(1e-13)).unwrap();
        errors.push((&out.y1 - reference).amax());
    }
    // C = 7e-3 observed; require the frozen bound and fifth-order decay.
    assert!(errors[0] <= 0.02 * 0.025f64.powi(5), "err = {:e}", errors[0]);
    let ratio = errors[0] / errors[1];
    assert!((24.0..=40.0).contains(&ratio), "local order ratio {ratio}");
}

#[test]
fn energy_defect_halving_ratio_first_order() {
    // One-step defect |dH(h)|/|dH(h/2)| = 2^(2r+1) for r = 2, measured at
    // a generic phase: the initial state (0, omega) sits at q = 0 where
    // the leading defect coefficient vanishes.
    let p = duffing(5.0, 0.07).unwrap();
    let y = p.reference_state(0.21).unwrap().unwrap();
    let h0 = p.system.energy(&y).unwrap();
    let defect = |h: f64| {
        let scheme = CollocationScheme::new(2, h).unwrap();
        let table = build_coefficients(&p.system, &scheme).unwrap();
        let out = step(&p.system, &scheme, &table, &y).unwrap();
        (p.system.energy(&out.y1).unwrap() - h0).abs()
    };
    let coarse = defect(0.05);
    let fine = defect(0.025);
    assert!(fine > 100.0 * f64::EPSILON * h0.abs());
    let ratio = coarse / fine;
    assert!((19.0..=45.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn energy_defect_halving_ratio_second_order() {
    // Same protocol through the trigonometric method on the recast form.
    let p = duffing(5.0, 0.07).unwrap();
    let so = p.second_order.as_ref().unwrap();
    let y = p.reference_state(0.21).unwrap().unwrap();
    let q0 = DVector::from_vec(vec![y[0]]);
    let p0 = DVector::from_vec(vec![y[1]]);
    let h0 = so.energy(&q0, &p0);
    let defect = |h: f64| {
        let scheme = CollocationScheme::new(2, h).unwrap();
        let coeffs = build_tcr_coefficients(so, &scheme).unwrap();
        let out = tcr_step(so, &scheme, &coeffs, &q0, &p0).unwrap();
        (so.energy(&out.q1, &out.p1) - h0).abs()
    };
    let ratio = defect(0.05) / defect(0.025);
    assert!((19.0..=45.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn elliptic_solution_agrees_with_reference_integration() {
    // Two independent oracles for the same trajectory must agree to 1e-10
    // over [0, 10].
    let p = duffing(5.0, 0.07).unwrap();
    let f = duffing_rhs(&p);
    let y0 = p.initial_state.clone();
    for i in 1..=10 {
        let t = i as f64;
        let via_elliptic = p.reference_state(t).unwrap().unwrap();
        let via_rk = dopri5(&f, 0.0, &y0, t, &AdaptiveOptions::with_tolerance(1e-13)).unwrap();
        assert!(
            (via_elliptic - via_rk).amax() < 1e-10,
            "t = {t}"
        );
    }
}

#[test]
fn stiff_gradient_flow_is_exact_for_quadratic_potential() {
    let p = stiff_gradient(&[1.0, 1.0e2, 1.0e4, 1.0e6], Potential::Zero).unwrap();
    let scheme = CollocationScheme::new(2, 1.0).unwrap();
    let table = build_coefficients(&p.system, &scheme).unwrap();
    let out = step(&p.system, &scheme, &table, &p.initial_state).unwrap();
    let exact = p.reference_state(1.0).unwrap().unwrap();
    assert!((&out.y1 - exact).amax() < 1e-12);
}

#[test]
fn stiff_gradient_strong_damping() {
    let p = stiff_gradient(&[1.0e6], Potential::Zero).unwrap();
    let scheme = CollocationScheme::new(2, 1.0).unwrap();
    let table = build_coefficients(&p.system, &scheme).unwrap();
    let out = step(&p.system, &scheme, &table, &p.initial_state).unwrap();
    assert!(out.y1.amax() / p.initial_state.amax() <= 1e-10);
}

#[test]
fn stiff_gradient_quartic_energy_decays() {
    let p = stiff_gradient(&[1.0, 4.0, 9.0], Potential::QuarticDoubleWell).unwrap();
    let scheme = CollocationScheme::new(2, 0.05).unwrap();
    let run = integrate(&p.system, &scheme, &p.initial_state, 200.0 * 0.05).unwrap();
    let energies = run.energies.as_ref().unwrap();
    assert_eq!(energies.len(), 201);
    for (n, w) in energies.windows(2).enumerate() {
        assert!(w[1] <= w[0] + 1e-10, "uptick at step {n}: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn wind_lyapunov_monotone_within_residual_slack() {
    // Dissipative wind with r = 3: the energy decreases every step well
    // beyond ten times the fixed-point residual.
    let theta = 0.5 * std::f64::consts::PI - 1e-4;
    let p = wind(theta, 20.0).unwrap();
    let scheme = CollocationScheme::new(3, 0.05).unwrap();
    let run = integrate(&p.system, &scheme, &p.initial_state, 100.0).unwrap();
    let energies = run.energies.as_ref().unwrap();
    let max_residual = run.residuals.iter().cloned().fold(0.0f64, f64::max);
    for (n, w) in energies.windows(2).enumerate() {
        assert!(
            w[1] <= w[0] + 10.0 * max_residual.max(1e-14),
            "uptick at step {n}"
        );
    }
    assert!(*energies.last().unwrap() < energies[0]);
}

#[test]
fn dense_output_has_stage_order_at_interior_points() {
    // At a generic interior abscissa the stage error halves at 2^(r+1);
    // tau = 1/2 is special for even r (the integrated Legendre residue
    // vanishes there), so probe tau = 0.3.
    let p = duffing(5.0, 0.07).unwrap();
    let y_start = p.reference_state(0.33).unwrap().unwrap();
    for r in [2usize, 3] {
        let mut errs = Vec::new();
        for lvl in 3..5 {
            let h = 0.05 / 2f64.powi(lvl);
            let scheme = CollocationScheme::new(r, h).unwrap();
            let table = build_coefficients(&p.system, &scheme).unwrap();
            let out = step(&p.system, &scheme, &table, &y_start).unwrap();
            let u = dense_output(&p.system, &scheme, &y_start, &out, 0.3).unwrap();
            let exact = p.reference_state(0.33 + 0.3 * h).unwrap().unwrap();
            errs.push((u - exact).amax());
        }
        let ratio = errs[0] / errs[1];
        let target = 2f64.powi(r as i32 + 1);
        assert!(
            (0.7 * target..=1.3 * target).contains(&ratio),
            "r={r}: ratio {ratio} vs {target}"
        );
    }
}
