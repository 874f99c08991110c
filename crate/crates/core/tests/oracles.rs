use std::sync::Arc;

use dumbbell_core::asymptotics::BESSEL_J0_ZERO;
use dumbbell_core::cli::run::{dense_vs_sparse, section_closed_form};
use dumbbell_core::discretize::GridMode;
use dumbbell_core::eig::section_ground_mode;
use dumbbell_core::geometry::{make_section, SectionShape};
use dumbbell_core::harmonic::{harmonic_resolution, radial_law_check, solve_phi, upsilon, HarmonicOptions};

/// First zero of J₀ by RK4 shooting on `y'' + y'/r + y = 0`.
fn shoot_j01() -> f64 {
    let r0 = 1e-6;
    let mut state = (1.0 - r0 * r0 / 4.0, -r0 / 2.0);
    let mut r = r0;
    let h = 1e-4;
    let f = |r: f64, (y, p): (f64, f64)| (p, -p / r - y);
    loop {
        let k1 = f(r, state);
        let k2 = f(r + h / 2.0, (state.0 + h / 2.0 * k1.0, state.1 + h / 2.0 * k1.1));
        let k3 = f(r + h / 2.0, (state.0 + h / 2.0 * k2.0, state.1 + h / 2.0 * k2.1));
        let k4 = f(r + h, (state.0 + h * k3.0, state.1 + h * k3.1));
        let next = (
            state.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            state.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        );
        if next.0 <= 0.0 {
            // Newton step from the last positive point
            return r - state.0 / state.1;
        }
        state = next;
        r += h;
    }
}

#[test]
fn bessel_zero_by_shooting() {
    let z = shoot_j01();
    assert!((z - BESSEL_J0_ZERO).abs() < 1e-7, "{z}");
}

#[test]
fn disk_ground_mode_against_shooting() {
    let z = shoot_j01();
    for radius in [1.0, 0.75] {
        let sec = make_section(&SectionShape::disk(radius)).unwrap();
        let m = section_ground_mode(&sec, 1.0 / 64.0).unwrap();
        let exact = (z / radius).powi(2);
        assert!(
            ((m.lambda1 - exact) / exact).abs() < 5e-3,
            "radius {radius}: {} vs {exact}",
            m.lambda1
        );
        assert!(m.positive);
    }
}

#[test]
fn rectangle_ground_mode_is_separable() {
    let shape = SectionShape::rectangle(0.8, 0.4);
    let sec = make_section(&shape).unwrap();
    let m = section_ground_mode(&sec, 1.0 / 64.0).unwrap();
    let exact = section_closed_form(&shape, sec.measure()).unwrap();
    let pi2 = std::f64::consts::PI.powi(2);
    assert!((exact - pi2 / 4.0 * (1.0 / 0.64 + 1.0 / 0.16)).abs() < 1e-12);
    assert!(((m.lambda1 - exact) / exact).abs() < 5e-3, "{} vs {exact}", m.lambda1);
}

#[test]
fn sparse_pencil_matches_dense_on_tiny_grid() {
    let (n, err) = dense_vs_sparse(400, 4).unwrap();
    assert!(n <= 400);
    assert!(err < 1e-10, "max relative error {err}");
}

#[test]
fn coarse_transition_function_follows_radial_law() {
    let sec = Arc::new(make_section(&SectionShape::disk(0.75).admissible()).unwrap());
    let phi = solve_phi(
        &sec,
        8.0,
        4.0,
        &harmonic_resolution(GridMode::Axisym, 1.0 / 32.0),
        &HarmonicOptions::default(),
    )
    .unwrap();
    let radii: Vec<f64> = (0..11).map(|k| 1.5 + 0.25 * k as f64).collect();
    let law = radial_law_check(&phi.at_r, &radii).unwrap();
    assert!(law.max_rel_error < 0.02, "{}", law.max_rel_error);
    assert!(phi.at_r.residual < 1e-9);
    // Φ is positive and exceeds the ramp everywhere
    assert!(phi.at_r.min_excess_over_ramp() > -1e-12);
    assert!(phi.trace_r > 0.0);
    assert!((upsilon(3) - (2.0 * std::f64::consts::PI / 3.0).sqrt()).abs() < 1e-14);
}
