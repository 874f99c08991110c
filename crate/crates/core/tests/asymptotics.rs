use std::sync::Arc;

use dumbbell_core::asymptotics::{
    blowup_error, channel_decay, fit_rate, resonant_sweep, stub_gap_check, RatePoint, SweepConfig,
};
use dumbbell_core::discretize::{build_grid, GridMode, Resolution};
use dumbbell_core::geometry::{make_domain, make_section, DomainKind, SectionShape, Truncation, WeightSpec};
use dumbbell_core::harmonic::{harmonic_resolution, solve_v_r, HarmonicOptions};
use dumbbell_core::Error;

fn eps_grid(eps: f64) -> dumbbell_core::discretize::Grid {
    let sec = Arc::new(make_section(&SectionShape::disk(0.75).admissible()).unwrap());
    let d = make_domain(DomainKind::Dumbbell, sec, eps, Truncation::default(), 3).unwrap();
    build_grid(&d, &Resolution::for_eps(eps, 16.0), Some(&WeightSpec::default_simple())).unwrap()
}

#[test]
fn decay_rate_of_pure_exponential() {
    let eps = 0.2;
    let grid = eps_grid(eps);
    let mu = 7.25;
    let field: Vec<f64> = (0..grid.n_unknowns())
        .map(|u| {
            let c = grid.coords(u);
            (-mu * c[0]).exp() * (1.0 + 0.1 * c[1].cos())
        })
        .collect();
    let rep = channel_decay(&field, &grid, eps, 10.0, [0.2, 0.5]).unwrap();
    assert!((rep.rate - mu).abs() < 1e-9, "{}", rep.rate);
    assert!((rep.r2 - 1.0).abs() < 1e-12);
    assert!((rep.sharp - 10f64.sqrt() / eps).abs() < 1e-12);
    assert!((rep.bound - rep.sharp / 4.0).abs() < 1e-12);
}

#[test]
fn blowup_error_is_quadratically_homogeneous() {
    let eps = 0.15;
    let grid = eps_grid(eps);
    let sec = Arc::new(make_section(&SectionShape::disk(0.75).admissible()).unwrap());
    let phi = solve_v_r(
        &sec,
        8.0,
        4.0,
        &harmonic_resolution(GridMode::Axisym, 1.0 / 32.0),
        &HarmonicOptions::default(),
    )
    .unwrap();
    let d = 0.088;
    let model: Vec<f64> = (0..grid.n_unknowns())
        .map(|u| {
            let c = grid.coords(u);
            let q = [1.0 + (c[0] - 1.0) / eps, c[1] / eps, c[2] / eps];
            phi.eval(&q).map(|v| eps * d * v).unwrap_or(0.0)
        })
        .collect();
    let exact = blowup_error(&model, &grid, eps, d, &phi, [1.5, 3.0]).unwrap();
    assert!(exact < 1e-24, "{exact}");
    // u = m against 2m leaves −m: energy ratio 1/4
    let doubled = blowup_error(&model, &grid, eps, 2.0 * d, &phi, [1.5, 3.0]).unwrap();
    assert!((doubled - 0.25).abs() < 1e-12, "{doubled}");
    assert!(blowup_error(&model, &grid, eps, d, &phi, [1.0, 3.0]).is_err());
}

#[test]
fn fit_recovers_quadratic_remainder_intercept() {
    // value = ε³(a + bε): slope drifts but the ε → 0 intercept is exact
    let pts: Vec<RatePoint> = [0.2, 0.15, 0.1, 0.075]
        .iter()
        .map(|&e| RatePoint {
            eps: e,
            value: e * e * e * (0.002 + 0.01 * e),
        })
        .collect();
    let f = fit_rate(&pts, 3.0, None).unwrap();
    assert!((f.prefactor - 0.002).abs() < 1e-12, "{}", f.prefactor);
    assert!(f.slope > 3.0);
}

#[test]
fn resonant_sweep_refuses_symmetric_chambers() {
    let cfg = SweepConfig {
        eps: vec![0.2, 0.15, 0.1],
        ..SweepConfig::resonant(0.0)
    };
    match resonant_sweep(&cfg) {
        Err(Error::Precondition(msg)) => assert!(msg.contains("asymmetry"), "{msg}"),
        other => panic!("expected refusal, got {:?}", other.map(|r| r.points.len())),
    }
}

#[test]
fn symmetric_stub_gaps_coincide() {
    let cfg = SweepConfig {
        eps: vec![0.2, 0.15, 0.1],
        ..SweepConfig::resonant(0.0)
    };
    let rep = stub_gap_check(&cfg).unwrap();
    let (p, m) = (&rep.plus_fit, &rep.minus_fit);
    assert!(
        ((p.prefactor - m.prefactor) / p.prefactor).abs() < 1e-3,
        "{} vs {}",
        p.prefactor,
        m.prefactor
    );
    for d in &rep.stub_differences {
        assert!(d.abs() < 1e-3 * p.prefactor, "{d}");
    }
}
