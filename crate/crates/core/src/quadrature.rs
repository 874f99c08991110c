//! Gauss–Legendre rules and the half-sphere cap rules built from them.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
    for i in 0..n {
        // Newton iteration from the Chebyshev-like initial guess
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((mid - half * x, half * w));
    }
    out.sort_by(|p, q| p.0.total_cmp(&q.0));
    out
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Quadrature on the half sphere `{θ ∈ S², θ₁ > 0}` as
/// (direction, weight). Polar angle measured from the x₁ axis.
pub fn half_sphere_rule(n_polar: usize, n_azimuth: usize) -> Vec<([f64; 3], f64)> {
    let mut out = Vec::with_capacity(n_polar * n_azimuth);
    let dpsi = 2.0 * PI / n_azimuth as f64;
    for (phi, w) in gauss_legendre(n_polar, 0.0, PI / 2.0) {
        let (sp, cp) = phi.sin_cos();
        for k in 0..n_azimuth {
            let psi = (k as f64 + 0.5) * dpsi;
            out.push(([cp, sp * psi.cos(), sp * psi.sin()], w * sp * dpsi));
        }
    }
    out
}

/// Polar-angle rule for axisymmetric integrands on the half sphere:
/// `(cos φ, sin φ, weight)` with the azimuthal factor `2π sin φ` folded in.
pub fn half_sphere_axisym_rule(n_polar: usize) -> Vec<(f64, f64, f64)> {
    gauss_legendre(n_polar, 0.0, PI / 2.0)
        .into_iter()
        .map(|(phi, w)| {
            let (sp, cp) = phi.sin_cos();
            (cp, sp, w * 2.0 * PI * sp)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let rule = gauss_legendre(5, -1.0, 2.0);
        let q: f64 = rule.iter().map(|&(x, w)| w * x.powi(9)).sum();
        let exact = (2f64.powi(10) - 1.0) / 10.0;
        assert!((q - exact).abs() < 1e-11);
    }

    #[test]
    fn half_sphere_area() {
        let a: f64 = half_sphere_rule(16, 32).iter().map(|p| p.1).sum();
        assert!((a - 2.0 * PI).abs() < 1e-12);
        let b: f64 = half_sphere_axisym_rule(16).iter().map(|p| p.2).sum();
        assert!((b - 2.0 * PI).abs() < 1e-12);
    }
}
