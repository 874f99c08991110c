//! The canonical harmonic problems near a junction: the transition function
//! Φ on `D̃ = D⁺ ∪ T₁⁻`, its truncations `v_R`, the half-ball extension `z_R`,
//! and their projections on the first half-sphere harmonic `Ψ⁺ = θ₁/Υ_N`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretize::{assemble_stiffness, build_grid, Grid, GridMode, Resolution};
use crate::eig::stiffness_solver;
use crate::error::{Error, Result};
use crate::geometry::{make_domain, DomainGeometry, DomainKind, SectionGeometry, Truncation};
use crate::linalg::Backend;
use crate::quadrature::{half_sphere_axisym_rule, half_sphere_rule};

/// Grids are three-dimensional; the radial laws are used with this N.
pub const GRID_DIM: usize = 3;

/// `Γ(n/2)` for a positive integer `n`.
fn gamma_half(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        (1..n / 2).map(|k| k as f64).product()
    } else {
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x < n as f64 / 2.0 - 0.25 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

/// Area `ω_{N−1}` of the unit sphere in ℝᴺ.
pub fn sphere_area(n: usize) -> f64 {
    2.0 * PI.powf(n as f64 / 2.0) / gamma_half(n)
}

/// `Υ_N = √(ω_{N−1}/(2N))`.
pub fn upsilon(n: usize) -> f64 {
    (sphere_area(n) / (2.0 * n as f64)).sqrt()
}

/// First Dirichlet eigenfunction of the half sphere, `L²`-normalized.
pub fn psi_plus(theta1: f64, n: usize) -> f64 {
    theta1 / upsilon(n)
}

/// Radial law of the Φ-profile: `φ(1)r^{1−N} + Υ_N(r − r^{1−N})`.
pub fn phi_profile_law(phi1: f64, r: f64, n: usize) -> f64 {
    let y = upsilon(n);
    let q = r.powi(1 - n as i32);
    phi1 * q + y * (r - q)
}

/// Flux of the truncated problem through `Γ_R⁺`:
/// `Υ(Υ(R^N + N − 1) − Nχ_R(1)) / (1 − R^{−N})`.
pub fn v_r_flux_law(chi1: f64, r: f64, n: usize) -> f64 {
    let y = upsilon(n);
    let nf = n as f64;
    y * (y * (r.powi(n as i32) + nf - 1.0) - nf * chi1) / (1.0 - r.powi(-(n as i32)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarmonicKind {
    /// Truncated transition function (`v_R` of the given radius).
    Phi,
    /// Half-ball extension of a Φ trace.
    ZR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Datum {
    /// `x₁ − 1` on the truncation sphere, zero on walls and the tube cut.
    Ramp,
    /// Trace of a Φ field computed on a larger truncation.
    PhiTrace,
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarmonicOptions {
    /// Defaults to the direct solver on axisymmetric grids and CG otherwise.
    pub backend: Option<Backend>,
    pub cg_tol: f64,
}

impl Default for HarmonicOptions {
    fn default() -> Self {
        Self {
            backend: None,
            cg_tol: 1e-11,
        }
    }
}

/// A discrete harmonic function on a truncated domain.
#[derive(Debug, Clone)]
pub struct HarmonicField {
    pub kind: HarmonicKind,
    pub datum: Datum,
    pub domain: DomainGeometry,
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    /// Tensor array with datum ghosts beyond the truncation surface.
    ambient: Vec<f64>,
    /// `‖Au − b‖∞ / ‖b‖∞`.
    pub residual: f64,
    pub radius: f64,
    pub tube_length: f64,
}

impl HarmonicField {
    pub fn eval(&self, p: &[f64; 3]) -> Option<f64> {
        self.grid.interpolate(&self.ambient, p)
    }

    pub fn ambient(&self) -> &[f64] {
        &self.ambient
    }

    /// `min (u − (x₁−1)⁺)` over unknowns.
    pub fn min_excess_over_ramp(&self) -> f64 {
        (0..self.values.len())
            .map(|u| self.values[u] - (self.grid.coords(u)[0] - 1.0).max(0.0))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(x₁, max_{x'} u)` for every tube grid line `x₁ < 1`.
    pub fn tube_maxima(&self) -> Vec<(f64, f64)> {
        let xs = &self.grid.axes()[0].nodes;
        let mut best = vec![f64::NEG_INFINITY; xs.len()];
        for u in 0..self.values.len() {
            let i = self.grid.lattice_index(u)[0];
            if xs[i] < 1.0 {
                best[i] = best[i].max(self.values[u].abs());
            }
        }
        xs.iter()
            .zip(best)
            .filter(|(_, m)| m.is_finite())
            .map(|(&x, m)| (x, m))
            .collect()
    }
}

fn ramp_datum(p: &[f64; 3], artificial: bool) -> f64 {
    if artificial {
        (p[0] - 1.0).max(0.0)
    } else {
        0.0
    }
}

fn ramp_ghost(p: &[f64; 3]) -> f64 {
    (p[0] - 1.0).max(0.0)
}

/// Tensor array carrying the datum on every node beyond `Γ_R⁺`, so that
/// interpolation up to the truncation sphere sees the boundary values.
fn exterior_ambient(grid: &Grid, values: &[f64], radius: f64, datum: &dyn Fn(&[f64; 3]) -> f64) -> Vec<f64> {
    let mut t = grid.ambient(values, Some(datum));
    grid.fill_exterior(&mut t, &|p| {
        let r = ((p[0] - 1.0).powi(2) + p[1] * p[1] + p[2] * p[2]).sqrt();
        (p[0] >= 1.0 && r >= radius).then(|| datum(p))
    });
    t
}

/// Solves the Dirichlet problem `Au = b(g)` on a prepared grid.
fn solve_on(grid: &Grid, g: &dyn Fn(&[f64; 3], bool) -> f64, opts: &HarmonicOptions) -> Result<(Vec<f64>, f64)> {
    let a = assemble_stiffness(grid).matrix;
    let b = grid.dirichlet_rhs(g);
    let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if bmax == 0.0 {
        return Ok((vec![0.0; b.len()], 0.0));
    }
    let backend = opts.backend.unwrap_or(match grid.metric() {
        crate::discretize::Metric::Axisym | crate::discretize::Metric::Planar => Backend::Direct,
        _ => Backend::Cg,
    });
    let lattice = grid.lattice();
    let solver = stiffness_solver(&a, Some(&lattice), backend, opts.cg_tol)?;
    let u = solver.solve(&b)?;
    let au = a.matvec(&u);
    let res = au.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / bmax;
    Ok((u, res))
}

fn tilde_domain(
    section: &Arc<SectionGeometry>,
    radius: f64,
    tube_length: f64,
    kind: DomainKind,
) -> Result<DomainGeometry> {
    make_domain(
        kind,
        section.clone(),
        1.0,
        Truncation {
            chamber_radius: radius,
            tube_length,
        },
        GRID_DIM,
    )
}

/// The truncated transition problem: harmonic in `T₁⁻ ∪ B_R⁺` (tube cut at
/// `1 − L_tube`), `x₁ − 1` on `Γ_R⁺`, zero on walls and at the cut.
pub fn solve_v_r(
    section: &Arc<SectionGeometry>,
    radius: f64,
    tube_length: f64,
    res: &Resolution,
    opts: &HarmonicOptions,
) -> Result<HarmonicField> {
    if radius < 4.0 {
        return Err(Error::Precondition(format!(
            "truncation radius {radius} must be at least 4"
        )));
    }
    let domain = tilde_domain(section, radius, tube_length, DomainKind::Tilde)?;
    let grid = build_grid(&domain, res, None)?;
    let (values, residual) = solve_on(&grid, &ramp_datum, opts)?;
    let ambient = exterior_ambient(&grid, &values, radius, &ramp_ghost);
    Ok(HarmonicField {
        kind: HarmonicKind::Phi,
        datum: Datum::Ramp,
        domain,
        grid: Arc::new(grid),
        values,
        ambient,
        residual,
        radius,
        tube_length,
    })
}

/// Φ at truncation radii `R` and `2R` on shared axes, with the junction
/// trace extrapolated in `R`.
#[derive(Debug, Clone)]
pub struct PhiSolution {
    pub at_r: HarmonicField,
    pub at_2r: HarmonicField,
    pub trace_r: f64,
    pub trace_2r: f64,
    pub trace_extrapolated: f64,
    /// `|trace_2r − trace_extrapolated|`.
    pub error_bar: f64,
    /// Decay exponent `p` of the truncation error `O(R^{−p})`.
    pub exponent: f64,
}

/// Richardson extrapolation of values at `R` and `2R` with error `∝ R^{−p}`.
pub fn richardson(at_r: f64, at_2r: f64, p: f64) -> f64 {
    at_2r + (at_2r - at_r) / (2f64.powf(p) - 1.0)
}

/// Truncation-error exponent of junction quantities: the dropped far-field
/// term is a dipole `O(|x−e₁|^{1−N})` on `Γ_R`, whose harmonic extension is
/// `O(R^{−N})` at the junction.
pub const TRUNCATION_EXPONENT: f64 = GRID_DIM as f64;

pub fn solve_phi(
    section: &Arc<SectionGeometry>,
    radius: f64,
    tube_length: f64,
    res: &Resolution,
    opts: &HarmonicOptions,
) -> Result<PhiSolution> {
    if radius < 8.0 {
        return Err(Error::Precondition(format!(
            "truncation radius {radius} must be at least 8"
        )));
    }
    if tube_length < 4.0 {
        return Err(Error::Precondition(format!(
            "tube length {tube_length} must be at least 4"
        )));
    }
    let shared = Resolution {
        extent_radius: Some(2.0 * radius),
        ..res.clone()
    };
    let at_r = solve_v_r(section, radius, tube_length, &shared, opts)?;
    let at_2r = solve_v_r(section, 2.0 * radius, tube_length, &shared, opts)?;
    let trace_r = junction_trace(&at_r)?;
    let trace_2r = junction_trace(&at_2r)?;
    let p = TRUNCATION_EXPONENT;
    let trace_extrapolated = richardson(trace_r, trace_2r, p);
    Ok(PhiSolution {
        at_r,
        at_2r,
        trace_r,
        trace_2r,
        error_bar: (trace_2r - trace_extrapolated).abs(),
        trace_extrapolated,
        exponent: p,
    })
}

/// Harmonic extension into `B_R⁺` of the trace of `phi` on `Γ_R⁺`, vanishing
/// on the wall. `phi` must extend beyond radius `R`.
pub fn solve_z_r(radius: f64, res: &Resolution, phi: &HarmonicField, opts: &HarmonicOptions) -> Result<HarmonicField> {
    if radius <= 2.0 {
        return Err(Error::Precondition(format!("radius {radius} must exceed 2")));
    }
    if phi.radius <= radius {
        return Err(Error::Mismatch(format!(
            "Φ is truncated at {} and carries no trace on a sphere of radius {radius}",
            phi.radius
        )));
    }
    let domain = tilde_domain(phi.domain.section(), radius, phi.tube_length, DomainKind::HalfBall)?;
    let res = Resolution {
        extent_radius: Some(phi.radius),
        ..res.clone()
    };
    let grid = build_grid(&domain, &res, None)?;
    let trace = |p: &[f64; 3]| phi.eval(p).unwrap_or(0.0);
    let g = |p: &[f64; 3], artificial: bool| if artificial { trace(p) } else { 0.0 };
    let (values, residual) = solve_on(&grid, &g, opts)?;
    let ambient = exterior_ambient(&grid, &values, radius, &trace);
    Ok(HarmonicField {
        kind: HarmonicKind::ZR,
        datum: Datum::PhiTrace,
        domain,
        grid: Arc::new(grid),
        values,
        ambient,
        residual,
        radius,
        tube_length: phi.tube_length,
    })
}

/// Harmonic field in `B_R⁺` with arbitrary data on `Γ_R⁺` (zero on the wall).
pub fn solve_half_ball(
    section: &Arc<SectionGeometry>,
    radius: f64,
    res: &Resolution,
    datum: &dyn Fn(&[f64; 3]) -> f64,
    opts: &HarmonicOptions,
) -> Result<HarmonicField> {
    let domain = tilde_domain(section, radius, 4.0, DomainKind::HalfBall)?;
    let grid = build_grid(&domain, res, None)?;
    let g = |p: &[f64; 3], artificial: bool| if artificial { datum(p) } else { 0.0 };
    let (values, residual) = solve_on(&grid, &g, opts)?;
    let ambient = exterior_ambient(&grid, &values, radius, datum);
    let zero = values.iter().all(|&v| v == 0.0);
    Ok(HarmonicField {
        kind: HarmonicKind::ZR,
        datum: if zero { Datum::Zero } else { Datum::PhiTrace },
        domain,
        grid: Arc::new(grid),
        values,
        ambient,
        residual,
        radius,
        tube_length: 4.0,
    })
}

// ---------------------------------------------------------------------------
// junction trace

/// `∫_Σ u(1, x') dx'` over the channel mouth.
pub fn junction_trace(field: &HarmonicField) -> Result<f64> {
    let w = trace_weights(&field.grid, field.domain.section())?;
    Ok(w.iter().map(|&(u, c)| c * field.values[u]).sum())
}

/// Quadrature weights of `v ↦ ∫_Σ v(1, x') dx'` on the unknowns of the
/// `x₁ = 1` grid layer. Axisymmetric grids integrate the piecewise-linear
/// radial interpolant (even at the axis, zero at the wall); Cartesian grids
/// integrate the bilinear interpolant with a polar rule over Σ.
pub fn trace_weights(grid: &Grid, section: &SectionGeometry) -> Result<Vec<(usize, f64)>> {
    let ax = &grid.axes()[0];
    let i0 = ax
        .nodes
        .iter()
        .position(|&x| x == 1.0)
        .ok_or_else(|| Error::Precondition("x₁ = 1 is not a grid layer".into()))?;
    match grid.metric() {
        crate::discretize::Metric::Axisym => {
            let rho = section
                .disk_radius()
                .ok_or_else(|| Error::Precondition("axisymmetric trace needs a disk section".into()))?;
            let s = &grid.axes()[1].nodes;
            let mut pts: Vec<(f64, Option<usize>)> = Vec::new();
            for (j, &sj) in s.iter().enumerate() {
                if sj >= rho {
                    break;
                }
                pts.push((sj, grid.unknown_at([i0, j, 0])));
            }
            let mut w: Vec<(usize, f64)> = Vec::new();
            let mut add = |u: Option<usize>, c: f64| {
                if let Some(u) = u {
                    w.push((u, c));
                }
            };
            if pts.is_empty() {
                return Ok(Vec::new());
            }
            // [0, s₀]: constant
            add(pts[0].1, PI * pts[0].0 * pts[0].0);
            // linear pieces ∫ (a(1−t) + b t) 2π s ds
            let seg = |a: f64, b: f64| {
                let h = b - a;
                // weights of the left and right values
                (2.0 * PI * h * (a / 2.0 + h / 6.0), 2.0 * PI * h * (a / 2.0 + h / 3.0))
            };
            for k in 0..pts.len() {
                let a = pts[k].0;
                let b = if k + 1 < pts.len() { pts[k + 1].0 } else { rho };
                let (wl, wr) = seg(a, b);
                add(pts[k].1, wl);
                if k + 1 < pts.len() {
                    add(pts[k + 1].1, wr);
                }
            }
            Ok(merge(w))
        }
        _ => {
            // bilinear hat weights integrated by a fine polar rule
            let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
            let h = grid.axes()[1]
                .nodes
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::INFINITY, f64::min);
            let n_theta = ((2.0 * PI * section.outer_radius() / h) * 4.0).ceil().max(64.0) as usize;
            let n_rad = ((section.outer_radius() / h) * 2.0).ceil().max(8.0) as usize;
            for (q, wq) in section.quadrature(n_theta, n_rad) {
                for (u, c) in hat_weights(grid, i0, q) {
                    *acc.entry(u).or_insert(0.0) += c * wq;
                }
            }
            Ok(acc.into_iter().collect())
        }
    }
}

fn merge(mut w: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    w.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (u, c) in w {
        match out.last_mut() {
            Some(last) if last.0 == u => last.1 += c,
            _ => out.push((u, c)),
        }
    }
    out
}

/// Bilinear interpolation weights at `(x₂, x₃) = q` on layer `i0`.
fn hat_weights(grid: &Grid, i0: usize, q: [f64; 2]) -> Vec<(usize, f64)> {
    let axes = grid.axes();
    let mut out = Vec::with_capacity(4);
    let locate = |a: usize, x: f64| -> Option<(usize, f64)> {
        let nodes = &axes[a].nodes;
        let x = if axes[a].kind == crate::discretize::AxisKind::HalfCell {
            x.abs().max(nodes[0])
        } else {
            x
        };
        if x < nodes[0] || x > nodes[nodes.len() - 1] {
            return None;
        }
        let k = nodes
            .partition_point(|&v| v <= x)
            .saturating_sub(1)
            .min(nodes.len() - 2);
        Some((k, (x - nodes[k]) / (nodes[k + 1] - nodes[k])))
    };
    let (Some((j, ty)), Some((k, tz))) = (locate(1, q[0]), locate(2, q[1])) else {
        return out;
    };
    for (dj, wy) in [(0, 1.0 - ty), (1, ty)] {
        for (dk, wz) in [(0, 1.0 - tz), (1, tz)] {
            if let Some(u) = grid.unknown_at([i0, j + dj, k + dk]) {
                out.push((u, wy * wz));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// spherical-cap projections

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialProfile {
    pub radii: Vec<f64>,
    /// `∫_{S⁺} u(e₁ + rθ) Ψ⁺(θ) dσ`.
    pub values: Vec<f64>,
    /// Difference to the same projection with half the angular points.
    pub quad_error: Vec<f64>,
}

/// Number of polar Gauss points used by default.
pub const CAP_POINTS: usize = 48;

/// Projection of a function on `Ψ⁺` over the half sphere of radius `r`
/// about `e₁`. `axisym` integrates over the polar angle only.
pub fn cap_projection(f: &dyn Fn(&[f64; 3]) -> Option<f64>, r: f64, axisym: bool, n_polar: usize) -> Option<f64> {
    let y = upsilon(GRID_DIM);
    let mut acc = 0.0;
    if axisym {
        for (c, s, w) in half_sphere_axisym_rule(n_polar) {
            acc += w * c * f(&[1.0 + r * c, r * s, 0.0])?;
        }
    } else {
        for (d, w) in half_sphere_rule(n_polar, 2 * n_polar) {
            acc += w * d[0] * f(&[1.0 + r * d[0], r * d[1], r * d[2]])?;
        }
    }
    Some(acc / y)
}

fn is_axisym(field: &HarmonicField) -> bool {
    field.grid.metric() == crate::discretize::Metric::Axisym
}

pub fn radial_profile(field: &HarmonicField, radii: &[f64]) -> Result<RadialProfile> {
    let axisym = is_axisym(field);
    let f = |p: &[f64; 3]| field.eval(p);
    let mut values = Vec::with_capacity(radii.len());
    let mut quad_error = Vec::with_capacity(radii.len());
    for &r in radii {
        if !(r > 0.0) || r > field.radius + 1e-12 {
            return Err(Error::Precondition(format!(
                "radius {r} lies outside the field's domain (R = {})",
                field.radius
            )));
        }
        let v = cap_projection(&f, r, axisym, CAP_POINTS)
            .ok_or_else(|| Error::Precondition(format!("cap of radius {r} leaves the grid")))?;
        let coarse = cap_projection(&f, r, axisym, CAP_POINTS / 2).unwrap_or(v);
        values.push(v);
        quad_error.push((v - coarse).abs());
    }
    Ok(RadialProfile {
        radii: radii.to_vec(),
        values,
        quad_error,
    })
}

/// `∫_{Γ_r⁺} ∂_ν u (x₁ − 1) dσ = Υ_N r^N φ'(r)`, with the profile derivative
/// taken by a centred difference of step `delta` (one-sided at the
/// truncation sphere).
pub fn cap_flux(field: &HarmonicField, r: f64, delta: f64) -> Result<f64> {
    let n = GRID_DIM;
    let prof = |rr: f64| -> Result<f64> { Ok(radial_profile(field, &[rr])?.values[0]) };
    let d = if r + delta <= field.radius + 1e-12 {
        if r - delta <= 0.0 {
            return Err(Error::Precondition(format!("radius {r} too small for step {delta}")));
        }
        (prof(r + delta)? - prof(r - delta)?) / (2.0 * delta)
    } else {
        if r - 2.0 * delta <= 0.0 {
            return Err(Error::Precondition(format!("radius {r} too small for step {delta}")));
        }
        (3.0 * prof(r)? - 4.0 * prof(r - delta)? + prof(r - 2.0 * delta)?) / (2.0 * delta)
    };
    Ok(upsilon(n) * r.powi(n as i32) * d)
}

/// Measured against predicted values along a list of radii.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LawCheck {
    pub radii: Vec<f64>,
    pub measured: Vec<f64>,
    pub predicted: Vec<f64>,
    pub max_rel_error: f64,
}

impl LawCheck {
    fn new(radii: &[f64], measured: Vec<f64>, predicted: Vec<f64>) -> Self {
        let max_rel_error = measured
            .iter()
            .zip(&predicted)
            .map(|(m, p)| (m - p).abs() / p.abs())
            .fold(0.0, f64::max);
        Self {
            radii: radii.to_vec(),
            measured,
            predicted,
            max_rel_error,
        }
    }
}

/// Profile of Φ against `φ(1)r^{1−N} + Υ(r − r^{1−N})`, with `φ(1)` measured.
pub fn radial_law_check(phi: &HarmonicField, radii: &[f64]) -> Result<LawCheck> {
    let phi1 = radial_profile(phi, &[1.0])?.values[0];
    let measured = radial_profile(phi, radii)?.values;
    let predicted = radii.iter().map(|&r| phi_profile_law(phi1, r, GRID_DIM)).collect();
    Ok(LawCheck::new(radii, measured, predicted))
}

/// Profile of a half-ball harmonic field against `r·φ(R)/R`.
pub fn linearity_check(z: &HarmonicField, radii: &[f64]) -> Result<LawCheck> {
    let at_r = radial_profile(z, &[z.radius])?.values[0];
    let measured = radial_profile(z, radii)?.values;
    let predicted = radii.iter().map(|&r| r * at_r / z.radius).collect();
    Ok(LawCheck::new(radii, measured, predicted))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FluxCheck {
    pub flux: f64,
    pub predicted: f64,
    pub rel_error: f64,
    /// `χ_R(R)/(RΥ_N)`.
    pub chi_ratio: f64,
}

/// Flux of `v_R` through `Γ_R⁺` against the closed form in `χ_R(1)`.
pub fn flux_law_check(v: &HarmonicField, delta: f64) -> Result<FluxCheck> {
    let prof = radial_profile(v, &[1.0, v.radius])?.values;
    let flux = cap_flux(v, v.radius, delta)?;
    let predicted = v_r_flux_law(prof[0], v.radius, GRID_DIM);
    Ok(FluxCheck {
        flux,
        predicted,
        rel_error: (flux - predicted).abs() / predicted.abs(),
        chi_ratio: prof[1] / (v.radius * upsilon(GRID_DIM)),
    })
}

/// Local grid spacing along `x₁` at `x`.
pub fn spacing_at(grid: &Grid, x: f64) -> f64 {
    let nodes = &grid.axes()[0].nodes;
    let k = nodes.partition_point(|&v| v <= x).clamp(1, nodes.len() - 1);
    nodes[k] - nodes[k - 1]
}

/// Default resolution for the unit-scale harmonic problems.
pub fn harmonic_resolution(mode: GridMode, h_fine: f64) -> Resolution {
    Resolution {
        mode,
        h_fine,
        h_weight: h_fine,
        h_max: 0.5,
        growth: 1.05,
        fine_pad: 1.0,
        mid_radius: 3.0,
        h_mid: (4.0 * h_fine).min(0.0625),
        ..Resolution::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsilon_closed_forms() {
        assert!((upsilon(3) - (2.0 * PI / 3.0).sqrt()).abs() < 1e-14);
        assert!((upsilon(3) - 1.447202).abs() < 1e-6);
        assert!((upsilon(4) - PI / 2.0).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn theta1_second_moment_by_quadrature() {
        // ∫_{S²} θ₁² dσ = 2Υ²
        let q: f64 = half_sphere_rule(16, 32)
            .iter()
            .map(|(d, w)| 2.0 * w * d[0] * d[0])
            .sum();
        assert!((q - 2.0 * upsilon(3).powi(2)).abs() < 1e-6);
        let cap: f64 = half_sphere_axisym_rule(16).iter().map(|t| t.2).sum();
        assert!((cap - 2.0 * PI).abs() < 1e-8);
    }

    #[test]
    fn ramp_profile_is_linear() {
        let f = |p: &[f64; 3]| Some(p[0] - 1.0);
        for r in [0.5, 1.0, 3.0] {
            let a = cap_projection(&f, r, true, 24).unwrap();
            let b = cap_projection(&f, r, false, 24).unwrap();
            assert!((a - upsilon(3) * r).abs() < 1e-10);
            assert!((b - upsilon(3) * r).abs() < 1e-10);
        }
        let zero = |_: &[f64; 3]| Some(0.0);
        assert_eq!(cap_projection(&zero, 2.0, true, 8).unwrap(), 0.0);
    }

    #[test]
    fn profile_law_at_one() {
        assert!((phi_profile_law(2.0, 1.0, 3) - 2.0).abs() < 1e-15);
        // flux law reduces to the ramp flux when χ_R(1) = Υ
        let y = upsilon(3);
        let r: f64 = 5.0;
        let f = v_r_flux_law(y, r, 3);
        assert!((f - y * y * r.powi(3)).abs() < 1e-10 * f);
    }

    #[test]
    fn richardson_exact_for_power_law() {
        let c = |r: f64| 2.0 + 3.0 * r.powi(-3);
        assert!((richardson(c(8.0), c(16.0), 3.0) - 2.0).abs() < 1e-14);
    }
}
