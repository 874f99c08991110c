//! The compliance constant `𝔠(Σ) = ∫_Σ Φ(1,x')dx' = −2 min J_Σ`, computed
//! through three independent discrete routes, and equal-area comparisons
//! between sections.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretize::{assemble_stiffness, build_grid, Grid, GridMode, Resolution};
use crate::eig::stiffness_solver;
use crate::error::{Error, Result};
use crate::geometry::{make_domain, make_section, DomainKind, SectionGeometry, SectionShape, Truncation};
use crate::harmonic::{
    junction_trace, radial_profile, richardson, solve_v_r, trace_weights, upsilon, HarmonicField, HarmonicOptions,
    GRID_DIM, TRUNCATION_EXPONENT,
};
use crate::linalg::{dot, Backend};

/// `∫_Σ Φ(1, x') dx'`.
pub fn compliance_trace(phi: &HarmonicField) -> Result<f64> {
    junction_trace(phi)
}

/// `N·Υ_N·(φ(1) − Υ_N)` from the cap projection of Φ at radius `r`,
/// transported to `r = 1` with the radial law when `r ≠ 1`.
pub fn compliance_flux(phi: &HarmonicField, r: f64) -> Result<f64> {
    let n = GRID_DIM;
    let y = upsilon(n);
    let pr = radial_profile(phi, &[r])?.values[0];
    let q = r.powi(1 - n as i32);
    let phi1 = (pr - y * (r - q)) / q;
    Ok(compliance_from_phi1(phi1, n))
}

pub fn compliance_from_phi1(phi1: f64, n: usize) -> f64 {
    let y = upsilon(n);
    n as f64 * y * (phi1 - y)
}

/// Minimizer of the discrete `J(w) = ½wᵀAw − fᵀw` with `f` the trace functional.
#[derive(Debug, Clone)]
pub struct EnergyMinimizer {
    pub grid: Arc<Grid>,
    pub w: Vec<f64>,
    /// `min J`.
    pub m: f64,
    /// `−2 min J = fᵀw`.
    pub c: f64,
    /// `fᵀw`; equals `c` when `Aw = f`.
    pub load_work: f64,
    /// `‖Aw − f‖∞ / ‖f‖∞`.
    pub euler_lagrange_residual: f64,
}

/// Minimizes the trace-loaded energy on a given grid of `D̃`.
pub fn minimize_energy_on(
    grid: Arc<Grid>,
    section: &SectionGeometry,
    backend: Backend,
    cg_tol: f64,
) -> Result<EnergyMinimizer> {
    let f_sparse = trace_weights(&grid, section)?;
    let mut f = vec![0.0; grid.n_unknowns()];
    for (u, c) in f_sparse {
        f[u] += c;
    }
    minimize_with_load(grid, &f, backend, cg_tol)
}

pub fn minimize_with_load(grid: Arc<Grid>, f: &[f64], backend: Backend, cg_tol: f64) -> Result<EnergyMinimizer> {
    let fmax = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if fmax == 0.0 {
        return Ok(EnergyMinimizer {
            w: vec![0.0; f.len()],
            grid,
            m: 0.0,
            c: 0.0,
            load_work: 0.0,
            euler_lagrange_residual: 0.0,
        });
    }
    let a = assemble_stiffness(&grid).matrix;
    let solver = stiffness_solver(&a, Some(&grid.lattice()), backend, cg_tol)?;
    let w = solver.solve(f)?;
    let aw = a.matvec(&w);
    let res = aw.iter().zip(f).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / fmax;
    let fw = dot(f, &w);
    let m = 0.5 * dot(&w, &aw) - fw;
    Ok(EnergyMinimizer {
        grid,
        w,
        m,
        c: -2.0 * m,
        load_work: fw,
        euler_lagrange_residual: res,
    })
}

fn default_backend(mode: GridMode) -> Backend {
    match mode {
        GridMode::Axisym => Backend::Direct,
        _ => Backend::Cg,
    }
}

/// Energy route on its own grid.
pub fn compliance_energy(
    section: &Arc<SectionGeometry>,
    radius: f64,
    tube_length: f64,
    res: &Resolution,
    opts: &HarmonicOptions,
) -> Result<EnergyMinimizer> {
    let domain = make_domain(
        DomainKind::Tilde,
        section.clone(),
        1.0,
        Truncation {
            chamber_radius: radius,
            tube_length,
        },
        GRID_DIM,
    )?;
    let grid = Arc::new(build_grid(&domain, res, None)?);
    minimize_energy_on(
        grid,
        section,
        opts.backend.unwrap_or(default_backend(res.mode)),
        opts.cg_tol,
    )
}

/// Difference between the energy minimizer and `Φ − (x₁−1)⁺` in the
/// discrete Dirichlet norm (both on the same grid).
pub fn minimizer_gap(min: &EnergyMinimizer, phi: &HarmonicField) -> Result<f64> {
    if !min.grid.same_axes(&phi.grid) || min.w.len() != phi.values.len() {
        return Err(Error::Mismatch("minimizer and Φ live on different grids".into()));
    }
    let shifted: Vec<f64> = (0..phi.values.len())
        .map(|u| phi.values[u] - (phi.grid.coords(u)[0] - 1.0).max(0.0))
        .collect();
    min.grid.h1_distance(&min.w, &shifted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteValue {
    pub at_r: f64,
    pub at_2r: f64,
    pub extrapolated: f64,
    /// `|at_2r − extrapolated|`.
    pub error_bar: f64,
}

impl RouteValue {
    fn new(at_r: f64, at_2r: f64) -> Self {
        let extrapolated = richardson(at_r, at_2r, TRUNCATION_EXPONENT);
        Self {
            at_r,
            at_2r,
            extrapolated,
            error_bar: (at_2r - extrapolated).abs(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplianceResult {
    pub section: SectionShape,
    pub measure: f64,
    pub admissible: bool,
    pub radius: f64,
    pub tube_length: f64,
    pub h_fine: f64,
    pub mode: GridMode,
    pub trace: RouteValue,
    pub flux: RouteValue,
    pub energy: RouteValue,
    /// `−C/2` from the extrapolated trace route.
    pub m: f64,
    /// Discrete `‖w − (Φ − (x₁−1)⁺)‖²` at radius R.
    pub minimizer_gap: f64,
    /// `|min J + fᵀw/2| / fᵀw`, the discrete `m = −C/2`.
    pub min_identity_error: f64,
    pub euler_lagrange_residual: f64,
    pub harmonic_residual: f64,
}

impl ComplianceResult {
    /// Best estimate (extrapolated trace route).
    pub fn value(&self) -> f64 {
        self.trace.extrapolated
    }

    /// Largest pairwise relative spread between the routes.
    pub fn spread(&self, extrapolated: bool) -> f64 {
        let v = if extrapolated {
            [
                self.trace.extrapolated,
                self.flux.extrapolated,
                self.energy.extrapolated,
            ]
        } else {
            [self.trace.at_r, self.flux.at_r, self.energy.at_r]
        };
        let c = v[0];
        let mut s: f64 = 0.0;
        for i in 0..3 {
            for j in 0..i {
                s = s.max((v[i] - v[j]).abs() / c.abs());
            }
        }
        s
    }
}

/// All three routes at truncation radii `R` and `2R` (shared axes).
pub fn compliance(
    section: &Arc<SectionGeometry>,
    radius: f64,
    tube_length: f64,
    res: &Resolution,
    opts: &HarmonicOptions,
) -> Result<ComplianceResult> {
    let shared = Resolution {
        extent_radius: Some(2.0 * radius),
        ..res.clone()
    };
    let backend = opts.backend.unwrap_or(default_backend(res.mode));
    let mut trace = [0.0; 2];
    let mut flux = [0.0; 2];
    let mut energy = [0.0; 2];
    let mut gap = 0.0;
    let mut el: f64 = 0.0;
    let mut ident: f64 = 0.0;
    let mut hres: f64 = 0.0;
    for (k, r) in [radius, 2.0 * radius].into_iter().enumerate() {
        let phi = solve_v_r(section, r, tube_length, &shared, opts).map_err(|e| e.in_stage("Φ solve"))?;
        trace[k] = compliance_trace(&phi)?;
        flux[k] = compliance_flux(&phi, 1.0)?;
        let min = minimize_energy_on(phi.grid.clone(), section, backend, opts.cg_tol)
            .map_err(|e| e.in_stage("energy minimization"))?;
        energy[k] = min.c;
        el = el.max(min.euler_lagrange_residual);
        ident = ident.max((min.m + 0.5 * min.load_work).abs() / min.load_work.abs());
        hres = hres.max(phi.residual);
        if k == 0 {
            gap = minimizer_gap(&min, &phi)?;
        }
    }
    let trace = RouteValue::new(trace[0], trace[1]);
    Ok(ComplianceResult {
        section: section.spec().clone(),
        measure: section.measure(),
        admissible: section.is_admissible(),
        radius,
        tube_length,
        h_fine: res.h_fine,
        mode: res.mode,
        m: -0.5 * trace.extrapolated,
        trace,
        flux: RouteValue::new(flux[0], flux[1]),
        energy: RouteValue::new(energy[0], energy[1]),
        minimizer_gap: gap,
        min_identity_error: ident,
        euler_lagrange_residual: el,
        harmonic_residual: hres,
    })
}

// ---------------------------------------------------------------------------
// Steiner comparisons

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteinerEntry {
    pub shape: SectionShape,
    pub measure: f64,
    pub admissible: bool,
    pub is_disk: bool,
    /// Compliance at each resolution (coarse first).
    pub values: Vec<f64>,
    pub value: f64,
    /// Two-resolution spread.
    pub error_bar: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteinerReport {
    pub entries: Vec<SteinerEntry>,
    pub radius: f64,
    pub h_values: Vec<f64>,
    /// `C(disk) ≥ C(Σ) − bar` for every entry.
    pub ordering_holds: bool,
    /// `C(disk) − bar(disk) > C(Σ) + bar(Σ)` for every non-disk entry.
    pub strict_beyond_bars: bool,
}

/// Compliance of a section on a 3D grid by the trace route.
pub fn compliance_3d(
    section: &Arc<SectionGeometry>,
    radius: f64,
    tube_length: f64,
    res: &Resolution,
    opts: &HarmonicOptions,
) -> Result<f64> {
    let phi = solve_v_r(section, radius, tube_length, res, opts)?;
    compliance_trace(&phi)
}

/// Compares equal-measure sections; the disk should have the largest compliance.
pub fn steiner_compare(
    shapes: &[SectionShape],
    radius: f64,
    tube_length: f64,
    resolutions: &[Resolution],
    opts: &HarmonicOptions,
) -> Result<SteinerReport> {
    if resolutions.is_empty() {
        return Err(Error::Precondition("at least one resolution is needed".into()));
    }
    let sections: Vec<Arc<SectionGeometry>> = shapes
        .iter()
        .map(|s| make_section(s).map(Arc::new))
        .collect::<Result<_>>()?;
    let m0 = sections
        .first()
        .ok_or_else(|| Error::Precondition("no shapes to compare".into()))?
        .measure();
    for s in &sections {
        if (s.measure() - m0).abs() > 1e-6 * m0 {
            return Err(Error::Precondition(format!(
                "sections differ in measure ({} vs {m0})",
                s.measure()
            )));
        }
    }
    if !sections.iter().any(|s| s.is_disk()) {
        return Err(Error::Precondition(
            "comparison needs the disk of the common measure".into(),
        ));
    }
    let mut entries = Vec::new();
    for (shape, sec) in shapes.iter().zip(&sections) {
        let mut values = Vec::new();
        for res in resolutions {
            let mut r = res.clone();
            if r.mode == GridMode::CartesianQuarter && !sec.has_quadrant_symmetry() {
                r.mode = GridMode::Cartesian;
            }
            values.push(compliance_3d(sec, radius, tube_length, &r, opts).map_err(|e| e.in_stage("steiner"))?);
        }
        let value = *values.last().unwrap();
        let error_bar = if values.len() > 1 {
            (values[values.len() - 1] - values[values.len() - 2]).abs()
        } else {
            0.0
        };
        entries.push(SteinerEntry {
            shape: shape.clone(),
            measure: sec.measure(),
            admissible: sec.is_admissible(),
            is_disk: sec.is_disk(),
            values,
            value,
            error_bar,
        });
    }
    let disk = entries.iter().find(|e| e.is_disk).unwrap().clone();
    let ordering_holds = entries
        .iter()
        .all(|e| disk.value >= e.value - e.error_bar.max(disk.error_bar));
    let strict_beyond_bars = entries
        .iter()
        .filter(|e| !e.is_disk)
        .all(|e| disk.value - disk.error_bar > e.value + e.error_bar);
    Ok(SteinerReport {
        entries,
        radius,
        h_values: resolutions.iter().map(|r| r.h_fine).collect(),
        ordering_holds,
        strict_beyond_bars,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic::harmonic_resolution;

    #[test]
    fn ramp_has_zero_flux_compliance() {
        assert!(compliance_from_phi1(upsilon(3), 3).abs() < 1e-15);
    }

    #[test]
    fn zero_load_has_zero_minimum() {
        let sec = Arc::new(make_section(&SectionShape::disk(0.75)).unwrap());
        let domain = make_domain(
            DomainKind::Tilde,
            sec,
            1.0,
            Truncation {
                chamber_radius: 8.0,
                tube_length: 4.0,
            },
            3,
        )
        .unwrap();
        let grid = Arc::new(build_grid(&domain, &harmonic_resolution(GridMode::Axisym, 1.0 / 16.0), None).unwrap());
        let n = grid.n_unknowns();
        let m = minimize_with_load(grid, &vec![0.0; n], Backend::Direct, 1e-10).unwrap();
        assert_eq!(m.m, 0.0);
        assert!(m.w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_measures_rejected() {
        let shapes = [SectionShape::disk(0.5), SectionShape::square(1.0)];
        let r = steiner_compare(
            &shapes,
            8.0,
            4.0,
            &[harmonic_resolution(GridMode::CartesianQuarter, 1.0 / 8.0)],
            &HarmonicOptions::default(),
        );
        assert!(r.is_err());
    }
}
