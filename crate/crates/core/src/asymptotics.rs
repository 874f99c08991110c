//! ε-sweeps on dumbbells and fits of the `ε^N` laws.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compliance::{compliance, ComplianceResult};
use crate::discretize::{assemble_stiffness, build_grid, weighted_mass_diagonal, Grid, GridMode, Resolution};
use crate::eig::{
    b_overlap, normalize_sign, section_ground_mode, solve_pencil_with, stiffness_solver, EigenOptions, EigenPair,
    Junction, JunctionDerivative,
};
use crate::error::{Error, Result};
use crate::geometry::{
    make_domain, make_section, Chamber, DomainGeometry, DomainKind, SectionGeometry, SectionShape, Truncation,
    WeightSpec,
};
use crate::harmonic::{harmonic_resolution, solve_v_r, HarmonicField, HarmonicOptions};
use crate::linalg::CsrMatrix;

/// First zero of `J₀`.
pub const BESSEL_J0_ZERO: f64 = 2.404_825_557_695_773;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    Simple,
    Resonant,
}

/// How the compliance entering the predicted prefactor is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompliancePlan {
    pub radius: f64,
    pub tube_length: f64,
    pub h_fine: f64,
    /// Also solve at `h_fine/2` and use that value, with the difference as error bar.
    pub refine: bool,
}

impl Default for CompliancePlan {
    fn default() -> Self {
        Self {
            radius: 12.0,
            tube_length: 6.0,
            h_fine: 1.0 / 64.0,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Decreasing, in `(0, 1)`.
    pub eps: Vec<f64>,
    pub section: SectionShape,
    pub weight: WeightSpec,
    pub dim: usize,
    pub mode: SweepMode,
    pub grid_mode: GridMode,
    /// Channel resolution `h = ε / cells_per_eps`.
    pub cells_per_eps: f64,
    pub h_weight: f64,
    pub h_max: f64,
    pub growth: f64,
    pub truncation: Truncation,
    /// Index of the tracked eigenvalue: in the union spectrum (simple mode)
    /// or in each chamber spectrum (resonant mode).
    pub k_bar: usize,
    pub overlap_threshold: f64,
    pub eigen: EigenOptions,
    pub compliance: CompliancePlan,
    pub blowup_annulus: [f64; 2],
    pub decay_window: [f64; 2],
    /// Minimal `|d⁺|/|d⁻| − 1` accepted in resonant mode.
    pub asymmetry_tol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.2, 0.15, 0.1, 0.075],
            section: SectionShape::disk(0.75),
            weight: WeightSpec::default_simple(),
            dim: 3,
            mode: SweepMode::Simple,
            grid_mode: GridMode::Axisym,
            cells_per_eps: 16.0,
            h_weight: 0.05,
            h_max: 0.5,
            growth: 1.08,
            truncation: Truncation::default(),
            k_bar: 0,
            overlap_threshold: 0.5,
            eigen: EigenOptions::default(),
            compliance: CompliancePlan::default(),
            blowup_annulus: [1.5, 3.0],
            decay_window: [0.2, 0.5],
            asymmetry_tol: 0.05,
        }
    }
}

impl SweepConfig {
    pub fn resonant(offset: f64) -> Self {
        Self {
            mode: SweepMode::Resonant,
            weight: WeightSpec::mirrored_with_offset(offset),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps.len() < 3 {
            return Err(Error::Precondition(format!(
                "a sweep needs at least 3 values of ε (got {})",
                self.eps.len()
            )));
        }
        for w in self.eps.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::Precondition("ε values must be strictly decreasing".into()));
            }
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(Error::Precondition(format!("ε = {e} must lie in (0, 1)")));
        }
        if self.dim != 3 {
            return Err(Error::Precondition(format!(
                "sweeps run in N = 3 only (got {})",
                self.dim
            )));
        }
        self.weight.validate(true)?;
        if self.mode == SweepMode::Resonant
            && !self
                .weight
                .bumps
                .iter()
                .all(|b| b.center[1] == 0.0 && b.center[2] == 0.0)
        {
            return Err(Error::Precondition("resonant weights must be axisymmetric".into()));
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold < 1.0) {
            return Err(Error::Precondition("overlap threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn resolution(&self, eps: f64) -> Resolution {
        Resolution {
            mode: self.grid_mode,
            h_weight: self.h_weight,
            h_max: self.h_max,
            growth: self.growth,
            ..Resolution::for_eps(eps, self.cells_per_eps)
        }
    }
}

// ---------------------------------------------------------------------------
// fits

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub eps: f64,
    pub value: f64,
}

/// Predicted prefactor `(∂u₀/∂x₁)²·𝔠(Σ)` with its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub junction_derivative: f64,
    pub junction_error: f64,
    pub compliance: f64,
    pub compliance_error: f64,
    /// `d²·𝔠(Σ)`.
    pub value: f64,
    /// `d²·N∫(Φ−θ₁)θ₁` (sphere-integral form).
    pub sphere_value: f64,
    /// Propagated relative uncertainty.
    pub rel_error: f64,
}

impl Prediction {
    pub fn new(d: f64, d_err: f64, c: f64, c_err: f64, c_sphere: f64) -> Self {
        Self {
            junction_derivative: d,
            junction_error: d_err,
            compliance: c,
            compliance_error: c_err,
            value: d * d * c,
            sphere_value: d * d * c_sphere,
            rel_error: 2.0 * d_err / d.abs() + c_err / c.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub points: Vec<RatePoint>,
    /// Slope of `log value` against `log ε`.
    pub slope: f64,
    pub log_intercept: f64,
    pub r2: f64,
    /// Slope refitted without the largest ε.
    pub slope_without_largest: Option<f64>,
    /// Exponent `N` used for the prefactor.
    pub exponent: f64,
    /// Intercept at `ε = 0` of `value/ε^N` fitted linearly in ε.
    pub prefactor: f64,
    pub prefactor_method: String,
    pub predicted: Option<Prediction>,
}

impl RateFit {
    /// `|prefactor/predicted − 1|`.
    pub fn prefactor_error(&self) -> Option<f64> {
        self.predicted.map(|p| (self.prefactor / p.value - 1.0).abs())
    }

    pub fn slope_within(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

/// Power-law fit of `value ≈ c·ε^slope`, plus the `ε → 0` intercept of `value/ε^exponent`.
pub fn fit_rate(points: &[RatePoint], exponent: f64, predicted: Option<Prediction>) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Precondition(format!(
            "a fit needs at least 3 points (got {})",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| !(p.value > 0.0) || !(p.eps > 0.0)) {
        return Err(Error::Precondition(format!(
            "cannot fit a power law through value {} at ε = {}",
            p.value, p.eps
        )));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.eps.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.value.ln()).collect();
    let spread = lx.iter().cloned().fold(f64::MIN, f64::max) - lx.iter().cloned().fold(f64::MAX, f64::min);
    if spread < 1e-3 {
        return Err(Error::Precondition("fit degenerate: ε values too close".into()));
    }
    let (slope, log_intercept, r2) = linear_fit(&lx, &ly);
    let slope_without_largest = if points.len() >= 4 {
        let imax = (0..points.len())
            .max_by(|&a, &b| points[a].eps.total_cmp(&points[b].eps))
            .unwrap();
        let keep: Vec<usize> = (0..points.len()).filter(|&i| i != imax).collect();
        let x: Vec<f64> = keep.iter().map(|&i| lx[i]).collect();
        let y: Vec<f64> = keep.iter().map(|&i| ly[i]).collect();
        Some(linear_fit(&x, &y).0)
    } else {
        None
    };
    let e: Vec<f64> = points.iter().map(|p| p.eps).collect();
    let q: Vec<f64> = points.iter().map(|p| p.value / p.eps.powf(exponent)).collect();
    let (_, prefactor, _) = linear_fit(&e, &q);
    Ok(RateFit {
        points: points.to_vec(),
        slope,
        log_intercept,
        r2,
        slope_without_largest,
        exponent,
        prefactor,
        prefactor_method: format!("least-squares line of value/eps^{exponent} against eps, intercept at eps = 0"),
        predicted,
    })
}

// ---------------------------------------------------------------------------
// shared pieces

fn solve_pairs(grid: &Grid, weight: &WeightSpec, k: usize, opts: &EigenOptions) -> Result<(Vec<EigenPair>, Vec<f64>)> {
    let a = assemble_stiffness(grid).matrix;
    let bd = weighted_mass_diagonal(grid, weight);
    let b = CsrMatrix::diagonal_matrix(&bd);
    let solver = stiffness_solver(&a, Some(&grid.lattice()), opts.backend, opts.cg_tol)?;
    Ok((solve_pencil_with(&a, &b, solver.as_ref(), k, opts)?, bd))
}

/// Index of the pair with largest `|uᵀBv|` and that overlap.
fn best_overlap(pairs: &[EigenPair], target: &[f64], bd: &[f64]) -> (usize, f64) {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (i, b_overlap(&p.vector, target, bd).abs()))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

fn align(v: &mut [f64], target: &[f64], bd: &[f64]) -> Result<()> {
    let o = b_overlap(v, target, bd);
    if o.abs() < 1e-8 {
        return Err(Error::Eigen("sign alignment impossible: overlap vanishes".into()));
    }
    if o < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(())
}

/// Share of `uᵀBu` carried by the plus chamber (`x₁ > 1/2`).
fn plus_share(grid: &Grid, u: &[f64], bd: &[f64]) -> f64 {
    let mut plus = 0.0;
    let mut all = 0.0;
    for i in 0..u.len() {
        let m = bd[i] * u[i] * u[i];
        all += m;
        if grid.coords(i)[0] > 0.5 {
            plus += m;
        }
    }
    plus / all
}

/// Ground Dirichlet eigenvalue of the section (closed form for disks).
pub fn section_lambda1(section: &SectionGeometry) -> Result<f64> {
    match section.disk_radius() {
        Some(r) => Ok((BESSEL_J0_ZERO / r).powi(2)),
        None => Ok(section_ground_mode(section, section.inner_radius() / 64.0)?.lambda1),
    }
}

fn predicted_compliance(section: &Arc<SectionGeometry>, plan: &CompliancePlan) -> Result<(ComplianceResult, f64, f64)> {
    let opts = HarmonicOptions::default();
    let mode = if section.is_disk() {
        GridMode::Axisym
    } else {
        GridMode::Cartesian
    };
    let coarse = compliance(
        section,
        plan.radius,
        plan.tube_length,
        &harmonic_resolution(mode, plan.h_fine),
        &opts,
    )?;
    if !plan.refine {
        let err = coarse.trace.error_bar;
        return Ok((coarse, err, f64::NAN));
    }
    let fine = compliance(
        section,
        plan.radius,
        plan.tube_length,
        &harmonic_resolution(mode, plan.h_fine / 2.0),
        &opts,
    )?;
    let err = (fine.value() - coarse.value()).abs() + fine.trace.error_bar;
    let coarse_value = coarse.value();
    Ok((fine, err, coarse_value))
}

/// Second-order extrapolation of junction derivatives over the two finest grids.
fn extrapolate_derivative(hs: &[f64], ds: &[f64]) -> (f64, f64) {
    let n = hs.len();
    if n < 2 {
        return (ds[n - 1], 0.0);
    }
    let (hc, hf) = (hs[n - 2], hs[n - 1]);
    let (dc, df) = (ds[n - 2], ds[n - 1]);
    let ex = df + (df - dc) / ((hc / hf).powi(2) - 1.0);
    (ex, (ex - df).abs())
}

// ---------------------------------------------------------------------------
// channel decay and blow-up

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub eps: f64,
    /// `(x₁, max_{x'} |u|)` on the nodes of the window.
    pub samples: Vec<(f64, f64)>,
    pub rate: f64,
    pub r2: f64,
    /// `√λ₁(Σ)/(4ε)`.
    pub bound: f64,
    /// `√λ₁(Σ)/ε`.
    pub sharp: f64,
    pub ratio_to_sharp: f64,
    pub bound_holds: bool,
    pub within_25_percent: bool,
    /// `sup_{δ<x₁<1−δ} |u| / sup |u|` at `δ = 1/4`.
    pub mid_channel_sup: f64,
    /// `e^{−√λ₁(Σ)δ/(4ε)}`.
    pub mid_channel_bound: f64,
    pub underflow_clamped: bool,
}

/// Exponential rate of `max_{x'}|u(x₁, ·)|` across the channel window.
pub fn channel_decay(
    field: &[f64],
    grid: &Grid,
    eps: f64,
    lambda1_sigma: f64,
    window: [f64; 2],
) -> Result<DecayReport> {
    if field.len() != grid.n_unknowns() {
        return Err(Error::Mismatch("field does not match the grid".into()));
    }
    let xs = &grid.axes()[0].nodes;
    let mut plane_max = vec![0.0f64; xs.len()];
    let mut total_max = 0.0f64;
    for (u, v) in field.iter().enumerate() {
        let i = grid.lattice_index(u)[0];
        plane_max[i] = plane_max[i].max(v.abs());
        total_max = total_max.max(v.abs());
    }
    let mut clamped = false;
    let samples: Vec<(f64, f64)> = xs
        .iter()
        .zip(&plane_max)
        .filter(|(x, _)| **x >= window[0] - 1e-12 && **x <= window[1] + 1e-12)
        .map(|(&x, &m)| {
            if m < 1e-300 {
                clamped = true;
                (x, 1e-300)
            } else {
                (x, m)
            }
        })
        .collect();
    if clamped {
        eprintln!("warning: channel values below 1e-300 clamped at ε = {eps}");
    }
    if samples.len() < 3 {
        return Err(Error::Resolution(format!(
            "only {} grid planes inside the decay window",
            samples.len()
        )));
    }
    let x: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let (slope, _, r2) = linear_fit(&x, &y);
    let rate = slope.abs();
    let root = lambda1_sigma.sqrt();
    let bound = root / (4.0 * eps);
    let sharp = root / eps;
    let delta = 0.25;
    let mid = xs
        .iter()
        .zip(&plane_max)
        .filter(|(x, _)| **x > delta && **x < 1.0 - delta)
        .map(|(_, m)| *m)
        .fold(0.0, f64::max);
    let mid_channel_sup = if total_max > 0.0 { mid / total_max } else { 0.0 };
    let mid_channel_bound = (-root * delta / (4.0 * eps)).exp();
    Ok(DecayReport {
        eps,
        samples,
        rate,
        r2,
        bound,
        sharp,
        ratio_to_sharp: rate / sharp,
        bound_holds: rate >= bound,
        within_25_percent: (rate / sharp - 1.0).abs() <= 0.25,
        mid_channel_sup,
        mid_channel_bound,
        underflow_clamped: clamped,
    })
}

/// Relative Dirichlet-energy error between `U_ε(x) = u_ε(e₁+ε(x−e₁))/ε` and
/// `d·Φ` over `{r₁ ≤ |x−e₁| ≤ r₂}`, evaluated on the grid of `u_ε`.
pub fn blowup_error(
    field: &[f64],
    grid: &Grid,
    eps: f64,
    d: f64,
    phi: &HarmonicField,
    annulus: [f64; 2],
) -> Result<f64> {
    let [r1, r2] = annulus;
    if !(r1 >= 1.5 && r2 > r1) {
        return Err(Error::Precondition(format!(
            "annulus [{r1}, {r2}] must satisfy 1.5 ≤ r₁ < r₂"
        )));
    }
    if r2 * eps >= 1.0 || r2 >= phi.radius {
        return Err(Error::Precondition(format!(
            "annulus radius {r2} leaves the ε-scaled domain or the truncated Φ"
        )));
    }
    if field.len() != grid.n_unknowns() {
        return Err(Error::Mismatch("field does not match the grid".into()));
    }
    let mut keep = vec![false; field.len()];
    let mut model = vec![0.0; field.len()];
    let mut missing = 0usize;
    for u in 0..field.len() {
        let c = grid.coords(u);
        let p = [c[0], c[1], c[2]];
        let q = [1.0 + (p[0] - 1.0) / eps, p[1] / eps, p[2] / eps];
        let r = ((q[0] - 1.0).powi(2) + q[1] * q[1] + q[2] * q[2]).sqrt();
        if r >= r1 && r <= r2 {
            keep[u] = true;
            match phi.eval(&q) {
                Some(v) => model[u] = eps * d * v,
                None => missing += 1,
            }
        }
    }
    if missing > 0 {
        return Err(Error::Precondition(format!(
            "{missing} annulus nodes fall outside the Φ grid"
        )));
    }
    let diff: Vec<f64> = field.iter().zip(&model).map(|(a, b)| a - b).collect();
    let num = grid.energy_where(&diff, &|u| keep[u]);
    let den = grid.energy_where(&model, &|u| keep[u]);
    if den == 0.0 {
        return Err(Error::Precondition("model has no energy on the annulus".into()));
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// simple sweep

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub h_fine: f64,
    pub n_unknowns: usize,
    pub lambda0: f64,
    pub lambda_eps: f64,
    pub gap: f64,
    /// `‖∇(u_ε − u₀)‖²`.
    pub distance: f64,
    pub overlap: f64,
    pub tracked_index: usize,
    pub junction: JunctionDerivative,
    /// Distance from λ₀ to the rest of the limit spectrum.
    pub separation: f64,
    pub residual: f64,
    pub blowup_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimpleSweep {
    pub config: SweepConfig,
    pub points: Vec<SweepPoint>,
    pub gap_fit: RateFit,
    pub eigfun_fit: RateFit,
    pub compliance: ComplianceResult,
    pub lambda1_sigma: f64,
    pub decay: Vec<DecayReport>,
    /// λ₀ − λ_ε strictly decreasing as ε decreases.
    pub monotone_gap: bool,
    pub blowup_decreasing: bool,
    /// `|prefactor(𝔠 form) / prefactor(sphere form) − 1|`.
    pub route_gap: f64,
    /// `u_ε` at the smallest ε.
    #[serde(skip)]
    pub finest: Option<FieldSnapshot>,
}

/// A field together with its grid.
#[derive(Debug, Clone)]
pub struct FieldSnapshot {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

struct SimpleSolve {
    point: SweepPoint,
    grid: Grid,
    u_eps: Vec<f64>,
}

fn simple_point(cfg: &SweepConfig, section: &Arc<SectionGeometry>, eps: f64) -> Result<SimpleSolve> {
    let omega = make_domain(DomainKind::Dumbbell, section.clone(), eps, cfg.truncation, cfg.dim)?;
    let limit = omega.with_kind(DomainKind::Disconnected)?;
    omega.check_weight(&cfg.weight)?;
    let res = cfg.resolution(eps);
    omega.check_resolution(res.h_fine)?;
    let g1 = build_grid(&omega, &res, Some(&cfg.weight)).map_err(|e| e.in_stage("dumbbell grid"))?;
    let g0 = build_grid(&limit, &res, Some(&cfg.weight)).map_err(|e| e.in_stage("limit grid"))?;
    let k = cfg.k_bar + 2;
    let (mut p0, _) = solve_pairs(&g0, &cfg.weight, k, &cfg.eigen).map_err(|e| e.in_stage("limit eigenproblem"))?;
    let (mut p1, bd1) =
        solve_pairs(&g1, &cfg.weight, k, &cfg.eigen).map_err(|e| e.in_stage("dumbbell eigenproblem"))?;
    let lambda0 = p0[cfg.k_bar].lambda;
    let separation = p0
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != cfg.k_bar)
        .map(|(_, p)| (p.lambda - lambda0).abs())
        .fold(f64::INFINITY, f64::min);
    let bd0 = weighted_mass_diagonal(&g0, &cfg.weight);
    let junction = if plus_share(&g0, &p0[cfg.k_bar].vector, &bd0) > 0.5 {
        Junction::E1
    } else {
        Junction::Origin
    };
    let jd = normalize_sign(&mut p0[cfg.k_bar], &g0, junction)?;
    let u0 = g1.embed(&g0, &p0[cfg.k_bar].vector)?;
    let (idx, overlap) = best_overlap(&p1, &u0, &bd1);
    if overlap < cfg.overlap_threshold {
        return Err(Error::Eigen(format!(
            "eigen index mismatch at ε = {eps}: best B-overlap {overlap:.3} below {}",
            cfg.overlap_threshold
        )));
    }
    let mut ue = std::mem::take(&mut p1[idx].vector);
    align(&mut ue, &u0, &bd1)?;
    let lambda_eps = p1[idx].lambda;
    let distance = g1.h1_distance(&ue, &u0)?;
    Ok(SimpleSolve {
        point: SweepPoint {
            eps,
            h_fine: res.h_fine,
            n_unknowns: g1.n_unknowns(),
            lambda0,
            lambda_eps,
            gap: lambda0 - lambda_eps,
            distance,
            overlap,
            tracked_index: idx,
            junction: jd,
            separation,
            residual: p1[idx].residual.max(p0[cfg.k_bar].residual),
            blowup_error: f64::NAN,
        },
        grid: g1,
        u_eps: ue,
    })
}

fn strictly_decreasing_in_eps(points: &[(f64, f64)]) -> bool {
    // points sorted by decreasing ε; the value must decrease with ε
    points.windows(2).all(|w| w[1].1 < w[0].1)
}

/// The full simple-mode sweep: gap and eigenfunction fits, channel decay and blow-up.
pub fn simple_sweep(cfg: &SweepConfig) -> Result<SimpleSweep> {
    cfg.validate()?;
    if cfg.mode != SweepMode::Simple {
        return Err(Error::Precondition("simple_sweep needs mode = simple".into()));
    }
    let section = Arc::new(make_section(&cfg.section)?);
    if !section.is_admissible() {
        return Err(Error::Precondition("the section is not asymptotics-admissible".into()));
    }
    let (comp, c_err, _) = predicted_compliance(&section, &cfg.compliance).map_err(|e| e.in_stage("compliance"))?;
    let lambda1_sigma = section_lambda1(&section)?;
    let solved: Vec<Result<SimpleSolve>> = cfg.eps.par_iter().map(|&e| simple_point(cfg, &section, e)).collect();
    let mut solved: Vec<SimpleSolve> = solved.into_iter().collect::<Result<_>>()?;
    let first = &solved[0].point;
    if first.separation < 10.0 * first.gap.abs() {
        return Err(Error::Precondition(format!(
            "λ₀ = {} is not isolated: nearest limit eigenvalue at distance {:.3e}, gap {:.3e}",
            first.lambda0, first.separation, first.gap
        )));
    }
    let hs: Vec<f64> = solved.iter().map(|s| s.point.h_fine).collect();
    let ds: Vec<f64> = solved.iter().map(|s| s.point.junction.magnitude).collect();
    let (d, d_err) = extrapolate_derivative(&hs, &ds);
    let signed_d = solved[0].point.junction.junction.reference_sign() * d;
    let c = comp.value();
    let prediction = Prediction::new(d, d_err, c, c_err, comp.flux.extrapolated);
    let phi = solve_v_r(
        &section,
        cfg.compliance.radius,
        cfg.compliance.tube_length,
        &harmonic_resolution(GridMode::Axisym, cfg.compliance.h_fine),
        &HarmonicOptions::default(),
    )
    .map_err(|e| e.in_stage("blow-up profile"))?;
    let mut decay = Vec::new();
    for s in &mut solved {
        let field = if s.point.junction.junction == Junction::E1 {
            s.u_eps.clone()
        } else {
            reflect_field(&s.grid, &s.u_eps)?
        };
        s.point.blowup_error = blowup_error(&field, &s.grid, s.point.eps, signed_d.abs(), &phi, cfg.blowup_annulus)
            .map_err(|e| e.in_stage("blow-up"))?;
        decay.push(channel_decay(
            &s.u_eps,
            &s.grid,
            s.point.eps,
            lambda1_sigma,
            cfg.decay_window,
        )?);
    }
    let finest = solved.last().map(|s| FieldSnapshot {
        grid: Arc::new(s.grid.clone()),
        values: s.u_eps.clone(),
    });
    let points: Vec<SweepPoint> = solved.into_iter().map(|s| s.point).collect();
    if let Some(p) = points.iter().find(|p| p.gap < 0.0) {
        return Err(Error::Eigen(format!("negative gap {} at ε = {}", p.gap, p.eps)));
    }
    let n = cfg.dim as f64;
    let gap_fit = fit_rate(
        &points
            .iter()
            .map(|p| RatePoint {
                eps: p.eps,
                value: p.gap,
            })
            .collect::<Vec<_>>(),
        n,
        Some(prediction),
    )?;
    let eigfun_fit = fit_rate(
        &points
            .iter()
            .map(|p| RatePoint {
                eps: p.eps,
                value: p.distance,
            })
            .collect::<Vec<_>>(),
        n,
        Some(prediction),
    )?;
    let monotone_gap = strictly_decreasing_in_eps(&points.iter().map(|p| (p.eps, p.gap)).collect::<Vec<_>>());
    let blowup_decreasing =
        strictly_decreasing_in_eps(&points.iter().map(|p| (p.eps, p.blowup_error)).collect::<Vec<_>>());
    Ok(SimpleSweep {
        config: cfg.clone(),
        points,
        route_gap: (prediction.value / prediction.sphere_value - 1.0).abs(),
        gap_fit,
        eigfun_fit,
        compliance: comp,
        lambda1_sigma,
        decay,
        monotone_gap,
        blowup_decreasing,
        finest,
    })
}

/// `u(1 − x₁, x')` on the same grid, for blow-ups at the origin.
fn reflect_field(grid: &Grid, u: &[f64]) -> Result<Vec<f64>> {
    let tensor = grid.ambient(u, None);
    (0..u.len())
        .map(|i| {
            let c = grid.coords(i);
            grid.interpolate(&tensor, &[1.0 - c[0], c[1], c[2]])
                .ok_or_else(|| Error::Mismatch("reflected point leaves the grid".into()))
        })
        .collect()
}

/// Gap law `λ₀ − λ_ε ≈ ε^N d²𝔠(Σ)`.
pub fn eigen_gap_sweep(cfg: &SweepConfig) -> Result<RateFit> {
    Ok(simple_sweep(cfg)?.gap_fit)
}

/// Eigenfunction law `‖∇(u_ε − u₀)‖² ≈ ε^N d²𝔠(Σ)`.
pub fn eigfun_rate_sweep(cfg: &SweepConfig) -> Result<RateFit> {
    Ok(simple_sweep(cfg)?.eigfun_fit)
}

// ---------------------------------------------------------------------------
// resonant sweep

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonantPoint {
    pub eps: f64,
    pub n_unknowns: usize,
    /// Common chamber eigenvalue after calibration.
    pub lambda0: f64,
    /// Factor applied to the minus-chamber weight.
    pub calibration: f64,
    /// `|λ⁻ − λ⁺|/λ⁺` after calibration (recomputed).
    pub resonance_mismatch: f64,
    pub d_plus: f64,
    pub d_minus: f64,
    /// Branch following `u₀⁺` (the lower one when `|d⁺| > |d⁻|`).
    pub lambda_plus_branch: f64,
    pub lambda_minus_branch: f64,
    pub overlap_plus: f64,
    pub overlap_minus: f64,
    pub splitting: f64,
    /// Energy share of the plus branch in `x₁ < 1/8`.
    pub localization_plus: f64,
    /// Energy share of the minus branch in `x₁ > 7/8`.
    pub localization_minus: f64,
    pub stub_plus: f64,
    pub stub_minus: f64,
    /// `max_ℓ |λ_ℓ(Ω̃^ε) − λ_ℓ(Ω^ε)|` over the two tracked levels.
    pub tilde_difference: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubReport {
    pub plus_fit: RateFit,
    pub minus_fit: RateFit,
    /// `λ(D_ε⁺) < λ(D_ε⁻)` at every ε.
    pub ordering_holds: bool,
    /// `|λ(D_ε⁺) − λ(D_ε⁻)|` relative to λ₀, per ε.
    pub stub_differences: Vec<f64>,
    /// `|λ_ℓ(Ω̃^ε) − λ_ℓ(Ω^ε)| ≤ 0.1 × splitting` at every ε.
    pub tilde_close: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonantSweep {
    pub config: SweepConfig,
    pub points: Vec<ResonantPoint>,
    pub plus_fit: RateFit,
    pub minus_fit: RateFit,
    pub splitting_fit: RateFit,
    pub compliance: ComplianceResult,
    pub stub: StubReport,
    /// `|(prefactor⁺ + prefactor⁻) / (𝔠(d⁺² + d⁻²)) − 1|`.
    pub sum_consistency: f64,
    pub max_localization: f64,
}

fn chamber_solve(
    grid: &Grid,
    weight: &WeightSpec,
    chamber: Chamber,
    k: usize,
    opts: &EigenOptions,
) -> Result<EigenPair> {
    let w = weight.chamber_weight(chamber);
    let (mut p, _) = solve_pairs(grid, &w, k + 1, opts)?;
    Ok(p.swap_remove(k))
}

fn resonant_point(
    cfg: &SweepConfig,
    section: &Arc<SectionGeometry>,
    eps: f64,
) -> Result<(ResonantPoint, JunctionDerivative, JunctionDerivative)> {
    let omega = make_domain(DomainKind::Dumbbell, section.clone(), eps, cfg.truncation, cfg.dim)?;
    omega.check_weight(&cfg.weight)?;
    let res = cfg.resolution(eps);
    omega.check_resolution(res.h_fine)?;
    let build = |d: &DomainGeometry| build_grid(d, &res, Some(&cfg.weight));
    let g0 = build(&omega.with_kind(DomainKind::Disconnected)?)?;
    let g1 = build(&omega)?;
    let gs = build(&omega.with_kind(DomainKind::DisconnectedStubs)?)?;
    let k = cfg.k_bar;
    let opts = &cfg.eigen;

    let mut up = chamber_solve(&g0, &cfg.weight, Chamber::Plus, k, opts)?;
    let um_unit = chamber_solve(&g0, &cfg.weight, Chamber::Minus, k, opts)?;
    let calibration = um_unit.lambda / up.lambda;
    let mut weight = cfg.weight.clone();
    weight.scale_chamber(Chamber::Minus, calibration);
    let mut um = chamber_solve(&g0, &weight, Chamber::Minus, k, opts)?;
    let lambda0 = up.lambda;
    let resonance_mismatch = (um.lambda - lambda0).abs() / lambda0;
    if resonance_mismatch > 1e-8 {
        return Err(Error::Eigen(format!(
            "chamber spectra fail to coincide after calibration (relative mismatch {resonance_mismatch:.2e})"
        )));
    }
    let jp = normalize_sign(&mut up, &g0, Junction::E1)?;
    let jm = normalize_sign(&mut um, &g0, Junction::Origin)?;

    let (pairs, bd1) = solve_pairs(&g1, &weight, 2 * k + 3, opts)?;
    let u0p = g1.embed(&g0, &up.vector)?;
    let u0m = g1.embed(&g0, &um.vector)?;
    let (ip, op) = best_overlap(&pairs, &u0p, &bd1);
    let (im, om) = best_overlap(&pairs, &u0m, &bd1);
    if ip == im || op < cfg.overlap_threshold || om < cfg.overlap_threshold {
        return Err(Error::Eigen(format!(
            "eigenpair tracking ambiguous at ε = {eps} (overlaps {op:.3}, {om:.3}; indices {ip}, {im})"
        )));
    }
    let share = |u: &[f64], keep: &dyn Fn(f64) -> bool| {
        let all = g1.energy(u);
        let part = g1.energy_where(u, &|i| keep(g1.coords(i)[0]));
        part / all
    };
    let localization_plus = share(&pairs[ip].vector, &|x| x < 0.125);
    let localization_minus = share(&pairs[im].vector, &|x| x > 0.875);

    let stub_plus = chamber_solve(&gs, &weight, Chamber::Plus, k, opts)?.lambda;
    let stub_minus = chamber_solve(&gs, &weight, Chamber::Minus, k, opts)?.lambda;
    let (lp, lm) = (pairs[ip].lambda, pairs[im].lambda);
    let mut om_sorted = [lp, lm];
    om_sorted.sort_by(f64::total_cmp);
    let mut st_sorted = [stub_plus, stub_minus];
    st_sorted.sort_by(f64::total_cmp);
    let tilde_difference = (om_sorted[0] - st_sorted[0])
        .abs()
        .max((om_sorted[1] - st_sorted[1]).abs());
    Ok((
        ResonantPoint {
            eps,
            n_unknowns: g1.n_unknowns(),
            lambda0,
            calibration,
            resonance_mismatch,
            d_plus: jp.magnitude,
            d_minus: jm.magnitude,
            lambda_plus_branch: lp,
            lambda_minus_branch: lm,
            overlap_plus: op,
            overlap_minus: om,
            splitting: lm - lp,
            localization_plus,
            localization_minus,
            stub_plus,
            stub_minus,
            tilde_difference,
        },
        jp,
        jm,
    ))
}

fn run_resonant(
    cfg: &SweepConfig,
    require_asymmetry: bool,
) -> Result<(Vec<ResonantPoint>, Prediction, Prediction, ComplianceResult)> {
    cfg.validate()?;
    if cfg.mode != SweepMode::Resonant {
        return Err(Error::Precondition("resonant runs need mode = resonant".into()));
    }
    let section = Arc::new(make_section(&cfg.section)?);
    if !section.is_admissible() {
        return Err(Error::Precondition("the section is not asymptotics-admissible".into()));
    }
    // asymmetry is checked on the coarsest grid before the sweep
    let (probe, _, _) = resonant_probe(cfg, &section, cfg.eps[0])?;
    if require_asymmetry && !(probe.0 > probe.1 * (1.0 + cfg.asymmetry_tol)) {
        return Err(Error::Precondition(format!(
            "asymmetry violated: |∂u₀⁺/∂x₁(e₁)| = {:.6} does not exceed |∂u₀⁻/∂x₁(0)| = {:.6} by {}",
            probe.0, probe.1, cfg.asymmetry_tol
        )));
    }
    let (comp, c_err, _) = predicted_compliance(&section, &cfg.compliance).map_err(|e| e.in_stage("compliance"))?;
    let solved: Vec<Result<_>> = cfg.eps.par_iter().map(|&e| resonant_point(cfg, &section, e)).collect();
    let solved: Vec<_> = solved.into_iter().collect::<Result<_>>()?;
    let hs: Vec<f64> = cfg.eps.iter().map(|e| cfg.resolution(*e).h_fine).collect();
    let dp: Vec<f64> = solved.iter().map(|s| s.1.magnitude).collect();
    let dm: Vec<f64> = solved.iter().map(|s| s.2.magnitude).collect();
    let (dp, dp_err) = extrapolate_derivative(&hs, &dp);
    let (dm, dm_err) = extrapolate_derivative(&hs, &dm);
    let c = comp.value();
    let pp = Prediction::new(dp, dp_err, c, c_err, comp.flux.extrapolated);
    let pm = Prediction::new(dm, dm_err, c, c_err, comp.flux.extrapolated);
    Ok((solved.into_iter().map(|s| s.0).collect(), pp, pm, comp))
}

/// Junction derivatives `(|d⁺|, |d⁻|)` of the calibrated chamber modes at one ε.
fn resonant_probe(cfg: &SweepConfig, section: &Arc<SectionGeometry>, eps: f64) -> Result<((f64, f64), f64, f64)> {
    let omega = make_domain(DomainKind::Disconnected, section.clone(), eps, cfg.truncation, cfg.dim)?;
    let res = cfg.resolution(eps);
    let g0 = build_grid(&omega, &res, Some(&cfg.weight))?;
    let mut up = chamber_solve(&g0, &cfg.weight, Chamber::Plus, cfg.k_bar, &cfg.eigen)?;
    let mut um = chamber_solve(&g0, &cfg.weight, Chamber::Minus, cfg.k_bar, &cfg.eigen)?;
    let a = um.lambda / up.lambda;
    let jp = normalize_sign(&mut up, &g0, Junction::E1)?;
    let jm = normalize_sign(&mut um, &g0, Junction::Origin)?;
    // calibrated minus weight a·p⁻ rescales the B-normalized mode by 1/√a
    Ok(((jp.magnitude, jm.magnitude / a.sqrt()), up.lambda, a))
}

fn stub_report(points: &[ResonantPoint], pp: Prediction, pm: Prediction, n: f64) -> Result<StubReport> {
    let plus_fit = fit_rate(
        &points
            .iter()
            .map(|p| RatePoint {
                eps: p.eps,
                value: p.lambda0 - p.stub_plus,
            })
            .collect::<Vec<_>>(),
        n,
        Some(pp),
    )?;
    let minus_fit = fit_rate(
        &points
            .iter()
            .map(|p| RatePoint {
                eps: p.eps,
                value: p.lambda0 - p.stub_minus,
            })
            .collect::<Vec<_>>(),
        n,
        Some(pm),
    )?;
    Ok(StubReport {
        plus_fit,
        minus_fit,
        ordering_holds: points.iter().all(|p| p.stub_plus < p.stub_minus),
        stub_differences: points
            .iter()
            .map(|p| (p.stub_plus - p.stub_minus).abs() / p.lambda0)
            .collect(),
        tilde_close: points.iter().all(|p| p.tilde_difference <= 0.1 * p.splitting.abs()),
    })
}

/// Splitting and localization in the resonant case.
pub fn resonant_sweep(cfg: &SweepConfig) -> Result<ResonantSweep> {
    let (points, pp, pm, comp) = run_resonant(cfg, true)?;
    let n = cfg.dim as f64;
    let plus_fit = fit_rate(
        &points
            .iter()
            .map(|p| RatePoint {
                eps: p.eps,
                value: p.lambda0 - p.lambda_plus_branch,
            })
            .collect::<Vec<_>>(),
        n,
        Some(pp),
    )?;
    let minus_fit = fit_rate(
        &points
            .iter()
            .map(|p| RatePoint {
                eps: p.eps,
                value: p.lambda0 - p.lambda_minus_branch,
            })
            .collect::<Vec<_>>(),
        n,
        Some(pm),
    )?;
    let c = pp.compliance;
    let split_pred = Prediction {
        value: pp.value - pm.value,
        sphere_value: pp.sphere_value - pm.sphere_value,
        rel_error: (pp.value * pp.rel_error + pm.value * pm.rel_error) / (pp.value - pm.value),
        ..pp
    };
    let splitting_fit = fit_rate(
        &points
            .iter()
            .map(|p| RatePoint {
                eps: p.eps,
                value: p.splitting,
            })
            .collect::<Vec<_>>(),
        n,
        Some(split_pred),
    )?;
    let sum_consistency = ((plus_fit.prefactor + minus_fit.prefactor)
        / (c * (pp.junction_derivative.powi(2) + pm.junction_derivative.powi(2)))
        - 1.0)
        .abs();
    let max_localization = points
        .iter()
        .map(|p| p.localization_plus.max(p.localization_minus))
        .fold(0.0, f64::max);
    let stub = stub_report(&points, pp, pm, n)?;
    Ok(ResonantSweep {
        config: cfg.clone(),
        points,
        plus_fit,
        minus_fit,
        splitting_fit,
        compliance: comp,
        stub,
        sum_consistency,
        max_localization,
    })
}

/// Stub-domain laws and ordering; accepts symmetric configurations.
pub fn stub_gap_check(cfg: &SweepConfig) -> Result<StubReport> {
    let (points, pp, pm, _) = run_resonant(cfg, false)?;
    stub_report(&points, pp, pm, cfg.dim as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_fit() {
        let pts: Vec<RatePoint> = [0.2, 0.15, 0.1, 0.075]
            .iter()
            .map(|&e| RatePoint {
                eps: e,
                value: 0.7 * e * e * e,
            })
            .collect();
        let f = fit_rate(&pts, 3.0, None).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert!((f.prefactor - 0.7).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!((f.slope_without_largest.unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_short_or_negative() {
        let p = |e: f64, v: f64| RatePoint { eps: e, value: v };
        assert!(fit_rate(&[p(0.2, 1.0), p(0.1, 0.5)], 3.0, None).is_err());
        assert!(fit_rate(&[p(0.2, 1.0), p(0.1, -0.5), p(0.05, 0.1)], 3.0, None).is_err());
    }

    #[test]
    fn linear_remainder_extrapolates_exactly() {
        let pts: Vec<RatePoint> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&e| RatePoint {
                eps: e,
                value: e.powi(3) * (2.0 + 5.0 * e),
            })
            .collect();
        let f = fit_rate(&pts, 3.0, None).unwrap();
        assert!((f.prefactor - 2.0).abs() < 1e-10);
    }

    #[test]
    fn config_validation() {
        let mut c = SweepConfig::default();
        assert!(c.validate().is_ok());
        c.eps = vec![0.2, 0.1];
        assert!(c.validate().is_err());
        c.eps = vec![0.1, 0.2, 0.05];
        assert!(c.validate().is_err());
        c.eps = vec![1.5, 0.2, 0.1];
        assert!(c.validate().is_err());
    }

    #[test]
    fn derivative_extrapolation_is_exact_for_quadratic_error() {
        let hs = [0.02, 0.01];
        let ds = [1.0 + 3.0 * 0.0004, 1.0 + 3.0 * 0.0001];
        let (d, _) = extrapolate_derivative(&hs, &ds);
        assert!((d - 1.0).abs() < 1e-12);
    }
}
