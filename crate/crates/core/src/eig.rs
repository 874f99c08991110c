//! Weighted Dirichlet eigenproblems `A u = λ B u` and the cross-section
//! ground mode.
//!
//! The pencil is solved for the largest `μ = 1/λ` of `B u = μ A u`, i.e. the
//! top of the spectrum of `T = A⁻¹B`, which is self-adjoint in the
//! A-inner product. A thick-restart Lanczos iteration with full
//! reorthogonalization in that inner product works on `range(T)` only, so
//! the (large) null space of a compactly supported weight never enters.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::discretize::{assemble_stiffness, build_section_grid, Grid, Metric};
use crate::error::{Error, Result};
use crate::geometry::SectionGeometry;
use crate::linalg::{dot, Backend, CgOptions, CgSolver, CholeskySolver, CsrMatrix, LinearSolver, Ordering};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenOptions {
    /// Ritz residual target, relative to the Ritz value.
    pub tol: f64,
    /// Largest Krylov basis kept before a thick restart.
    pub max_basis: usize,
    pub max_restarts: usize,
    pub backend: Backend,
    /// Inner CG tolerance (CG backend only).
    pub cg_tol: f64,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: 1e-11,
            max_basis: 80,
            max_restarts: 60,
            backend: Backend::Direct,
            cg_tol: 1e-12,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenPair {
    pub lambda: f64,
    /// Normalized so that `uᵀBu = 1`.
    pub vector: Vec<f64>,
    /// `‖Au − λBu‖ / ‖Au‖`.
    pub residual: f64,
    /// Set when a sign normalization flipped the vector.
    #[serde(default)]
    pub flipped: bool,
}

/// Factorization or iterative solver for the stiffness matrix.
pub fn stiffness_solver(
    a: &CsrMatrix,
    lattice: Option<&[[i64; 3]]>,
    backend: Backend,
    cg_tol: f64,
) -> Result<Box<dyn LinearSolver>> {
    Ok(match backend {
        Backend::Direct => match lattice {
            Some(coords) => Box::new(CholeskySolver::factor_lattice(a, coords)?),
            None => Box::new(CholeskySolver::factor(a, Ordering::Natural)?),
        },
        Backend::Cg => Box::new(CgSolver::new(
            a.clone(),
            CgOptions {
                tol: cg_tol,
                ..CgOptions::default()
            },
        )?),
    })
}

/// Lowest `k` eigenpairs of `A u = λ B u` with `A` SPD and `B` symmetric PSD.
pub fn solve_pencil(a: &CsrMatrix, b: &CsrMatrix, k: usize, opts: &EigenOptions) -> Result<Vec<EigenPair>> {
    let solver = stiffness_solver(a, None, opts.backend, opts.cg_tol)?;
    solve_pencil_with(a, b, solver.as_ref(), k, opts)
}

/// As [`solve_pencil`], reusing a prepared `A⁻¹`.
pub fn solve_pencil_with(
    a: &CsrMatrix,
    b: &CsrMatrix,
    solver: &dyn LinearSolver,
    k: usize,
    opts: &EigenOptions,
) -> Result<Vec<EigenPair>> {
    let n = a.dim();
    if b.dim() != n || solver.dim() != n {
        return Err(Error::Mismatch("pencil operators differ in size".into()));
    }
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    if b.nnz() == 0 || b.diagonal().iter().all(|&d| d == 0.0) && b.is_diagonal() {
        return Err(Error::Eigen("weighted mass is identically zero".into()));
    }
    let mut lanczos = Lanczos {
        a,
        b,
        solver,
        v: Vec::new(),
        av: Vec::new(),
    };
    let ritz = lanczos.run(k, opts)?;
    ritz.into_iter()
        .map(|(mu, x)| {
            let lambda = 1.0 / mu;
            let s = 1.0 / dot(&x, &b.matvec(&x)).sqrt();
            let vector: Vec<f64> = x.iter().map(|v| v * s).collect();
            let residual = pencil_residual(a, b, lambda, &vector);
            Ok(EigenPair {
                lambda,
                vector,
                residual,
                flipped: false,
            })
        })
        .collect()
}

pub fn pencil_residual(a: &CsrMatrix, b: &CsrMatrix, lambda: f64, u: &[f64]) -> f64 {
    let au = a.matvec(u);
    let bu = b.matvec(u);
    let r: f64 = au.iter().zip(&bu).map(|(x, y)| (x - lambda * y).powi(2)).sum();
    (r / dot(&au, &au)).sqrt()
}

struct Lanczos<'a> {
    a: &'a CsrMatrix,
    b: &'a CsrMatrix,
    solver: &'a dyn LinearSolver,
    /// A-orthonormal basis and its image under A.
    v: Vec<Vec<f64>>,
    av: Vec<Vec<f64>>,
}

impl Lanczos<'_> {
    fn apply_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.solver.solve(&self.b.matvec(x))
    }

    /// A-orthogonalizes `w` against the basis (twice) and appends it; returns
    /// false when nothing is left.
    fn push(&mut self, mut w: Vec<f64>, scale: f64) -> bool {
        for _ in 0..2 {
            for (vi, avi) in self.v.iter().zip(&self.av) {
                let c = dot(avi, &w);
                for (wj, vj) in w.iter_mut().zip(vi) {
                    *wj -= c * vj;
                }
            }
        }
        let aw = self.a.matvec(&w);
        let nrm2 = dot(&aw, &w);
        if !(nrm2 > 0.0) || nrm2.sqrt() <= 1e-13 * scale {
            return false;
        }
        let s = 1.0 / nrm2.sqrt();
        self.v.push(w.iter().map(|x| x * s).collect());
        self.av.push(aw.iter().map(|x| x * s).collect());
        true
    }

    fn run(&mut self, k: usize, opts: &EigenOptions) -> Result<Vec<(f64, Vec<f64>)>> {
        let n = self.a.dim();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
        let m = opts.max_basis.max(2 * k + 8).min(n);
        let start: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = self.apply_t(&start)?;
        if !self.push(w, 1.0) {
            return Err(Error::Eigen("starting vector is annihilated by the weight".into()));
        }
        let mut next_from: Option<Vec<f64>> = None;
        for _restart in 0..=opts.max_restarts {
            // expand
            while self.v.len() < m {
                let src = next_from.take().unwrap_or_else(|| self.v[self.v.len() - 1].clone());
                let w = self.apply_t(&src)?;
                let scale = dot(&self.a.matvec(&w), &w).sqrt().max(1e-300);
                if !self.push(w, scale) {
                    // invariant subspace: continue from a fresh direction in range(T)
                    let fresh: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let w = self.apply_t(&fresh)?;
                    let scale = dot(&self.a.matvec(&w), &w).sqrt().max(1e-300);
                    if !self.push(w, scale) {
                        break;
                    }
                }
            }
            // Rayleigh-Ritz: H = Vᵀ B V
            let j = self.v.len();
            let bv: Vec<Vec<f64>> = self.v.iter().map(|x| self.b.matvec(x)).collect();
            let mut h = DMatrix::<f64>::zeros(j, j);
            for p in 0..j {
                for q in 0..=p {
                    let val = 0.5 * (dot(&self.v[p], &bv[q]) + dot(&self.v[q], &bv[p]));
                    h[(p, q)] = val;
                    h[(q, p)] = val;
                }
            }
            let eig = SymmetricEigen::new(h);
            let mut order: Vec<usize> = (0..j).collect();
            order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
            let want = k.min(j);
            let ritz: Vec<(f64, Vec<f64>)> = order
                .iter()
                .take((k + 6).min(j))
                .map(|&c| {
                    let y = eig.eigenvectors.column(c);
                    let mut x = vec![0.0; n];
                    for (p, vp) in self.v.iter().enumerate() {
                        let coef = y[p];
                        for (xi, vi) in x.iter_mut().zip(vp) {
                            *xi += coef * vi;
                        }
                    }
                    (eig.eigenvalues[c], x)
                })
                .collect();
            if ritz[0].0 <= 0.0 {
                return Err(Error::Eigen("weighted mass vanishes on the Krylov space".into()));
            }
            // residuals ‖Tx − θx‖_A
            let mut first_bad = None;
            for (i, (theta, x)) in ritz.iter().take(want).enumerate() {
                let tx = self.apply_t(x)?;
                let r: Vec<f64> = tx.iter().zip(x).map(|(t, xi)| t - theta * xi).collect();
                let rn = dot(&self.a.matvec(&r), &r).max(0.0).sqrt();
                if rn > opts.tol * theta.abs() {
                    first_bad = Some(r);
                    let _ = i;
                    break;
                }
            }
            match first_bad {
                None => {
                    if want < k {
                        return Err(Error::Eigen(format!(
                            "only {want} eigenvalues exist for the weight (asked for {k})"
                        )));
                    }
                    return Ok(ritz.into_iter().take(k).collect());
                }
                Some(r) => {
                    if j < m {
                        return Err(Error::Eigen("Lanczos stagnated: Krylov space exhausted".into()));
                    }
                    // thick restart on the leading Ritz vectors
                    let keep = (k + 6).min(j);
                    self.v.clear();
                    self.av.clear();
                    for (_, x) in ritz.iter().take(keep) {
                        let scale = dot(&self.a.matvec(x), x).sqrt();
                        self.push(x.clone(), scale);
                    }
                    next_from = Some(r);
                    // the residual itself is the next direction
                    let r = next_from.take().unwrap();
                    let scale = dot(&self.a.matvec(&r), &r).sqrt().max(1e-300);
                    if !self.push(r, scale) {
                        return Ok(ritz.into_iter().take(k).collect());
                    }
                }
            }
        }
        Err(Error::Eigen(format!(
            "Lanczos did not converge to tolerance {:e} within {} restarts",
            opts.tol, opts.max_restarts
        )))
    }
}

/// Dense reference solve (`n ≤ 2000`): Cholesky reduction of the pencil.
pub fn dense_oracle(a: &CsrMatrix, b: &CsrMatrix) -> Result<Vec<EigenPair>> {
    let n = a.dim();
    if n > 2000 {
        return Err(Error::Precondition(format!(
            "dense oracle limited to n ≤ 2000 (got {n})"
        )));
    }
    let ad = a.to_dense();
    let bd = b.to_dense();
    let chol = ad
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Solver("stiffness matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Solver("singular Cholesky factor".into()))?;
    let mut c = &linv * &bd * linv.transpose();
    c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let mu_max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut out = Vec::new();
    for c in order {
        let mu = eig.eigenvalues[c];
        if mu <= 1e-13 * mu_max {
            break;
        }
        let y = eig.eigenvectors.column(c).into_owned();
        let x = linv.transpose() * y;
        let s = 1.0 / mu.sqrt();
        let vector: Vec<f64> = x.iter().map(|v| v * s).collect();
        let lambda = 1.0 / mu;
        let residual = pencil_residual(a, b, lambda, &vector);
        out.push(EigenPair {
            lambda,
            vector,
            residual,
            flipped: false,
        });
    }
    Ok(out)
}

/// `uᵀBv` for a diagonal `B`.
pub fn b_overlap(u: &[f64], v: &[f64], b_diag: &[f64]) -> f64 {
    u.iter().zip(v).zip(b_diag).map(|((x, y), w)| x * y * w).sum()
}

// ---------------------------------------------------------------------------
// cross-section

#[derive(Debug, Clone)]
pub struct CrossSectionMode {
    pub lambda1: f64,
    /// `L²(Σ)`-normalized, positive ground mode on the section grid.
    pub psi1: Vec<f64>,
    pub grid: Grid,
    pub positive: bool,
    pub residual: f64,
}

/// Smallest Dirichlet eigenvalue of `−Δ` on Σ.
pub fn section_ground_mode(section: &SectionGeometry, h: f64) -> Result<CrossSectionMode> {
    let cells = 2.0 * section.inner_radius() / h;
    if cells < 32.0 {
        return Err(Error::Resolution(format!(
            "section is resolved by {cells:.1} cells; need at least 32"
        )));
    }
    let grid = build_section_grid(section, h)?;
    let a = assemble_stiffness(&grid).matrix;
    let b = CsrMatrix::diagonal_matrix(&grid.volumes());
    let solver = CholeskySolver::factor_lattice(&a, &grid.lattice())?;
    let opts = EigenOptions {
        tol: 1e-10,
        ..EigenOptions::default()
    };
    let mut pair = solve_pencil_with(&a, &b, &solver, 1, &opts)?.remove(0);
    if pair.vector.iter().sum::<f64>() < 0.0 {
        pair.vector.iter_mut().for_each(|v| *v = -*v);
    }
    let positive = pair.vector.iter().all(|&v| v > 0.0);
    Ok(CrossSectionMode {
        lambda1: pair.lambda,
        psi1: pair.vector,
        grid,
        positive,
        residual: pair.residual,
    })
}

// ---------------------------------------------------------------------------
// junction derivatives

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Junction {
    /// `e₁`, entrance of `D⁺`.
    E1,
    /// The origin, entrance of `D⁻`.
    Origin,
}

impl Junction {
    pub fn x1(self) -> f64 {
        match self {
            Junction::E1 => 1.0,
            Junction::Origin => 0.0,
        }
    }

    /// Sign of `∂u/∂x₁` at this junction for a positive chamber eigenfunction.
    pub fn reference_sign(self) -> f64 {
        match self {
            Junction::E1 => 1.0,
            Junction::Origin => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JunctionDerivative {
    pub junction: Junction,
    /// `|∂u/∂x₁|` at the junction.
    pub magnitude: f64,
    /// `∂u/∂x₁` of the field as given.
    pub raw: f64,
    /// The field had to be negated to carry the reference sign.
    pub flipped: bool,
}

impl JunctionDerivative {
    /// Derivative with the reference sign (`> 0` at `e₁`, `< 0` at `0`).
    pub fn signed(&self) -> f64 {
        self.junction.reference_sign() * self.magnitude
    }
}

/// One-sided second-order difference of `u` along `x₁` at the junction
/// point, for a field vanishing on the chamber wall through that point.
pub fn junction_normal_derivative(field: &[f64], grid: &Grid, junction: Junction) -> Result<JunctionDerivative> {
    let ax = &grid.axes()[0];
    let x0 = junction.x1();
    let i0 = ax
        .nodes
        .iter()
        .position(|&x| x == x0)
        .ok_or_else(|| Error::Precondition("junction plane is not a grid line".into()))?;
    let dir: i64 = match junction {
        Junction::E1 => 1,
        Junction::Origin => -1,
    };
    let at = |i: i64, j: usize, k: usize| -> Result<Option<f64>> {
        if i < 0 || i as usize >= ax.len() {
            return Err(Error::Precondition("junction stencil leaves the grid".into()));
        }
        Ok(grid.unknown_at([i as usize, j, k]).map(|u| field[u]))
    };
    // derivative along a grid line (j, k) through the wall
    let line = |j: usize, k: usize| -> Result<f64> {
        if at(i0 as i64, j, k)?.is_some() {
            return Err(Error::Precondition(
                "junction point is interior to this domain; use the limit-domain field".into(),
            ));
        }
        let i1 = i0 as i64 + dir;
        let i2 = i0 as i64 + 2 * dir;
        let u1 = at(i1, j, k)?.ok_or_else(|| Error::Precondition("junction stencil leaves the domain".into()))?;
        let u2 = at(i2, j, k)?.ok_or_else(|| Error::Precondition("junction stencil leaves the domain".into()))?;
        let t1 = (ax.nodes[i1 as usize] - x0).abs();
        let t2 = (ax.nodes[i2 as usize] - x0).abs();
        let dt = (u1 * t2 * t2 - u2 * t1 * t1) / (t1 * t2 * (t2 - t1));
        Ok(dt * dir as f64)
    };
    let axes = grid.axes();
    let raw = match grid.metric() {
        Metric::Axisym => {
            let (s0, s1) = (axes[1].nodes[0], axes[1].nodes[1]);
            let (d0, d1) = (line(0, 0)?, line(1, 0)?);
            (d0 * s1 * s1 - d1 * s0 * s0) / (s1 * s1 - s0 * s0)
        }
        Metric::CartesianQuarter => {
            let (y0, y1) = (axes[1].nodes[0], axes[1].nodes[1]);
            let (z0, z1) = (axes[2].nodes[0], axes[2].nodes[1]);
            let d00 = line(0, 0)?;
            let by = (line(1, 0)? - d00) / (y1 * y1 - y0 * y0);
            let bz = (line(0, 1)? - d00) / (z1 * z1 - z0 * z0);
            d00 - by * y0 * y0 - bz * z0 * z0
        }
        Metric::Cartesian => {
            let j = axes[1]
                .nodes
                .iter()
                .position(|&y| y == 0.0)
                .ok_or_else(|| Error::Precondition("no grid line on the axis".into()))?;
            let k = axes[2]
                .nodes
                .iter()
                .position(|&z| z == 0.0)
                .ok_or_else(|| Error::Precondition("no grid line on the axis".into()))?;
            line(j, k)?
        }
        Metric::Planar => return Err(Error::Precondition("planar grids have no junction".into())),
    };
    Ok(JunctionDerivative {
        junction,
        magnitude: raw.abs(),
        raw,
        flipped: raw * junction.reference_sign() < 0.0,
    })
}

/// Negates the pair when needed so that its junction derivative carries the
/// reference sign; idempotent.
pub fn normalize_sign(pair: &mut EigenPair, grid: &Grid, junction: Junction) -> Result<JunctionDerivative> {
    let d = junction_normal_derivative(&pair.vector, grid, junction)?;
    if d.flipped {
        pair.vector.iter_mut().for_each(|v| *v = -*v);
        pair.flipped = !pair.flipped;
    }
    Ok(JunctionDerivative {
        raw: d.signed(),
        flipped: d.flipped,
        ..d
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_section, SectionShape};
    use std::f64::consts::PI;

    fn lap1d(n: usize, h: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 / (h * h)));
            if i + 1 < n {
                t.push((i, i + 1, -1.0 / (h * h)));
                t.push((i + 1, i, -1.0 / (h * h)));
            }
        }
        CsrMatrix::from_triplets(n, &t).unwrap()
    }

    #[test]
    fn interval_pencil_matches_closed_form() {
        let n = 99;
        let h = 1.0 / (n + 1) as f64;
        let a = lap1d(n, h);
        let b = CsrMatrix::identity(n);
        let pairs = solve_pencil(&a, &b, 4, &EigenOptions::default()).unwrap();
        for (k, p) in pairs.iter().enumerate() {
            let exact = 2.0 * (1.0 - ((k + 1) as f64 * PI * h).cos()) / (h * h);
            assert!((p.lambda - exact).abs() / exact < 1e-10, "{} {}", p.lambda, exact);
            assert!(p.residual < 1e-8);
        }
        let dense = dense_oracle(&a, &b).unwrap();
        let mut lam: Vec<f64> = dense.iter().map(|p| p.lambda).collect();
        lam.sort_by(f64::total_cmp);
        for (k, p) in pairs.iter().enumerate() {
            assert!((p.lambda - lam[k]).abs() / lam[k] < 1e-10);
        }
    }

    #[test]
    fn b_equal_a_gives_unit_eigenvalues() {
        let a = lap1d(30, 0.1);
        let pairs = solve_pencil(&a, &a, 3, &EigenOptions::default()).unwrap();
        for p in pairs {
            assert!((p.lambda - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_one_weight() {
        let n = 40;
        let a = lap1d(n, 0.05);
        let i = 13;
        let bval = 0.7;
        let mut d = vec![0.0; n];
        d[i] = bval;
        let b = CsrMatrix::diagonal_matrix(&d);
        let pairs = solve_pencil(&a, &b, 1, &EigenOptions::default()).unwrap();
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let x = CholeskySolver::factor(&a, Ordering::Natural)
            .unwrap()
            .solve(&e)
            .unwrap();
        let expected = 1.0 / (x[i] * bval);
        assert!((pairs[0].lambda - expected).abs() / expected < 1e-12);
        assert!(solve_pencil(&a, &b, 2, &EigenOptions::default()).is_err());
    }

    #[test]
    fn dense_oracle_small_cases() {
        let a = CsrMatrix::identity(2);
        let b = CsrMatrix::diagonal_matrix(&[1.0, 2.0]);
        let mut lam: Vec<f64> = dense_oracle(&a, &b).unwrap().iter().map(|p| p.lambda).collect();
        lam.sort_by(f64::total_cmp);
        assert!((lam[0] - 0.5).abs() < 1e-14 && (lam[1] - 1.0).abs() < 1e-14);
        let zero = CsrMatrix::diagonal_matrix(&[0.0, 0.0]);
        assert!(solve_pencil(&a, &zero, 1, &EigenOptions::default()).is_err());
    }

    #[test]
    fn b_orthonormal_pairs() {
        let n = 60;
        let a = lap1d(n, 0.1);
        let d: Vec<f64> = (0..n)
            .map(|i| if i % 3 == 0 { 1.0 + i as f64 * 0.01 } else { 0.0 })
            .collect();
        let b = CsrMatrix::diagonal_matrix(&d);
        let pairs = solve_pencil(&a, &b, 5, &EigenOptions::default()).unwrap();
        for (i, p) in pairs.iter().enumerate() {
            for (j, q) in pairs.iter().enumerate() {
                let o = b_overlap(&p.vector, &q.vector, &d);
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((o - target).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn square_section_ground_mode() {
        let s = make_section(&SectionShape::square(1.0)).unwrap();
        let m = section_ground_mode(&s, 1.0 / 64.0).unwrap();
        let exact = 2.0 * PI * PI;
        assert!((m.lambda1 - exact).abs() / exact < 5e-3, "{}", m.lambda1);
        assert!(m.positive);
        let norm: f64 = m.psi1.iter().zip(m.grid.volumes()).map(|(v, w)| v * v * w).sum();
        assert!((norm - 1.0).abs() < 1e-8);
    }
}
