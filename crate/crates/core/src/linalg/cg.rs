use super::{axpy, dot, CsrMatrix, LinearSolver};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    /// Relative residual target `‖b - Ax‖ / ‖b‖`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

/// Conjugate gradient with diagonal (Jacobi) preconditioning.
#[derive(Debug, Clone)]
pub struct CgSolver {
    matrix: CsrMatrix,
    inv_diag: Vec<f64>,
    opts: CgOptions,
}

impl CgSolver {
    pub fn new(matrix: CsrMatrix, opts: CgOptions) -> Result<Self> {
        let inv_diag = matrix
            .diagonal()
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if d > 0.0 {
                    Ok(1.0 / d)
                } else {
                    Err(Error::Solver(format!("non-positive diagonal {d:e} at row {i}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { matrix, inv_diag, opts })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Solves starting from the contents of `x`; returns the iteration count.
    pub fn solve_from(&self, b: &[f64], x: &mut [f64]) -> Result<usize> {
        let n = self.matrix.dim();
        let bnorm = dot(b, b).sqrt();
        if bnorm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(0);
        }
        let mut r = self.matrix.matvec(x);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let mut z: Vec<f64> = r.iter().zip(&self.inv_diag).map(|(a, d)| a * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        for it in 0..self.opts.max_iter {
            if dot(&r, &r).sqrt() <= self.opts.tol * bnorm {
                return Ok(it);
            }
            self.matrix.matvec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Solver(format!("CG breakdown: pᵀAp = {pap:e} at iteration {it}")));
            }
            let alpha = rz / pap;
            axpy(alpha, &p, x);
            axpy(-alpha, &ap, &mut r);
            for i in 0..n {
                z[i] = r[i] * self.inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= self.opts.tol {
            Ok(self.opts.max_iter)
        } else {
            Err(Error::Solver(format!(
                "CG did not converge in {} iterations (relative residual {rel:e})",
                self.opts.max_iter
            )))
        }
    }
}

impl LinearSolver for CgSolver {
    fn dim(&self) -> usize {
        self.matrix.dim()
    }

    fn solve_into(&self, rhs: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.solve_from(rhs, out).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_matches_exact_solution() {
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + i as f64 * 0.01));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, &t).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = a.matvec(&xs);
        let s = CgSolver::new(
            a,
            CgOptions {
                tol: 1e-13,
                max_iter: 1000,
            },
        )
        .unwrap();
        let x = s.solve(&b).unwrap();
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let s = CgSolver::new(CsrMatrix::identity(3), CgOptions::default()).unwrap();
        assert_eq!(s.solve(&[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn indefinite_breaks_down() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]).unwrap();
        let s = CgSolver::new(a, CgOptions::default()).unwrap();
        assert!(s.solve(&[1.0, -1.0]).is_err());
    }
}
