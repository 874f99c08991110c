//! Sparse linear algebra used by the discretized problems: a compressed-row
//! symmetric matrix, a nested-dissection sparse Cholesky factorization and a
//! Jacobi-preconditioned conjugate gradient solver behind a common trait.

mod cg;
mod cholesky;
mod csr;

pub use cg::{CgOptions, CgSolver};
pub use cholesky::{nested_dissection, CholeskySolver, Ordering};
pub use csr::CsrMatrix;

use crate::error::Result;

/// Something that can apply `A^{-1}` for a fixed SPD matrix `A`.
pub trait LinearSolver: Send + Sync {
    fn dim(&self) -> usize;
    fn solve_into(&self, rhs: &[f64], out: &mut [f64]) -> Result<()>;

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; rhs.len()];
        self.solve_into(rhs, &mut out)?;
        Ok(out)
    }
}

/// Which inner solver backs `A^{-1}` applications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Sparse Cholesky with nested-dissection ordering.
    Direct,
    /// Jacobi-preconditioned conjugate gradient.
    Cg,
}

impl Backend {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "direct" | "cholesky" => Some(Backend::Direct),
            "cg" => Some(Backend::Cg),
            _ => None,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
