//! Up-looking sparse Cholesky factorization (row-by-row, elimination-tree
//! driven) with an optional geometric nested-dissection ordering for
//! structured grids.

use super::{CsrMatrix, LinearSolver};
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Fill-reducing ordering applied before factorization.
#[derive(Debug, Clone)]
pub enum Ordering {
    Natural,
    /// Explicit permutation, `perm[new] = old`.
    Permutation(Vec<usize>),
}

/// Nested dissection of nodes with integer lattice coordinates whose
/// couplings only join lattice neighbours (5- or 7-point stencils).
///
/// Separators are full lattice lines/planes, so the two halves are never
/// coupled directly. Returns `perm[new] = old`.
pub fn nested_dissection(coords: &[[i64; 3]]) -> Vec<usize> {
    let mut perm = Vec::with_capacity(coords.len());
    let mut idx: Vec<usize> = (0..coords.len()).collect();
    dissect(coords, &mut idx, &mut perm);
    perm
}

fn dissect(coords: &[[i64; 3]], idx: &mut [usize], out: &mut Vec<usize>) {
    const LEAF: usize = 48;
    if idx.len() <= LEAF {
        out.extend_from_slice(idx);
        return;
    }
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for &i in idx.iter() {
        for d in 0..3 {
            lo[d] = lo[d].min(coords[i][d]);
            hi[d] = hi[d].max(coords[i][d]);
        }
    }
    let dim = (0..3).max_by_key(|&d| hi[d] - lo[d]).unwrap();
    if hi[dim] - lo[dim] < 2 {
        out.extend_from_slice(idx);
        return;
    }
    idx.sort_unstable_by_key(|&i| (coords[i][dim], i));
    let mut cut = coords[idx[idx.len() / 2]][dim];
    if cut == lo[dim] {
        cut += 1;
    } else if cut == hi[dim] {
        cut -= 1;
    }
    let a = idx.partition_point(|&i| coords[i][dim] < cut);
    let b = idx.partition_point(|&i| coords[i][dim] <= cut);
    let (left, rest) = idx.split_at_mut(a);
    let (sep, right) = rest.split_at_mut(b - a);
    dissect(coords, left, out);
    dissect(coords, right, out);
    out.extend_from_slice(sep);
}

/// `A = P L Lᵀ Pᵀ` with `L` stored column-compressed.
#[derive(Debug, Clone)]
pub struct CholeskySolver {
    n: usize,
    perm: Vec<usize>,
    colptr: Vec<usize>,
    rowind: Vec<u32>,
    values: Vec<f64>,
}

impl CholeskySolver {
    pub fn factor(a: &CsrMatrix, ordering: Ordering) -> Result<Self> {
        let n = a.dim();
        let perm = match ordering {
            Ordering::Natural => (0..n).collect(),
            Ordering::Permutation(p) => {
                if p.len() != n {
                    return Err(Error::Mismatch(format!(
                        "ordering has {} entries for a matrix of order {n}",
                        p.len()
                    )));
                }
                p
            }
        };
        let c = a.permute(&perm);
        let parent = etree(&c);

        // column counts from the row patterns
        let mut counts = vec![1usize; n];
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];
        for k in 0..n {
            let top = ereach(&c, k, &parent, &mut stack, &mut mark);
            for &j in &stack[top..] {
                counts[j] += 1;
            }
        }
        let mut colptr = vec![0usize; n + 1];
        for j in 0..n {
            colptr[j + 1] = colptr[j] + counts[j];
        }
        let nnz = colptr[n];
        if n > u32::MAX as usize {
            return Err(Error::Solver("matrix too large for 32-bit row indices".into()));
        }
        let mut rowind = vec![0u32; nnz];
        let mut values = vec![0.0f64; nnz];
        let mut next: Vec<usize> = colptr[..n].to_vec();
        let mut x = vec![0.0f64; n];
        mark.iter_mut().for_each(|m| *m = NONE);

        for k in 0..n {
            let top = ereach(&c, k, &parent, &mut stack, &mut mark);
            let mut d = 0.0;
            for (i, v) in c.row(k) {
                if i < k {
                    x[i] = v;
                } else if i == k {
                    d = v;
                }
            }
            for &i in &stack[top..] {
                let lki = x[i] / values[colptr[i]];
                x[i] = 0.0;
                for p in colptr[i] + 1..next[i] {
                    x[rowind[p] as usize] -= values[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                rowind[p] = k as u32;
                values[p] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Solver(format!(
                    "matrix not positive definite (pivot {d:e} at row {k})"
                )));
            }
            let p = next[k];
            next[k] += 1;
            rowind[p] = k as u32;
            values[p] = d.sqrt();
        }
        Ok(Self {
            n,
            perm,
            colptr,
            rowind,
            values,
        })
    }

    /// Factorization with nested dissection on lattice coordinates.
    pub fn factor_lattice(a: &CsrMatrix, coords: &[[i64; 3]]) -> Result<Self> {
        Self::factor(a, Ordering::Permutation(nested_dissection(coords)))
    }

    pub fn factor_nnz(&self) -> usize {
        self.values.len()
    }

    fn solve_permuted(&self, y: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            let (a, b) = (self.colptr[j], self.colptr[j + 1]);
            y[j] /= self.values[a];
            let yj = y[j];
            for p in a + 1..b {
                y[self.rowind[p] as usize] -= self.values[p] * yj;
            }
        }
        for j in (0..n).rev() {
            let (a, b) = (self.colptr[j], self.colptr[j + 1]);
            let mut s = y[j];
            for p in a + 1..b {
                s -= self.values[p] * y[self.rowind[p] as usize];
            }
            y[j] = s / self.values[a];
        }
    }
}

impl LinearSolver for CholeskySolver {
    fn dim(&self) -> usize {
        self.n
    }

    fn solve_into(&self, rhs: &[f64], out: &mut [f64]) -> Result<()> {
        if rhs.len() != self.n || out.len() != self.n {
            return Err(Error::Mismatch(format!(
                "rhs of length {} for a system of order {}",
                rhs.len(),
                self.n
            )));
        }
        let mut y: Vec<f64> = self.perm.iter().map(|&o| rhs[o]).collect();
        self.solve_permuted(&mut y);
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = y[new];
        }
        Ok(())
    }
}

/// Elimination tree of a symmetric matrix (uses the strictly lower part of each row).
fn etree(c: &CsrMatrix) -> Vec<usize> {
    let n = c.dim();
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for (mut i, _) in c.row(k) {
            while i != NONE && i < k {
                let inext = ancestor[i];
                ancestor[i] = k;
                if inext == NONE {
                    parent[i] = k;
                }
                i = inext;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L` (excluding the diagonal), written to
/// `stack[top..]` in topological order. `mark` holds the last row that
/// visited each node.
fn ereach(c: &CsrMatrix, k: usize, parent: &[usize], stack: &mut [usize], mark: &mut [usize]) -> usize {
    let n = c.dim();
    let mut top = n;
    mark[k] = k;
    let mut path = Vec::new();
    for (i, _) in c.row(k) {
        if i >= k {
            continue;
        }
        let mut j = i;
        path.clear();
        while mark[j] != k {
            path.push(j);
            mark[j] = k;
            j = parent[j];
            if j == NONE {
                break;
            }
        }
        for &p in path.iter().rev() {
            top -= 1;
            stack[top] = p;
        }
    }
    top
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_2d(nx: usize, ny: usize) -> (CsrMatrix, Vec<[i64; 3]>) {
        let id = |i: usize, j: usize| i * ny + j;
        let mut t = Vec::new();
        let mut coords = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                coords.push([i as i64, j as i64, 0]);
                t.push((id(i, j), id(i, j), 4.0));
                if i > 0 {
                    t.push((id(i, j), id(i - 1, j), -1.0));
                }
                if i + 1 < nx {
                    t.push((id(i, j), id(i + 1, j), -1.0));
                }
                if j > 0 {
                    t.push((id(i, j), id(i, j - 1), -1.0));
                }
                if j + 1 < ny {
                    t.push((id(i, j), id(i, j + 1), -1.0));
                }
            }
        }
        (CsrMatrix::from_triplets(nx * ny, &t).unwrap(), coords)
    }

    #[test]
    fn solves_grid_laplacian_both_orderings() {
        let (a, coords) = laplacian_2d(23, 17);
        let xs: Vec<f64> = (0..a.dim()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let b = a.matvec(&xs);
        for solver in [
            CholeskySolver::factor(&a, Ordering::Natural).unwrap(),
            CholeskySolver::factor_lattice(&a, &coords).unwrap(),
        ] {
            let x = solver.solve(&b).unwrap();
            let err = x.iter().zip(&xs).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "err {err}");
        }
    }

    #[test]
    fn nested_dissection_reduces_fill() {
        let (a, coords) = laplacian_2d(60, 60);
        let nat = CholeskySolver::factor(&a, Ordering::Natural).unwrap();
        let nd = CholeskySolver::factor_lattice(&a, &coords).unwrap();
        assert!(nd.factor_nnz() < nat.factor_nnz());
    }

    #[test]
    fn nested_dissection_is_a_permutation() {
        let (_, coords) = laplacian_2d(31, 9);
        let mut p = nested_dissection(&coords);
        p.sort_unstable();
        assert!(p.iter().enumerate().all(|(i, &v)| i == v));
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
        assert!(CholeskySolver::factor(&a, Ordering::Natural).is_err());
    }
}
