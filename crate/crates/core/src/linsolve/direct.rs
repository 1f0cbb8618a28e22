use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;

use crate::error::{AfemError, Result};
use crate::fespace::SparseSystem;
use crate::sparse::CsrMatrix;

const DENSE_LIMIT: usize = 64;

/// Dense Cholesky factor `L` (row-major, lower triangle).
#[derive(Clone, Debug)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn new(a: &[Vec<f64>]) -> Result<Self> {
        let n = a.len();
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j][j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(AfemError::NotSpd(format!(
                    "non-positive pivot {d:e} at row {j}"
                )));
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[i][j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(DenseCholesky { n, l })
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

fn dense_lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())
            .unwrap();
        if a[p][c].abs() <= 1e-14 * scale {
            return Err(AfemError::Singular(format!("zero pivot in column {c}")));
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            if f != 0.0 {
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    for c in (0..n).rev() {
        let mut s = b[c];
        for k in c + 1..n {
            s -= a[c][k] * b[k];
        }
        b[c] = s / a[c][c];
    }
    Ok(b)
}

/// Solves `A x = b` directly: dense elimination for tiny systems, sparse
/// Cholesky or LU otherwise.
pub fn solve_csr(a: &CsrMatrix, b: &[f64], symmetric: bool) -> Result<Vec<f64>> {
    let n = b.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n <= DENSE_LIMIT {
        let dense = a.to_dense();
        return if symmetric {
            let c = DenseCholesky::new(&dense)?;
            let mut x = b.to_vec();
            c.solve_in_place(&mut x);
            Ok(x)
        } else {
            dense_lu_solve(dense, b.to_vec())
        };
    }
    let mut trips = Vec::with_capacity(a.nnz());
    for i in 0..n {
        for (j, v) in a.row(i) {
            if !symmetric || j <= i {
                trips.push(Triplet::new(i, j, v));
            }
        }
    }
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
        .map_err(|e| AfemError::Singular(format!("{e:?}")))?;
    let rhs = faer::Col::<f64>::from_fn(n, |i| b[i]);
    let x = if symmetric {
        let llt = m
            .sp_cholesky(Side::Lower)
            .map_err(|e| AfemError::NotSpd(format!("{e:?}")))?;
        llt.solve(&rhs)
    } else {
        let lu = m
            .sp_lu()
            .map_err(|e| AfemError::Singular(format!("{e:?}")))?;
        lu.solve(&rhs)
    };
    let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(AfemError::Singular(
            "direct solve produced non-finite values".into(),
        ));
    }
    Ok(out)
}

/// Exact discrete solution on the free DOFs.
pub fn direct_solve(system: &SparseSystem) -> Result<Vec<f64>> {
    solve_csr(&system.matrix, &system.rhs, system.symmetric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0 - shift));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0 + shift));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn dense_and_sparse_paths_agree() {
        for n in [10, 200] {
            for (shift, sym) in [(0.0, true), (0.3, false)] {
                let a = laplace_1d(n, shift);
                let x0: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
                let b = a.mul_vec(&x0);
                let x = solve_csr(&a, &b, sym).unwrap();
                for (p, q) in x.iter().zip(&x0) {
                    assert!((p - q).abs() < 1e-9, "n={n} sym={sym}");
                }
            }
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -1.0)]);
        assert!(matches!(
            solve_csr(&a, &[1.0, 1.0], true),
            Err(AfemError::NotSpd(_))
        ));
    }
}
