//! Thin helpers over `faer`: Hadamard products, a jittered Cholesky solver,
//! symmetric eigendecomposition and pivoted Cholesky.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

pub fn hadamard(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * b[(i, j)])
}

/// Elementwise product of any number of equally shaped matrices.
pub fn hadamard_all(mats: &[MatRef<'_, f64>]) -> Mat<f64> {
    let first = mats[0];
    let mut out = first.to_owned();
    for m in &mats[1..] {
        assert_eq!((m.nrows(), m.ncols()), (out.nrows(), out.ncols()));
        for j in 0..out.ncols() {
            for i in 0..out.nrows() {
                out[(i, j)] *= m[(i, j)];
            }
        }
    }
    out
}

/// `A ⊙ (1ₙ aᵀ)`: column `j` scaled by `a_j`.
pub fn scale_cols(m: MatRef<'_, f64>, a: &[f64]) -> Mat<f64> {
    assert_eq!(m.ncols(), a.len());
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * a[j])
}

/// `A ⊙ (b 1ₙᵀ)`: row `i` scaled by `b_i`.
pub fn scale_rows(m: MatRef<'_, f64>, b: &[f64]) -> Mat<f64> {
    assert_eq!(m.nrows(), b.len());
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * b[i])
}

pub fn matvec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let mut out = vec![0.0; a.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        let col = a.col(j);
        for (o, v) in out.iter_mut().zip(col.iter()) {
            *o += v * xj;
        }
    }
    out
}

/// `aᵀx`
pub fn tmatvec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.nrows(), x.len());
    (0..a.ncols())
        .map(|j| a.col(j).iter().zip(x).map(|(u, v)| u * v).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn row_means(a: MatRef<'_, f64>) -> Vec<f64> {
    let m = a.ncols() as f64;
    let mut out = vec![0.0; a.nrows()];
    for j in 0..a.ncols() {
        for (o, v) in out.iter_mut().zip(a.col(j).iter()) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= m);
    out
}

pub fn col_to_mat(x: &[f64]) -> Mat<f64> {
    Mat::from_fn(x.len(), 1, |i, _| x[i])
}

pub fn mat_col(a: MatRef<'_, f64>, j: usize) -> Vec<f64> {
    a.col(j).iter().copied().collect()
}

pub fn trace(a: MatRef<'_, f64>) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

pub fn add_diag(a: &mut Mat<f64>, v: f64) {
    for i in 0..a.nrows().min(a.ncols()) {
        a[(i, i)] += v;
    }
}

/// Cholesky factor of a symmetric positive definite matrix.
///
/// On failure `1e-10 * trace / n` is added to the diagonal and the
/// factorization retried once.
pub struct Chol {
    llt: faer::linalg::solvers::Llt<f64>,
    n: usize,
    jittered: bool,
}

impl Chol {
    pub fn new(a: MatRef<'_, f64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::Input(format!("cholesky of non-square {}x{}", n, a.ncols())));
        }
        if (0..n).any(|i| (0..n).any(|j| !a[(i, j)].is_finite())) {
            return Err(Error::Numeric("non-finite entry in system matrix".into()));
        }
        match a.llt(Side::Lower) {
            Ok(llt) => Ok(Self { llt, n, jittered: false }),
            Err(_) => {
                let jitter = 1e-10 * trace(a).abs() / n.max(1) as f64;
                let mut b = a.to_owned();
                add_diag(&mut b, jitter);
                match b.llt(Side::Lower) {
                    Ok(llt) => Ok(Self { llt, n, jittered: true }),
                    Err(_) => Err(Error::Numeric(format!(
                        "cholesky failed even after diagonal jitter {jitter:.3e}; the matrix is far from positive semidefinite, \
                         increase the ridge penalty or add jitter"
                    ))),
                }
            }
        }
    }

    /// Factor `k + shift * I`.
    pub fn shifted(k: MatRef<'_, f64>, shift: f64) -> Result<Self> {
        let mut a = k.to_owned();
        add_diag(&mut a, shift);
        Self::new(a.as_ref())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn jittered(&self) -> bool {
        self.jittered
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = col_to_mat(b);
        self.llt.solve_in_place(x.as_mut());
        mat_col(x.as_ref(), 0)
    }

    pub fn solve_mat(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        assert_eq!(b.nrows(), self.n);
        self.llt.solve(b)
    }
}

/// Symmetric eigendecomposition, eigenvalues ascending.
pub fn sym_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numeric(format!("eigendecomposition failed: {e:?}")))?;
    let vals = evd.S().column_vector().iter().copied().collect();
    Ok((vals, evd.U().to_owned()))
}

/// Greedy pivoted Cholesky: returns `L` (n×r) with `a ≈ L Lᵀ`, stopping when
/// the largest remaining diagonal falls below `tol * trace(a)`.
pub fn pivoted_cholesky(a: MatRef<'_, f64>, tol: f64) -> Mat<f64> {
    let n = a.nrows();
    let mut diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let stop = tol * diag.iter().map(|d| d.max(0.0)).sum::<f64>();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut used = vec![false; n];
    while cols.len() < n {
        let (p, &dp) = diag
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .max_by(|x, y| x.1.total_cmp(y.1))
            .unwrap();
        if dp <= stop || dp <= 0.0 {
            break;
        }
        used[p] = true;
        let s = dp.sqrt();
        let mut col = vec![0.0; n];
        for i in 0..n {
            if used[i] && i != p {
                continue;
            }
            let mut v = a[(i, p)];
            for c in &cols {
                v -= c[i] * c[p];
            }
            col[i] = v / s;
        }
        col[p] = s;
        for i in 0..n {
            if !used[i] {
                diag[i] -= col[i] * col[i];
            }
        }
        diag[p] = 0.0;
        cols.push(col);
    }
    Mat::from_fn(n, cols.len(), |i, j| cols[j][i])
}
