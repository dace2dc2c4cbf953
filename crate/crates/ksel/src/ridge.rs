//! Kernel ridge solves and closed-form leave-one-out tuning of ridge penalties.

use faer::{Mat, MatRef};

use crate::error::{config, input, Error, Result};
use crate::linalg::{dot, sym_eigen, Chol};

#[derive(Clone, Debug)]
pub struct RidgeWeights {
    pub alpha: Vec<f64>,
    pub lambda: f64,
    pub n: usize,
}

impl RidgeWeights {
    /// `k_qᵀ alpha` for a query cross-Gram column.
    pub fn predict(&self, k_q: &[f64]) -> f64 {
        dot(k_q, &self.alpha)
    }
}

fn check_square(k: MatRef<'_, f64>, y_len: usize) -> Result<usize> {
    let n = k.nrows();
    if k.ncols() != n {
        return input(format!("Gram matrix must be square, got {}x{}", n, k.ncols()));
    }
    if y_len != n {
        return input(format!("target length {y_len} differs from Gram size {n}"));
    }
    if n == 0 {
        return input("empty Gram matrix");
    }
    Ok(n)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return config(format!("ridge penalty must be positive and finite, got {lambda}"));
    }
    Ok(())
}

/// `alpha = (K + nλI)⁻¹ y`.
pub fn ridge_solve(k: MatRef<'_, f64>, y: &[f64], lambda: f64) -> Result<RidgeWeights> {
    let n = check_square(k, y.len())?;
    check_lambda(lambda)?;
    let chol = Chol::shifted(k, n as f64 * lambda)?;
    Ok(RidgeWeights { alpha: chol.solve_vec(y), lambda, n })
}

/// Sorted, strictly increasing, positive penalty grid.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return config("lambda grid is empty");
        }
        if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return config("lambda grid values must be positive and finite");
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return config("lambda grid must be strictly increasing");
        }
        Ok(Self { values })
    }

    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !(lo > 0.0) || !(hi >= lo) {
            return config("log-spaced grid needs 0 < lo <= hi and count >= 1");
        }
        if count == 1 {
            return Self::new(vec![lo]);
        }
        let (a, b) = (lo.ln(), hi.ln());
        let step = (b - a) / (count - 1) as f64;
        Self::new((0..count).map(|i| (a + step * i as f64).exp()).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Default for LambdaGrid {
    /// 20 log-spaced values in `[1e-8, 1e2]`.
    fn default() -> Self {
        Self::log_spaced(1e-8, 1e2, 20).expect("valid default grid")
    }
}

/// `(1/n)‖diag(H)⁻¹ H y‖²` with `H = I − K(K + nλI)⁻¹ = nλ(K + nλI)⁻¹`.
pub fn loocv_loss(k: MatRef<'_, f64>, y: &[f64], lambda: f64) -> Result<f64> {
    let n = check_square(k, y.len())?;
    check_lambda(lambda)?;
    let nl = n as f64 * lambda;
    let chol = Chol::shifted(k, nl)?;
    let inv = chol.solve_mat(Mat::<f64>::identity(n, n).as_ref());
    let hy = chol.solve_vec(y);
    let mut loss = 0.0;
    for i in 0..n {
        let hii = nl * inv[(i, i)];
        if !(hii.abs() > f64::MIN_POSITIVE) || !hii.is_finite() {
            return Err(Error::Numeric(format!(
                "LOOCV hat diagonal vanishes at row {i}; lambda too small or duplicated rows"
            )));
        }
        let r = nl * hy[i] / hii;
        loss += r * r;
    }
    Ok(loss / n as f64)
}

/// Eigendecomposition of a Gram shared across a penalty path.
pub struct SpectralPath {
    vals: Vec<f64>,
    vecs: Mat<f64>,
    n: usize,
}

impl SpectralPath {
    pub fn new(k: MatRef<'_, f64>) -> Result<Self> {
        let n = check_square(k, k.nrows())?;
        let (vals, vecs) = sym_eigen(k)?;
        Ok(Self { vals, vecs, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Diagonal of `H` and the spectral filter `nλ/(e_k + nλ)`.
    fn filter(&self, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let nl = self.n as f64 * lambda;
        let f: Vec<f64> = self.vals.iter().map(|&e| nl / (e + nl)).collect();
        if f.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Numeric(format!("penalty {lambda:e} does not dominate negative eigenvalues")));
        }
        let mut h = vec![0.0; self.n];
        for k in 0..self.n {
            let fk = f[k];
            for (hi, u) in h.iter_mut().zip(self.vecs.col(k).iter()) {
                *hi += u * u * fk;
            }
        }
        if let Some(i) = h.iter().position(|v| !(*v > f64::MIN_POSITIVE)) {
            return Err(Error::Numeric(format!("LOOCV hat diagonal vanishes at row {i}")));
        }
        Ok((h, f))
    }

    /// Same value as [`loocv_loss`] at O(n²) per penalty.
    pub fn loocv_loss(&self, y: &[f64], lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        let (h, f) = self.filter(lambda)?;
        let uty = crate::linalg::tmatvec(self.vecs.as_ref(), y);
        let scaled: Vec<f64> = uty.iter().zip(&f).map(|(a, b)| a * b).collect();
        let hy = crate::linalg::matvec(self.vecs.as_ref(), &scaled);
        Ok(hy.iter().zip(&h).map(|(r, d)| (r / d) * (r / d)).sum::<f64>() / self.n as f64)
    }

    /// Trace-form loss for a vector-valued regression whose target Gram is
    /// `L Lᵀ`: `(1/n) Σ_i [H L Lᵀ H]_ii / H_ii²`.
    pub fn embedding_loss(&self, utl: MatRef<'_, f64>, lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        let (h, f) = self.filter(lambda)?;
        let scaled = Mat::from_fn(utl.nrows(), utl.ncols(), |k, j| utl[(k, j)] * f[k]);
        let hl = self.vecs.as_ref() * scaled.as_ref();
        let mut loss = 0.0;
        for i in 0..self.n {
            let mut r = 0.0;
            for j in 0..hl.ncols() {
                r += hl[(i, j)] * hl[(i, j)];
            }
            loss += r / (h[i] * h[i]);
        }
        Ok(loss / self.n as f64)
    }

    /// `Uᵀ L` for a target factor `L`.
    pub fn project(&self, l: MatRef<'_, f64>) -> Mat<f64> {
        self.vecs.transpose() * l
    }
}

/// Pick the loss minimiser, preferring the larger penalty on ties.
pub(crate) fn argmin_prefer_large(grid: &LambdaGrid, mut loss: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &lam in grid.values() {
        let l = match loss(lam) {
            Ok(v) if v.is_finite() => v,
            _ => continue,
        };
        match best {
            Some((_, bl)) if l > bl * (1.0 + 1e-12) + f64::MIN_POSITIVE => {}
            _ => best = Some((lam, l)),
        }
    }
    match best {
        Some((lam, _)) => Ok(lam),
        None => config("every penalty in the grid failed numerically"),
    }
}

/// Grid value minimising the closed-form LOOCV loss; ties go to the larger value.
pub fn tune_lambda(k: MatRef<'_, f64>, y: &[f64], grid: &LambdaGrid) -> Result<f64> {
    check_square(k, y.len())?;
    if grid.values().len() == 1 {
        return Ok(grid.values()[0]);
    }
    let path = SpectralPath::new(k)?;
    argmin_prefer_large(grid, |lam| path.loocv_loss(y, lam))
}
