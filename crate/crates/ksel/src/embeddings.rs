//! Empirical mean embeddings as weight vectors over training samples.
//!
//! An embedding of variable `A` is `Σ_i w_i φ(A_i)`; evaluating it against a
//! cross-Gram column is a dot product with `w`.

use faer::{Mat, MatRef};

use crate::data::{column, Dataset};
use crate::error::{input, Error, Result};
use crate::kernels::{gram, gram_column, Kernels};
use crate::linalg::{hadamard, pivoted_cholesky, Chol};
use crate::penalty::{Penalty, PenaltyConfig, Resolution};
use crate::ridge::{argmin_prefer_large, LambdaGrid, SpectralPath};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingRole {
    X,
    M,
    XMPair,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingWeights {
    pub weights: Vec<f64>,
    pub role: EmbeddingRole,
}

impl EmbeddingWeights {
    /// `Σ_i w_i k(A_i, a)` given the column `k(A_i, a)`.
    pub fn evaluate(&self, k_col: &[f64]) -> f64 {
        crate::linalg::dot(&self.weights, k_col)
    }
}

pub fn unconditional_weights(n: usize) -> Result<EmbeddingWeights> {
    if n == 0 {
        return input("unconditional embedding of an empty sample");
    }
    Ok(EmbeddingWeights { weights: vec![1.0 / n as f64; n], role: EmbeddingRole::X })
}

/// `(K_BB + nλI)⁻¹ k_Bb`.
pub fn conditional_weights(k_bb: MatRef<'_, f64>, lambda: f64, k_bb_col: &[f64]) -> Result<EmbeddingWeights> {
    let emb = ConditionalEmbedding::new(k_bb, lambda)?;
    if k_bb_col.len() != emb.n {
        return input(format!("query column has length {}, expected {}", k_bb_col.len(), emb.n));
    }
    Ok(EmbeddingWeights { weights: emb.weights(k_bb_col), role: EmbeddingRole::X })
}

/// One factorization of `K_BB + nλI`, shared across queries.
pub struct ConditionalEmbedding {
    chol: Chol,
    n: usize,
    lambda: f64,
}

impl ConditionalEmbedding {
    pub fn new(k_bb: MatRef<'_, f64>, lambda: f64) -> Result<Self> {
        let n = k_bb.nrows();
        if n == 0 || k_bb.ncols() != n {
            return input("conditioning Gram must be square and nonempty");
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("embedding penalty must be positive, got {lambda}")));
        }
        Ok(Self { chol: Chol::shifted(k_bb, n as f64 * lambda)?, n, lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn weights(&self, k_bb_col: &[f64]) -> Vec<f64> {
        self.chol.solve_vec(k_bb_col)
    }

    /// Weights for many queries at once, one column per query.
    pub fn weights_mat(&self, cols: MatRef<'_, f64>) -> Mat<f64> {
        self.chol.solve_mat(cols)
    }
}

/// Trace-form LOOCV loss of the vector-valued regression of `φ(A)` on `B`:
/// `(1/n) Σ_i [H K_AA H]_ii / H_ii²` with `H = nλ(K_BB + nλI)⁻¹`.
pub fn embedding_loocv_loss(k_bb: MatRef<'_, f64>, k_target: MatRef<'_, f64>, lambda: f64) -> Result<f64> {
    let n = k_bb.nrows();
    if k_target.nrows() != n || k_target.ncols() != n {
        return input("target Gram must match the conditioning Gram");
    }
    let nl = n as f64 * lambda;
    let chol = Chol::shifted(k_bb, nl)?;
    let mut h = chol.solve_mat(Mat::<f64>::identity(n, n).as_ref());
    for j in 0..n {
        for i in 0..n {
            h[(i, j)] *= nl;
        }
    }
    let hk = h.as_ref() * k_target;
    let mut loss = 0.0;
    for i in 0..n {
        let num: f64 = (0..n).map(|j| hk[(i, j)] * h[(i, j)]).sum();
        let hii = h[(i, i)];
        if !(hii > f64::MIN_POSITIVE) {
            return Err(Error::Numeric(format!("LOOCV hat diagonal vanishes at row {i}")));
        }
        loss += num / (hii * hii);
    }
    Ok(loss / n as f64)
}

/// Grid minimiser of [`embedding_loocv_loss`], evaluated through one
/// eigendecomposition of `K_BB` and a pivoted Cholesky factor of the target.
pub fn tune_embedding_lambda(k_bb: MatRef<'_, f64>, k_target: MatRef<'_, f64>, grid: &LambdaGrid) -> Result<f64> {
    if grid.values().len() == 1 {
        return Ok(grid.values()[0]);
    }
    let path = SpectralPath::new(k_bb)?;
    let l = pivoted_cholesky(k_target, 1e-12);
    let utl = path.project(l.as_ref());
    argmin_prefer_large(grid, |lam| path.embedding_loss(utl.as_ref(), lam))
}

/// Penalty for an embedding regression under a penalty configuration.
pub fn embedding_penalty(
    cfg: &PenaltyConfig,
    p: Penalty,
    k_bb: MatRef<'_, f64>,
    k_target: MatRef<'_, f64>,
) -> Result<f64> {
    match cfg.resolve(p, k_bb.nrows()) {
        Resolution::Value(v) => Ok(v),
        Resolution::Tune(grid) => tune_embedding_lambda(k_bb, k_target, &grid),
    }
}

/// `β(d,x) = (K_DD⊙K_XX + nλ₄I)⁻¹(K_Dd⊙K_Xx)`, the weights of the embedding of
/// `M` given `(D, X) = (d, x)`.
pub fn sequential_pair_weights(
    data: &Dataset,
    kernels: &Kernels,
    d: f64,
    x: &[f64],
    lambda4: f64,
) -> Result<EmbeddingWeights> {
    if data.m().is_none() {
        return input("sequential embedding needs the follow-up covariate M");
    }
    let dc = column(data.d());
    let k_dd = gram(&kernels.d, dc.as_ref(), dc.as_ref())?;
    let k_xx = gram(&kernels.x, data.x(), data.x())?;
    let k_bb = hadamard(k_dd.as_ref(), k_xx.as_ref());
    let kd = gram_column(&kernels.d, dc.as_ref(), &[d])?;
    let kx = gram_column(&kernels.x, data.x(), x)?;
    let q: Vec<f64> = kd.iter().zip(&kx).map(|(a, b)| a * b).collect();
    let emb = ConditionalEmbedding::new(k_bb.as_ref(), lambda4)?;
    Ok(EmbeddingWeights { weights: emb.weights(&q), role: EmbeddingRole::XMPair })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram_1d, KernelConfig, KernelSpec};
    use crate::linalg::{dot, matvec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g(l: f64) -> KernelSpec {
        KernelSpec::gaussian(vec![l]).unwrap()
    }

    #[test]
    fn unconditional_examples() {
        assert_eq!(unconditional_weights(1).unwrap().weights, vec![1.0]);
        assert_eq!(unconditional_weights(4).unwrap().weights, vec![0.25; 4]);
        for n in [3, 7, 10] {
            let s: f64 = unconditional_weights(n).unwrap().weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(unconditional_weights(0).is_err());
    }

    #[test]
    fn conditional_scalar_example() {
        let k = Mat::from_fn(1, 1, |_, _| 1.0);
        let w = conditional_weights(k.as_ref(), 1.0, &[1.0]).unwrap();
        assert!((w.weights[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_atom_indicator_recovers_stratum_means() {
        // B in {0,1}, each n/2 times; A arbitrary
        let n = 10;
        let b: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let a: Vec<f64> = (0..n).map(|i| i as f64 * 0.3).collect();
        let kb = gram_1d(&KernelSpec::indicator(1).unwrap(), &b, &b).unwrap();
        let lambda = 1e-6;
        let col = crate::linalg::mat_col(gram_1d(&KernelSpec::indicator(1).unwrap(), &b, &[1.0]).unwrap().as_ref(), 0);
        let w = conditional_weights(kb.as_ref(), lambda, &col).unwrap();
        for (i, wi) in w.weights.iter().enumerate() {
            let target = if b[i] == 1.0 { 2.0 / n as f64 } else { 0.0 };
            assert!((wi - target).abs() < 1e-4);
        }
        let probe = 0.9;
        let ka = crate::linalg::mat_col(gram_1d(&g(1.0), &a, &[probe]).unwrap().as_ref(), 0);
        let within: f64 = (0..n).filter(|i| b[*i] == 1.0).map(|i| ka[i]).sum::<f64>() / (n / 2) as f64;
        // block algebra: weights are exactly 1/(n/2 + nλ) on the matching atom;
        // the system has condition number ~ n/(2nλ), so allow ~1e-9
        let exact = 1.0 / (n as f64 / 2.0 + n as f64 * lambda);
        for (i, wi) in w.weights.iter().enumerate() {
            if b[i] == 1.0 {
                assert!((wi - exact).abs() < 1e-9, "{wi} {exact}");
            }
        }
        assert!((w.evaluate(&ka) - within).abs() < 10.0 * lambda);
    }

    #[test]
    fn near_interpolation_at_training_point() {
        let b = [-1.0, -0.3, 0.4, 1.2];
        let a = [0.5, -0.7, 1.1, 0.2];
        let kb = gram_1d(&g(0.5), &b, &b).unwrap();
        let col = crate::linalg::mat_col(kb.as_ref(), 2);
        let w = conditional_weights(kb.as_ref(), 1e-9, &col).unwrap();
        let probe = 0.3;
        let ka = crate::linalg::mat_col(gram_1d(&g(1.0), &a, &[probe]).unwrap().as_ref(), 0);
        let direct = (-(a[2] - probe) * (a[2] - probe) / 2.0f64).exp();
        assert!((w.evaluate(&ka) - direct).abs() < 1e-4);
    }

    /// Refit the vector-valued regression without row i and measure the
    /// feature-space residual at i.
    fn naive_embedding_loocv(kb: MatRef<'_, f64>, kt: MatRef<'_, f64>, lambda: f64) -> f64 {
        let n = kb.nrows();
        let nl = n as f64 * lambda;
        let mut loss = 0.0;
        for i in 0..n {
            let idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let mut sub = Mat::from_fn(n - 1, n - 1, |a, b| kb[(idx[a], idx[b])]);
            for a in 0..n - 1 {
                sub[(a, a)] += nl;
            }
            let rhs: Vec<f64> = idx.iter().map(|&j| kb[(j, i)]).collect();
            let w = Chol::new(sub.as_ref()).unwrap().solve_vec(&rhs);
            let kti: Vec<f64> = idx.iter().map(|&j| kt[(j, i)]).collect();
            let ktsub = Mat::from_fn(n - 1, n - 1, |a, b| kt[(idx[a], idx[b])]);
            loss += kt[(i, i)] - 2.0 * dot(&w, &kti) + dot(&w, &matvec(ktsub.as_ref(), &w));
        }
        loss / n as f64
    }

    #[test]
    fn sequential_matches_direct_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 15;
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m: Vec<f64> = (0..n).map(|i| d[i] + x[i] + rng.random_range(-0.2..0.2)).collect();
        let data = Dataset::new(vec![1.0; n], &vec![0.0; n], d.clone(), column(&x))
            .unwrap()
            .with_m(column(&m))
            .unwrap();
        let kern = KernelConfig::default().resolve(&data, 0).unwrap();
        let lam = 0.01;
        let beta = sequential_pair_weights(&data, &kern, 0.2, &[-0.1], lam).unwrap();
        let km = gram_1d(kern.m.as_ref().unwrap(), &m, &m).unwrap();
        let kd = gram_1d(&kern.d, &d, &d).unwrap();
        let kx = gram_1d(&kern.x, &x, &x).unwrap();
        let kdx = hadamard(kd.as_ref(), kx.as_ref());
        let kq: Vec<f64> = (0..n)
            .map(|i| eval(&kern.d, d[i], 0.2) * eval(&kern.x, x[i], -0.1))
            .collect();
        for t in 0..n {
            // regress k_M(M_i, M_t) on (D, X), predict at (0.2, -0.1)
            let y = crate::linalg::mat_col(km.as_ref(), t);
            let r = crate::ridge::ridge_solve(kdx.as_ref(), &y, lam).unwrap();
            let direct = r.predict(&kq);
            let via = beta.evaluate(&y);
            assert!((direct - via).abs() < 1e-10);
        }
        let again = sequential_pair_weights(&data, &kern, 0.2, &[-0.1], lam).unwrap();
        assert_eq!(again, beta);
        let no_m = Dataset::new(vec![1.0; n], &vec![0.0; n], d, column(&x)).unwrap();
        assert!(sequential_pair_weights(&no_m, &kern, 0.2, &[-0.1], lam).is_err());
    }

    fn eval(spec: &KernelSpec, a: f64, b: f64) -> f64 {
        crate::kernels::eval_kernel(spec, &[a], &[b]).unwrap()
    }

    #[test]
    fn sequential_single_point() {
        let data = Dataset::new(vec![1.0], &[0.0], vec![0.3], column(&[0.1]))
            .unwrap()
            .with_m(column(&[0.5]))
            .unwrap();
        let kern = Kernels {
            s: KernelSpec::indicator(1).unwrap(),
            d: g(1.0),
            x: g(1.0),
            m: Some(g(1.0)),
            v: None,
        };
        let w = sequential_pair_weights(&data, &kern, 0.0, &[0.0], 0.5).unwrap();
        let kq = eval(&kern.d, 0.3, 0.0) * eval(&kern.x, 0.1, 0.0);
        let expected = conditional_weights(Mat::from_fn(1, 1, |_, _| 1.0).as_ref(), 0.5, &[kq]).unwrap();
        assert!((w.weights[0] - expected.weights[0]).abs() < 1e-15);
    }

    #[test]
    fn sequential_permutation_equivariant() {
        let n = 8;
        let d: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).cos()).collect();
        let m: Vec<f64> = (0..n).map(|i| d[i] - x[i]).collect();
        let build = |perm: &[usize]| {
            Dataset::new(
                vec![1.0; n],
                &vec![0.0; n],
                perm.iter().map(|&i| d[i]).collect(),
                column(&perm.iter().map(|&i| x[i]).collect::<Vec<_>>()),
            )
            .unwrap()
            .with_m(column(&perm.iter().map(|&i| m[i]).collect::<Vec<_>>()))
            .unwrap()
        };
        let kern = Kernels { s: KernelSpec::indicator(1).unwrap(), d: g(0.8), x: g(0.6), m: Some(g(1.0)), v: None };
        let id: Vec<usize> = (0..n).collect();
        let perm = vec![3, 1, 7, 0, 5, 2, 6, 4];
        let a = sequential_pair_weights(&build(&id), &kern, 0.1, &[0.2], 0.05).unwrap();
        let b = sequential_pair_weights(&build(&perm), &kern, 0.1, &[0.2], 0.05).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            assert!((b.weights[k] - a.weights[p]).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn embedding_loss_matches_refit(seed in 0u64..10_000, n in 3usize..20, loglam in -4.0f64..0.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let kb = gram_1d(&g(0.7), &b, &b).unwrap();
            let kt = gram_1d(&g(0.9), &a, &a).unwrap();
            let lam = 10f64.powf(loglam);
            let closed = embedding_loocv_loss(kb.as_ref(), kt.as_ref(), lam).unwrap();
            let naive = naive_embedding_loocv(kb.as_ref(), kt.as_ref(), lam);
            prop_assert!((closed - naive).abs() <= 1e-8 * (1.0 + naive), "{} {}", closed, naive);
            let path = SpectralPath::new(kb.as_ref()).unwrap();
            let l = pivoted_cholesky(kt.as_ref(), 1e-14);
            let fast = path.embedding_loss(path.project(l.as_ref()).as_ref(), lam).unwrap();
            prop_assert!((closed - fast).abs() <= 1e-7 * (1.0 + closed), "{} {}", closed, fast);
        }

        #[test]
        fn evaluation_is_linear(w1 in proptest::collection::vec(-1.0f64..1.0, 6),
                                w2 in proptest::collection::vec(-1.0f64..1.0, 6),
                                k in proptest::collection::vec(0.0f64..1.0, 6),
                                c1 in -2.0f64..2.0, c2 in -2.0f64..2.0) {
            let e = |w: Vec<f64>| EmbeddingWeights { weights: w, role: EmbeddingRole::X }.evaluate(&k);
            let comb: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| c1 * a + c2 * b).collect();
            let lhs = e(comb);
            let rhs = c1 * e(w1.clone()) + c2 * e(w2.clone());
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn tuning_picks_grid_minimiser() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40;
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a: Vec<f64> = b.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        let kb = gram_1d(&g(0.5), &b, &b).unwrap();
        let kt = gram_1d(&g(0.5), &a, &a).unwrap();
        let grid = LambdaGrid::log_spaced(1e-6, 1.0, 7).unwrap();
        let pick = tune_embedding_lambda(kb.as_ref(), kt.as_ref(), &grid).unwrap();
        let losses: Vec<f64> = grid.values().iter().map(|&l| embedding_loocv_loss(kb.as_ref(), kt.as_ref(), l).unwrap()).collect();
        let best = grid.values()[losses.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).unwrap().0];
        assert_eq!(pick, best);
    }
}
