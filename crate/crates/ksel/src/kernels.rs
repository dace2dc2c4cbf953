//! Kernel functions, Gram matrices, derivative columns and lengthscale heuristics.

use faer::{Mat, MatRef};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{column, Dataset};
use crate::error::{config, input, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelFamily {
    Gaussian,
    Indicator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    lengthscales: Vec<f64>,
    dim: usize,
}

impl KernelSpec {
    /// Product of scalar gaussians, one lengthscale per input dimension.
    pub fn gaussian(lengthscales: Vec<f64>) -> Result<Self> {
        if lengthscales.is_empty() {
            return config("gaussian kernel needs at least one lengthscale");
        }
        if let Some((j, l)) = lengthscales.iter().enumerate().find(|(_, l)| !(**l > 0.0 && l.is_finite())) {
            return config(format!("lengthscale {j} must be positive and finite, got {l}"));
        }
        let dim = lengthscales.len();
        Ok(Self { family: KernelFamily::Gaussian, lengthscales, dim })
    }

    pub fn indicator(dim: usize) -> Result<Self> {
        if dim == 0 {
            return config("indicator kernel needs dim >= 1");
        }
        Ok(Self { family: KernelFamily::Indicator, lengthscales: Vec::new(), dim })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn validate(&self) -> Result<()> {
        match self.family {
            KernelFamily::Gaussian => {
                if self.lengthscales.len() != self.dim {
                    return config("gaussian kernel lengthscale count differs from dim");
                }
                if self.lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return config("gaussian lengthscales must be positive");
                }
            }
            KernelFamily::Indicator => {
                if self.dim == 0 {
                    return config("indicator kernel needs dim >= 1");
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn eval_unchecked(&self, mut w: impl Iterator<Item = f64>, w2: impl Iterator<Item = f64>) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let mut e = 0.0;
                for ((a, b), l) in w.zip(w2).zip(&self.lengthscales) {
                    let t = (a - b) / l;
                    e += t * t;
                }
                (-0.5 * e).exp()
            }
            KernelFamily::Indicator => {
                let mut w2 = w2;
                if w.all(|a| Some(a) == w2.next()) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn eval_kernel(spec: &KernelSpec, w: &[f64], w2: &[f64]) -> Result<f64> {
    spec.validate()?;
    if w.len() != spec.dim || w2.len() != spec.dim {
        return input(format!(
            "kernel of dim {} evaluated on points of dim {} and {}",
            spec.dim,
            w.len(),
            w2.len()
        ));
    }
    Ok(spec.eval_unchecked(w.iter().copied(), w2.iter().copied()))
}

/// `K[i, j] = k(A_i, B_j)`.
pub fn gram(spec: &KernelSpec, a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<Mat<f64>> {
    spec.validate()?;
    if a.ncols() != spec.dim || b.ncols() != spec.dim {
        return input(format!(
            "kernel of dim {} applied to inputs with {} and {} columns",
            spec.dim,
            a.ncols(),
            b.ncols()
        ));
    }
    if spec.dim == 1 {
        let av: Vec<f64> = a.col(0).iter().copied().collect();
        let bv: Vec<f64> = b.col(0).iter().copied().collect();
        return Ok(match spec.family {
            KernelFamily::Gaussian => {
                let c = -0.5 / (spec.lengthscales[0] * spec.lengthscales[0]);
                Mat::from_fn(av.len(), bv.len(), |i, j| {
                    let t = av[i] - bv[j];
                    (c * t * t).exp()
                })
            }
            KernelFamily::Indicator => {
                Mat::from_fn(av.len(), bv.len(), |i, j| if av[i] == bv[j] { 1.0 } else { 0.0 })
            }
        });
    }
    Ok(Mat::from_fn(a.nrows(), b.nrows(), |i, j| {
        spec.eval_unchecked(a.row(i).iter().copied(), b.row(j).iter().copied())
    }))
}

/// Gram between scalar point sets.
pub fn gram_1d(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<Mat<f64>> {
    gram(spec, column(a).as_ref(), column(b).as_ref())
}

/// `k(A_i, w)` for every row of `a`.
pub fn gram_column(spec: &KernelSpec, a: MatRef<'_, f64>, w: &[f64]) -> Result<Vec<f64>> {
    let b = Mat::from_fn(1, w.len(), |_, j| w[j]);
    let g = gram(spec, a, b.as_ref())?;
    Ok(g.col(0).iter().copied().collect())
}

/// `∂k(D_i, d)/∂d` for a one-dimensional gaussian kernel.
pub fn grad_gram_column(spec: &KernelSpec, d_points: &[f64], d: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.family != KernelFamily::Gaussian {
        return Err(Error::Unsupported("the indicator kernel has no derivative".into()));
    }
    if spec.dim != 1 {
        return input("derivative columns need a one-dimensional treatment kernel");
    }
    let l2 = spec.lengthscales[0] * spec.lengthscales[0];
    Ok(d_points
        .iter()
        .map(|&di| {
            let t = di - d;
            (t / l2) * (-0.5 * t * t / l2).exp()
        })
        .collect())
}

/// Derivative Gram, column `j` is `grad_gram_column(spec, d_points, grid[j])`.
pub fn grad_gram(spec: &KernelSpec, d_points: &[f64], grid: &[f64]) -> Result<Mat<f64>> {
    let cols: Vec<Vec<f64>> = grid
        .iter()
        .map(|&g| grad_gram_column(spec, d_points, g))
        .collect::<Result<_>>()?;
    Ok(Mat::from_fn(d_points.len(), grid.len(), |i, j| cols[j][i]))
}

const MEDIAN_SUBSAMPLE: usize = 5000;

fn median(v: &mut [f64]) -> f64 {
    let k = v.len();
    let mid = k / 2;
    let (lo, hi, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let hi = *hi;
    if k % 2 == 1 {
        hi
    } else {
        let lo = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Per-dimension median interpoint distance over all pairs `i < j`.
///
/// Zero distances count. If they make up half of the pairs or more while the
/// dimension is not constant, the median of the nonzero distances is used
/// instead. Above 5000 points a uniform subsample of 5000 is drawn with `seed`.
pub fn median_heuristic(points: MatRef<'_, f64>, seed: u64) -> Result<Vec<f64>> {
    let n = points.nrows();
    if n < 2 {
        return input("median heuristic needs at least two points");
    }
    let rows: Vec<usize> = if n > MEDIAN_SUBSAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, MEDIAN_SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let mut out = Vec::with_capacity(points.ncols());
    for j in 0..points.ncols() {
        let vals: Vec<f64> = rows.iter().map(|&i| points[(i, j)]).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return input(format!("dimension {j} contains non-finite values"));
        }
        if vals.iter().all(|&v| v == vals[0]) {
            return config(format!("dimension {j} is constant; median heuristic undefined"));
        }
        let mut dists = Vec::with_capacity(vals.len() * (vals.len() - 1) / 2);
        for a in 0..vals.len() {
            for b in (a + 1)..vals.len() {
                dists.push((vals[a] - vals[b]).abs());
            }
        }
        let mut med = median(&mut dists);
        if med == 0.0 {
            let mut nz: Vec<f64> = dists.into_iter().filter(|&d| d > 0.0).collect();
            med = median(&mut nz);
        }
        out.push(med);
    }
    Ok(out)
}

/// How to pick the kernel for one variable role.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelChoice {
    /// Gaussian with median-heuristic lengthscales.
    Median,
    Gaussian(Vec<f64>),
    Indicator,
}

impl KernelChoice {
    pub fn resolve(&self, points: MatRef<'_, f64>, seed: u64) -> Result<KernelSpec> {
        match self {
            KernelChoice::Median => KernelSpec::gaussian(median_heuristic(points, seed)?),
            KernelChoice::Gaussian(l) => {
                let spec = KernelSpec::gaussian(l.clone())?;
                if spec.dim() != points.ncols() {
                    return input(format!(
                        "{} lengthscales given for {} columns",
                        spec.dim(),
                        points.ncols()
                    ));
                }
                Ok(spec)
            }
            KernelChoice::Indicator => KernelSpec::indicator(points.ncols()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelConfig {
    pub s: KernelChoice,
    pub d: KernelChoice,
    pub x: KernelChoice,
    pub m: KernelChoice,
    pub v: KernelChoice,
    pub y: KernelChoice,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            s: KernelChoice::Indicator,
            d: KernelChoice::Median,
            x: KernelChoice::Median,
            m: KernelChoice::Median,
            v: KernelChoice::Median,
            y: KernelChoice::Median,
        }
    }
}

impl KernelConfig {
    /// Indicator kernels on treatment and subcovariate, as inference requires.
    pub fn discrete_treatment() -> Self {
        Self { d: KernelChoice::Indicator, v: KernelChoice::Indicator, ..Self::default() }
    }

    pub fn resolve(&self, data: &Dataset, seed: u64) -> Result<Kernels> {
        let s = self.s.resolve(column(data.s()).as_ref(), seed)?;
        let d = self.d.resolve(column(data.d()).as_ref(), seed)?;
        let x = self.x.resolve(data.x(), seed)?;
        let m = data.m().map(|m| self.m.resolve(m, seed)).transpose()?;
        let v = data.v().map(|v| self.v.resolve(v, seed)).transpose()?;
        Ok(Kernels { s, d, x, m, v })
    }

    /// Outcome kernel, fitted on the selected outcomes only.
    pub fn resolve_y(&self, data: &Dataset, seed: u64) -> Result<KernelSpec> {
        let ys: Vec<f64> = data
            .s()
            .iter()
            .zip(data.sy())
            .filter(|(s, _)| **s == 1.0)
            .map(|(_, y)| *y)
            .collect();
        if ys.len() < 2 && self.y == KernelChoice::Median {
            return input("outcome kernel needs at least two selected outcomes");
        }
        if ys.is_empty() {
            return input("no selected outcomes");
        }
        self.y.resolve(column(&ys).as_ref(), seed)
    }
}

/// Resolved kernels for every role present in a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernels {
    pub s: KernelSpec,
    pub d: KernelSpec,
    pub x: KernelSpec,
    pub m: Option<KernelSpec>,
    pub v: Option<KernelSpec>,
}

/// Training Grams per variable role.
#[derive(Clone, Debug)]
pub struct GramSet {
    pub n: usize,
    pub s: Mat<f64>,
    pub d: Mat<f64>,
    pub x: Mat<f64>,
    pub m: Option<Mat<f64>>,
    pub v: Option<Mat<f64>>,
}

impl GramSet {
    pub fn build(data: &Dataset, k: &Kernels) -> Result<Self> {
        let sc = column(data.s());
        let dc = column(data.d());
        let m = match (data.m(), &k.m) {
            (Some(m), Some(spec)) => Some(gram(spec, m, m)?),
            _ => None,
        };
        let v = match (data.v(), &k.v) {
            (Some(v), Some(spec)) => Some(gram(spec, v, v)?),
            _ => None,
        };
        Ok(Self {
            n: data.n(),
            s: gram(&k.s, sc.as_ref(), sc.as_ref())?,
            d: gram(&k.d, dc.as_ref(), dc.as_ref())?,
            x: gram(&k.x, data.x(), data.x())?,
            m,
            v,
        })
    }
}

/// `k_S(S_i, 1)` for every row.
pub fn s1_column(s: &[f64], spec: &KernelSpec) -> Result<Vec<f64>> {
    gram_column(spec, column(s).as_ref(), &[1.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hadamard, sym_eigen};
    use proptest::prelude::*;

    fn g(l: f64) -> KernelSpec {
        KernelSpec::gaussian(vec![l]).unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(eval_kernel(&g(1.0), &[0.0], &[0.0]).unwrap(), 1.0);
        let v = eval_kernel(&g(2.0), &[0.0], &[2.0]).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.606531).abs() < 1e-6);
        let ind = KernelSpec::indicator(1).unwrap();
        assert_eq!(eval_kernel(&ind, &[1.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(eval_kernel(&ind, &[1.0], &[1.0]).unwrap(), 1.0);
        let ind2 = KernelSpec::indicator(2).unwrap();
        assert_eq!(eval_kernel(&ind2, &[1.0, 2.0], &[1.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn eval_errors() {
        assert!(matches!(eval_kernel(&g(1.0), &[0.0, 1.0], &[0.0]), Err(Error::Input(_))));
        assert!(matches!(KernelSpec::gaussian(vec![0.0]), Err(Error::Config(_))));
        assert!(matches!(KernelSpec::gaussian(vec![-1.0]), Err(Error::Config(_))));
        assert!(KernelSpec::indicator(0).is_err());
    }

    #[test]
    fn gram_examples() {
        let one = gram_1d(&g(1.0), &[0.0], &[0.0]).unwrap();
        assert_eq!(one[(0, 0)], 1.0);
        let k = gram_1d(&g(1.0), &[0.0, 1.0], &[0.0, 1.0]).unwrap();
        let e = (-0.5f64).exp();
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert!((k[(0, 1)] - e).abs() < 1e-15 && (k[(1, 0)] - e).abs() < 1e-15);
        let ind = gram_1d(&KernelSpec::indicator(1).unwrap(), &[0.0, 1.0], &[1.0]).unwrap();
        assert_eq!((ind[(0, 0)], ind[(1, 0)]), (0.0, 1.0));
    }

    #[test]
    fn gram_dimension_mismatch() {
        let a = Mat::<f64>::zeros(2, 2);
        assert!(matches!(gram(&g(1.0), a.as_ref(), a.as_ref()), Err(Error::Input(_))));
    }

    #[test]
    fn grad_examples() {
        assert_eq!(grad_gram_column(&g(1.0), &[0.0], 0.0).unwrap(), vec![0.0]);
        let v = grad_gram_column(&g(1.0), &[1.0], 0.0).unwrap()[0];
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.6065).abs() < 1e-4);
        let ind = KernelSpec::indicator(1).unwrap();
        assert!(matches!(grad_gram_column(&ind, &[1.0], 0.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_heuristic(column(&[0.0, 1.0, 3.0]).as_ref(), 0).unwrap(), vec![2.0]);
        assert_eq!(median_heuristic(column(&[0.0, 2.0]).as_ref(), 0).unwrap(), vec![2.0]);
        let err = median_heuristic(column(&[5.0, 5.0, 5.0]).as_ref(), 0).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("dimension 0")));
    }

    #[test]
    fn median_per_dimension() {
        let p = Mat::from_fn(3, 2, |i, j| if j == 0 { [0.0, 1.0, 3.0][i] } else { [0.0, 10.0, 20.0][i] });
        assert_eq!(median_heuristic(p.as_ref(), 0).unwrap(), vec![2.0, 10.0]);
        let q = Mat::from_fn(3, 2, |i, j| if j == 0 { i as f64 } else { 1.0 });
        let err = median_heuristic(q.as_ref(), 0).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("dimension 1")));
    }

    #[test]
    fn median_mostly_ties_falls_back_to_nonzero() {
        // six zero pairs, four pairs at distance 2
        let p = column(&[0.0, 0.0, 0.0, 0.0, 2.0]);
        assert_eq!(median_heuristic(p.as_ref(), 0).unwrap(), vec![2.0]);
    }

    #[test]
    fn median_even_pair_count_averages() {
        // pairs of {0,1,2,4}: 1,2,4,1,3,2 -> sorted 1,1,2,2,3,4
        assert_eq!(median_heuristic(column(&[0.0, 1.0, 2.0, 4.0]).as_ref(), 0).unwrap(), vec![2.0]);
        // pairs of {0,1,3,7}: 1,3,7,2,6,4 -> 1,2,3,4,6,7
        assert_eq!(median_heuristic(column(&[0.0, 1.0, 3.0, 7.0]).as_ref(), 0).unwrap(), vec![3.5]);
    }

    #[test]
    fn median_subsample_is_seeded() {
        let pts: Vec<f64> = (0..5200).map(|i| ((i * 7919) % 5200) as f64 / 100.0).collect();
        let a = median_heuristic(column(&pts).as_ref(), 3).unwrap();
        let b = median_heuristic(column(&pts).as_ref(), 3).unwrap();
        assert_eq!(a, b);
        // uniform on [0, 52): mean |U - U'| is 52/3, median about 15.2
        assert!(a[0] > 13.0 && a[0] < 17.5, "{a:?}");
    }

    fn pts(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gram_symmetric_bounded(a in pts(12), l in 0.1f64..3.0) {
            let k = gram_1d(&g(l), &a, &a).unwrap();
            for i in 0..12 {
                prop_assert_eq!(k[(i, i)], 1.0);
                for j in 0..12 {
                    prop_assert!((k[(i, j)] - k[(j, i)]).abs() <= 1e-12);
                    prop_assert!((0.0..=1.0).contains(&k[(i, j)]));
                }
            }
        }

        #[test]
        fn gram_psd(a in proptest::collection::vec(-3.0f64..3.0, 2..50), l in 0.1f64..3.0) {
            let k = gram_1d(&g(l), &a, &a).unwrap();
            let (vals, _) = sym_eigen(k.as_ref()).unwrap();
            prop_assert!(vals[0] >= -1e-8);
        }

        #[test]
        fn multivariate_gram_symmetric(a in proptest::collection::vec(-3.0f64..3.0, 30)) {
            let p = Mat::from_fn(10, 3, |i, j| a[3 * i + j]);
            let k = gram(&KernelSpec::gaussian(vec![0.5, 1.0, 2.0]).unwrap(), p.as_ref(), p.as_ref()).unwrap();
            for i in 0..10 { for j in 0..10 {
                prop_assert!((k[(i, j)] - k[(j, i)]).abs() <= 1e-12);
            }}
        }

        #[test]
        fn indicator_values_binary(a in proptest::collection::vec(0u8..3, 10)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let k = gram_1d(&KernelSpec::indicator(1).unwrap(), &a, &a).unwrap();
            for i in 0..10 { for j in 0..10 {
                prop_assert!(k[(i, j)] == 0.0 || k[(i, j)] == 1.0);
                prop_assert_eq!(k[(i, j)] == 1.0, a[i] == a[j]);
            }}
        }

        #[test]
        fn grad_matches_finite_difference(a in pts(8), d in -2.0f64..2.0, l in 0.3f64..3.0) {
            let spec = g(l);
            let h = 1e-5;
            let gcol = grad_gram_column(&spec, &a, d).unwrap();
            let up = gram_1d(&spec, &a, &[d + h]).unwrap();
            let dn = gram_1d(&spec, &a, &[d - h]).unwrap();
            for i in 0..8 {
                let fd = (up[(i, 0)] - dn[(i, 0)]) / (2.0 * h);
                prop_assert!((fd - gcol[i]).abs() <= 1e-6);
            }
        }

        #[test]
        fn product_kernel_is_hadamard(a in pts(10), b in pts(10), l1 in 0.2f64..2.0, l2 in 0.2f64..2.0) {
            let joint = Mat::from_fn(10, 2, |i, j| if j == 0 { a[i] } else { b[i] });
            let kj = gram(&KernelSpec::gaussian(vec![l1, l2]).unwrap(), joint.as_ref(), joint.as_ref()).unwrap();
            let ka = gram_1d(&g(l1), &a, &a).unwrap();
            let kb = gram_1d(&g(l2), &b, &b).unwrap();
            let h = hadamard(ka.as_ref(), kb.as_ref());
            for i in 0..10 { for j in 0..10 {
                prop_assert!((kj[(i, j)] - h[(i, j)]).abs() <= 1e-12);
            }}
        }
    }
}
