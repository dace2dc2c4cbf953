//! Kernel ridge Riesz representers for the static moments.
//!
//! Each functional is `γ ↦ (1/ñ)Σ_j ω_j γ(w̃_j)` over counterfactual points
//! `w̃_j = (1, d, x_j[, v])`. The minimiser of
//! `(1/n)Σ α(W_i)² − 2(1/ñ)Σ_j ω_j α(w̃_j) + λ₃‖α‖²` is
//!
//! `α(w) = (1/(nλ₃)) [Σ_j c_j k(w̃_j, w) − rᵀk_W(w)]`,
//! `r = (K₁ + nλ₃I)⁻¹ K₂ c`, `c_j = (n/ñ)ω_j`,
//!
//! which needs one n×n factorization shared by every kind. [`RieszBlocks`]
//! assembles the equivalent block system over the stacked basis
//! `{φ(W_i)} ∪ {ω_j φ(w̃_j)}`.

use faer::{Mat, MatRef};

use crate::data::{column, Dataset, ShiftedSample};
use crate::error::{input, Error, Result};
use crate::kernels::{gram, s1_column, GramSet, Kernels};
use crate::linalg::{add_diag, dot, hadamard, hadamard_all, matvec, tmatvec, trace, Chol};
use crate::penalty::{Penalty, PenaltyConfig, Resolution, DEFAULT_RIESZ_SCALE};

/// Default clipping margin; the censoring bound is `1/ε²`.
pub const DEFAULT_EPS: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub enum RieszKind {
    Ate { d: f64 },
    Ds { d: f64 },
    /// numerator of ATT: `γ(1,d',X)1{D=d}`
    Att { d: f64, dprime: f64 },
    /// numerator of CATE: `γ(1,d,v,X)1{V=v}`
    Cate { d: f64, v: Vec<f64> },
}

impl RieszKind {
    pub fn needs_subgroup(&self) -> bool {
        matches!(self, RieszKind::Cate { .. })
    }
}

pub fn censor(value: f64, bound: f64) -> f64 {
    debug_assert!(bound > 0.0);
    value.clamp(-bound, bound)
}

/// Counterfactual points of a kind together with their weights `ω_j`.
#[derive(Clone, Debug)]
pub struct CounterfactualPoints {
    pub d: Vec<f64>,
    pub x: Mat<f64>,
    pub v: Option<Mat<f64>>,
    pub weights: Vec<f64>,
}

impl CounterfactualPoints {
    pub fn build(data: &Dataset, kind: &RieszKind, shifted: Option<&ShiftedSample>) -> Result<Self> {
        let n = data.n();
        let ones = vec![1.0; n];
        Ok(match kind {
            RieszKind::Ate { d } => Self { d: vec![*d; n], x: data.x().to_owned(), v: None, weights: ones },
            RieszKind::Ds { d } => {
                let sh = shifted.ok_or_else(|| Error::Input("DS needs a shifted sample".into()))?;
                if sh.is_empty() || sh.x.ncols() != data.x().ncols() {
                    return input("shifted covariates are empty or do not match the training layout");
                }
                Self { d: vec![*d; sh.len()], x: sh.x.clone(), v: None, weights: vec![1.0; sh.len()] }
            }
            RieszKind::Att { d, dprime } => Self {
                d: vec![*dprime; n],
                x: data.x().to_owned(),
                v: None,
                weights: data.d().iter().map(|&di| if di == *d { 1.0 } else { 0.0 }).collect(),
            },
            RieszKind::Cate { d, v } => {
                let vd = data.v().ok_or_else(|| Error::Input("CATE needs a subcovariate column V".into()))?;
                if v.len() != vd.ncols() {
                    return input("subgroup value does not match V");
                }
                let weights = (0..n).map(|i| if (0..v.len()).all(|c| vd[(i, c)] == v[c]) { 1.0 } else { 0.0 }).collect();
                Self {
                    d: vec![*d; n],
                    x: data.x().to_owned(),
                    v: Some(Mat::from_fn(n, v.len(), |_, c| v[c])),
                    weights,
                }
            }
        })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

/// Cross-Gram between training rows `W_i` and arbitrary points `(s, d, x[, v])`.
fn cross_gram(
    data: &Dataset,
    kernels: &Kernels,
    subgroup: bool,
    s: &[f64],
    d: &[f64],
    x: MatRef<'_, f64>,
    v: Option<MatRef<'_, f64>>,
) -> Result<Mat<f64>> {
    let ks = gram(&kernels.s, column(data.s()).as_ref(), column(s).as_ref())?;
    let kd = gram(&kernels.d, column(data.d()).as_ref(), column(d).as_ref())?;
    let kx = gram(&kernels.x, data.x(), x)?;
    let mut k = hadamard_all(&[ks.as_ref(), kd.as_ref(), kx.as_ref()]);
    if subgroup {
        let (spec, vt, vq) = match (kernels.v.as_ref(), data.v(), v) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return input("subgroup kernel, training V and query V are all required"),
        };
        k = hadamard(k.as_ref(), gram(spec, vt, vq)?.as_ref());
    }
    Ok(k)
}

/// Gram between two point sets with unit selection.
fn tilde_gram(kernels: &Kernels, a: &CounterfactualPoints, b: &CounterfactualPoints) -> Result<Mat<f64>> {
    let kd = gram(&kernels.d, column(&a.d).as_ref(), column(&b.d).as_ref())?;
    let kx = gram(&kernels.x, a.x.as_ref(), b.x.as_ref())?;
    let mut k = hadamard(kd.as_ref(), kx.as_ref());
    if let (Some(av), Some(bv)) = (a.v.as_ref(), b.v.as_ref()) {
        let kv = gram(kernels.v.as_ref().expect("subgroup kernel"), av.as_ref(), bv.as_ref())?;
        k = hadamard(k.as_ref(), kv.as_ref());
    }
    let k11 = s1_column(&[1.0], &kernels.s)?[0];
    for j in 0..k.ncols() {
        for i in 0..k.nrows() {
            k[(i, j)] *= k11;
        }
    }
    Ok(k)
}

/// `λ₃`: the configured value, or `10⁻³ · tr(K₁)/n` when no value is fixed.
pub fn riesz_lambda(cfg: &PenaltyConfig, k1: MatRef<'_, f64>) -> f64 {
    let n = k1.nrows();
    match cfg.resolve(Penalty::Riesz, n) {
        Resolution::Value(v) => v,
        Resolution::Tune(_) => DEFAULT_RIESZ_SCALE * trace(k1) / n as f64,
    }
}

/// Factorization of `K₁ + nλ₃I`, shared across kinds.
pub struct RieszSolver {
    data: Dataset,
    kernels: Kernels,
    subgroup: bool,
    lambda3: f64,
    chol: Chol,
}

impl RieszSolver {
    /// `subgroup` adds `K_VV` to `K₁`, which CATE requires.
    pub fn new(data: &Dataset, kernels: Kernels, cfg: &PenaltyConfig, subgroup: bool) -> Result<Self> {
        if subgroup && (data.v().is_none() || kernels.v.is_none()) {
            return input("CATE needs a subcovariate column V");
        }
        let grams = GramSet::build(data, &kernels)?;
        let mut parts = vec![grams.s.as_ref(), grams.d.as_ref(), grams.x.as_ref()];
        if subgroup {
            parts.push(grams.v.as_ref().unwrap().as_ref());
        }
        let k1 = hadamard_all(&parts);
        let lambda3 = riesz_lambda(cfg, k1.as_ref());
        if !(lambda3 > 0.0 && lambda3.is_finite()) {
            return Err(Error::Config(format!("Riesz penalty must be positive, got {lambda3}")));
        }
        let chol = Chol::shifted(k1.as_ref(), data.n() as f64 * lambda3)?;
        Ok(Self { data: data.clone(), kernels, subgroup, lambda3, chol })
    }

    pub fn lambda3(&self) -> f64 {
        self.lambda3
    }

    pub fn representer(&self, kind: &RieszKind, shifted: Option<&ShiftedSample>) -> Result<Representer> {
        if kind.needs_subgroup() != self.subgroup {
            return input("CATE representers need the subgroup solver and other kinds the plain one");
        }
        let pts = CounterfactualPoints::build(&self.data, kind, shifted)?;
        let n = self.data.n();
        let scale = n as f64 / pts.len() as f64;
        let c: Vec<f64> = pts.weights.iter().map(|w| w * scale).collect();
        let k2 = cross_gram(
            &self.data,
            &self.kernels,
            self.subgroup,
            &vec![1.0; pts.len()],
            &pts.d,
            pts.x.as_ref(),
            pts.v.as_ref().map(|v| v.as_ref()),
        )?;
        let r = self.chol.solve_vec(&matvec(k2.as_ref(), &c));
        Ok(Representer {
            data: self.data.clone(),
            kernels: self.kernels.clone(),
            subgroup: self.subgroup,
            lambda3: self.lambda3,
            points: pts,
            c,
            r,
        })
    }
}

/// A fitted representer `α̂`.
pub struct Representer {
    data: Dataset,
    kernels: Kernels,
    subgroup: bool,
    lambda3: f64,
    points: CounterfactualPoints,
    c: Vec<f64>,
    r: Vec<f64>,
}

impl Representer {
    pub fn lambda3(&self) -> f64 {
        self.lambda3
    }

    /// Uncensored `α̂` at every row of `query`.
    pub fn evaluate(&self, query: &Dataset) -> Result<Vec<f64>> {
        let n = self.data.n();
        let kw = cross_gram(&self.data, &self.kernels, self.subgroup, query.s(), query.d(), query.x(), query.v())?;
        let tq = CounterfactualPoints {
            d: query.d().to_vec(),
            x: query.x().to_owned(),
            v: if self.subgroup { query.v().map(|v| v.to_owned()) } else { None },
            weights: vec![],
        };
        let mut kt = tilde_gram(&self.kernels, &self.points, &tq)?;
        // k_S(1, s) for the query rows; tilde_gram used k_S(1,1)
        let k11 = s1_column(&[1.0], &self.kernels.s)?[0];
        let ks = s1_column(query.s(), &self.kernels.s)?;
        for j in 0..kt.ncols() {
            for i in 0..kt.nrows() {
                kt[(i, j)] *= ks[j] / k11;
            }
        }
        let a = tmatvec(kt.as_ref(), &self.c);
        let b = tmatvec(kw.as_ref(), &self.r);
        let scale = 1.0 / (n as f64 * self.lambda3);
        Ok(a.iter().zip(&b).map(|(x, y)| scale * (x - y)).collect())
    }
}

/// The stacked-basis system `K, Ω ∈ R^{(n+ñ)×(n+ñ)}`, `z = (n/ñ)[K₂; K₄]1`.
#[derive(Clone, Debug)]
pub struct RieszBlocks {
    pub k: Mat<f64>,
    pub omega: Mat<f64>,
    pub z: Vec<f64>,
    pub kind: RieszKind,
    n: usize,
    data: Dataset,
    kernels: Kernels,
    subgroup: bool,
    points: CounterfactualPoints,
}

impl RieszBlocks {
    pub fn build(data: &Dataset, kernels: &Kernels, kind: &RieszKind, shifted: Option<&ShiftedSample>) -> Result<Self> {
        let subgroup = kind.needs_subgroup();
        let n = data.n();
        let pts = CounterfactualPoints::build(data, kind, shifted)?;
        let nt = pts.len();
        let grams = GramSet::build(data, kernels)?;
        let mut parts = vec![grams.s.as_ref(), grams.d.as_ref(), grams.x.as_ref()];
        if subgroup {
            parts.push(grams.v.as_ref().ok_or_else(|| Error::Input("CATE needs V".into()))?.as_ref());
        }
        let k1 = hadamard_all(&parts);
        let mut k2 = cross_gram(
            data,
            kernels,
            subgroup,
            &vec![1.0; nt],
            &pts.d,
            pts.x.as_ref(),
            pts.v.as_ref().map(|v| v.as_ref()),
        )?;
        let mut k4 = tilde_gram(kernels, &pts, &pts)?;
        for j in 0..nt {
            for i in 0..n {
                k2[(i, j)] *= pts.weights[j];
            }
            for i in 0..nt {
                k4[(i, j)] *= pts.weights[i] * pts.weights[j];
            }
        }
        let k3 = k2.transpose().to_owned();
        let size = n + nt;
        let mut k = Mat::zeros(size, size);
        let mut omega = Mat::zeros(size, size);
        let k1k1 = k1.as_ref() * k1.as_ref();
        let k1k2 = k1.as_ref() * k2.as_ref();
        let k3k2 = k3.as_ref() * k2.as_ref();
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = k1[(i, j)];
                omega[(i, j)] = k1k1[(i, j)];
            }
            for j in 0..nt {
                k[(i, n + j)] = k2[(i, j)];
                k[(n + j, i)] = k2[(i, j)];
                omega[(i, n + j)] = k1k2[(i, j)];
                omega[(n + j, i)] = k1k2[(i, j)];
            }
        }
        for i in 0..nt {
            for j in 0..nt {
                k[(n + i, n + j)] = k4[(i, j)];
                omega[(n + i, n + j)] = k3k2[(i, j)];
            }
        }
        let scale = n as f64 / nt as f64;
        let ones = vec![1.0; nt];
        let mut z = matvec(k2.as_ref(), &ones);
        z.extend(matvec(k4.as_ref(), &ones));
        z.iter_mut().for_each(|v| *v *= scale);
        Ok(Self { k, omega, z, kind: kind.clone(), n, data: data.clone(), kernels: kernels.clone(), subgroup, points: pts })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `u(w)`: `k(W_i, w)` then `ω_j k(w̃_j, w)`.
    pub fn u(&self, query: &Dataset, row: usize) -> Result<Vec<f64>> {
        let q = query.subset(&[row]);
        let mut u = mat_col0(
            cross_gram(&self.data, &self.kernels, self.subgroup, q.s(), q.d(), q.x(), q.v())?.as_ref(),
        );
        let tq = CounterfactualPoints {
            d: q.d().to_vec(),
            x: q.x().to_owned(),
            v: if self.subgroup { q.v().map(|v| v.to_owned()) } else { None },
            weights: vec![],
        };
        let kt = tilde_gram(&self.kernels, &self.points, &tq)?;
        let k11 = s1_column(&[1.0], &self.kernels.s)?[0];
        let ks = s1_column(q.s(), &self.kernels.s)?[0];
        for j in 0..self.points.len() {
            u.push(self.points.weights[j] * kt[(j, 0)] * ks / k11);
        }
        Ok(u)
    }
}

fn mat_col0(m: MatRef<'_, f64>) -> Vec<f64> {
    m.col(0).iter().copied().collect()
}

/// `zᵀ(Ω + nλ₃K)⁻¹u`.
pub fn riesz_estimate(blocks: &RieszBlocks, lambda3: f64, u: &[f64]) -> Result<f64> {
    if u.len() != blocks.z.len() {
        return input("u has the wrong length");
    }
    let mut a = blocks.omega.clone();
    let nl = blocks.n as f64 * lambda3;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            a[(i, j)] += nl * blocks.k[(i, j)];
        }
    }
    let chol = match Chol::new(a.as_ref()) {
        Ok(c) => c,
        Err(_) => {
            // the stacked basis is often rank deficient; one more jitter step
            let extra = 1e-8 * trace(a.as_ref()) / a.nrows() as f64;
            add_diag(&mut a, extra);
            Chol::new(a.as_ref())?
        }
    };
    Ok(dot(&blocks.z, &chol.solve_vec(u)))
}
