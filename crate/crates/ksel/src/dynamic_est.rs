//! Dose response under dynamic selection, where a follow-up covariate `M`
//! sits between treatment and selection.
//!
//! `ω̂(1,d;x)` plugs the sequential embedding of `M` given `(d, x)` into the
//! four-factor outcome regression. Curves average it over `X`, either by
//! summing per-point queries or through the precomputed matrix
//! `G = R₂ ⊙ (1/n)K_XX²` with `R₂ = K_MM(K_DD⊙K_XX + nλ₄I)⁻¹`.

use std::sync::OnceLock;

use faer::{Mat, MatRef};

use crate::data::{column, Dataset, ShiftedSample};
use crate::embeddings::embedding_penalty;
use crate::error::{input, Error, Result};
use crate::kernels::{gram, gram_column, s1_column, GramSet, Kernels};
use crate::linalg::{hadamard, hadamard_all, matvec, scale_rows, tmatvec, Chol};
use crate::penalty::{Penalty, PenaltyConfig, Resolution, UsedPenalties};
use crate::ridge::tune_lambda;
use crate::static_est::{check_grid, CurveEstimate, Estimand};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DynamicForm {
    #[default]
    Fast,
    /// Per-point summation, kept as the reference implementation.
    Summation,
}

/// Shifted-population pieces for the distribution-shift curve.
pub struct ShiftPrep {
    n_tilde: usize,
    lambda5: f64,
    d_tilde: Vec<f64>,
    chol: Chol,
    /// `K_{MM̃}`, n×ñ
    k_m: Mat<f64>,
    /// `K_{XX̃}`, n×ñ
    k_x: Mat<f64>,
    /// `K_{X̃X̃}`
    k_xt: Mat<f64>,
    fast: OnceLock<Mat<f64>>,
}

impl ShiftPrep {
    pub fn lambda5(&self) -> f64 {
        self.lambda5
    }

    pub fn len(&self) -> usize {
        self.n_tilde
    }

    pub fn is_empty(&self) -> bool {
        self.n_tilde == 0
    }

    /// `R̃₂ ⊙ (1/ñ)K_{XX̃}K_{X̃X̃}` with `R̃₂ = K_{MM̃}(K_{D̃D̃}⊙K_{X̃X̃} + ñλ₅I)⁻¹`.
    fn fast_matrix(&self) -> &Mat<f64> {
        self.fast.get_or_init(|| {
            let r2 = self.chol.solve_mat(self.k_m.transpose()).transpose().to_owned();
            let mut p = self.k_x.as_ref() * self.k_xt.as_ref();
            let inv = 1.0 / self.n_tilde as f64;
            for j in 0..p.ncols() {
                for i in 0..p.nrows() {
                    p[(i, j)] *= inv * r2[(i, j)];
                }
            }
            p
        })
    }
}

#[derive(Clone, Copy)]
pub enum DynTarget<'a> {
    Ate,
    Ds(&'a ShiftPrep),
}

pub struct DynamicDesign {
    data: Dataset,
    kernels: Kernels,
    grams: GramSet,
    s1: Vec<f64>,
    system: Mat<f64>,
    seq: Chol,
    lambda4: f64,
    penalties: PenaltyConfig,
    fast: OnceLock<Mat<f64>>,
}

impl DynamicDesign {
    pub fn new(data: &Dataset, kernels: Kernels, penalties: PenaltyConfig) -> Result<Self> {
        penalties.validate()?;
        if data.m().is_none() || kernels.m.is_none() {
            return input("dynamic selection needs the follow-up covariate M");
        }
        let grams = GramSet::build(data, &kernels)?;
        let km = grams.m.as_ref().expect("checked above");
        let system = hadamard_all(&[grams.s.as_ref(), grams.d.as_ref(), grams.x.as_ref(), km.as_ref()]);
        let dx = hadamard(grams.d.as_ref(), grams.x.as_ref());
        let lambda4 = embedding_penalty(&penalties, Penalty::Sequential, dx.as_ref(), km.as_ref())?;
        let n = data.n();
        let seq = Chol::shifted(dx.as_ref(), n as f64 * lambda4)?;
        let s1 = s1_column(data.s(), &kernels.s)?;
        Ok(Self { data: data.clone(), kernels, grams, s1, system, seq, lambda4, penalties, fast: OnceLock::new() })
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn kernels(&self) -> &Kernels {
        &self.kernels
    }

    pub fn grams(&self) -> &GramSet {
        &self.grams
    }

    pub fn penalties(&self) -> &PenaltyConfig {
        &self.penalties
    }

    pub fn lambda4(&self) -> f64 {
        self.lambda4
    }

    /// `K_SS⊙K_DD⊙K_XX⊙K_MM`.
    pub fn system(&self) -> MatRef<'_, f64> {
        self.system.as_ref()
    }

    fn k_m(&self) -> MatRef<'_, f64> {
        self.grams.m.as_ref().expect("checked on construction").as_ref()
    }

    fn treatment_column(&self, points: &[f64], d: f64) -> Result<Vec<f64>> {
        gram_column(&self.kernels.d, column(points).as_ref(), &[d])
    }

    /// Shifted-population factorization, with `λ₅` tuned on the shifted
    /// sample's own embedding regression unless fixed.
    pub fn prepare_shift(&self, shifted: &ShiftedSample) -> Result<ShiftPrep> {
        let (dt, mt) = match (&shifted.d, &shifted.m) {
            (Some(d), Some(m)) => (d, m),
            _ => return input("the dynamic distribution-shift curve needs shifted D, X and M"),
        };
        let nt = shifted.len();
        if nt == 0 {
            return input("shifted sample is empty");
        }
        if dt.len() != nt || mt.nrows() != nt {
            return input("shifted D, X and M have different lengths");
        }
        if shifted.x.ncols() != self.data.x().ncols() || Some(mt.ncols()) != self.data.m().map(|m| m.ncols()) {
            return input("shifted covariates do not match the training layout");
        }
        let mspec = self.kernels.m.as_ref().expect("checked on construction");
        let dtc = column(dt);
        let k_dt = gram(&self.kernels.d, dtc.as_ref(), dtc.as_ref())?;
        let k_xt = gram(&self.kernels.x, shifted.x.as_ref(), shifted.x.as_ref())?;
        let k_mt = gram(mspec, mt.as_ref(), mt.as_ref())?;
        let dx = hadamard(k_dt.as_ref(), k_xt.as_ref());
        let lambda5 = embedding_penalty(&self.penalties, Penalty::ShiftedSequential, dx.as_ref(), k_mt.as_ref())?;
        let chol = Chol::shifted(dx.as_ref(), nt as f64 * lambda5)?;
        Ok(ShiftPrep {
            n_tilde: nt,
            lambda5,
            d_tilde: dt.clone(),
            chol,
            k_m: gram(mspec, self.data.m().unwrap(), mt.as_ref())?,
            k_x: gram(&self.kernels.x, self.data.x(), shifted.x.as_ref())?,
            k_xt,
            fast: OnceLock::new(),
        })
    }

    /// `R₂ ⊙ (1/n)K_XX²`.
    fn fast_matrix(&self) -> &Mat<f64> {
        self.fast.get_or_init(|| {
            let r2 = self.seq.solve_mat(self.k_m()).transpose().to_owned();
            let kx = self.grams.x.as_ref();
            let mut g = kx * kx;
            let inv = 1.0 / self.n() as f64;
            for j in 0..g.ncols() {
                for i in 0..g.nrows() {
                    g[(i, j)] *= inv * r2[(i, j)];
                }
            }
            g
        })
    }

    /// Query column for `ω̂(1,d;x)` at each row of `xq`.
    pub fn omega_queries(&self, d: f64, xq: MatRef<'_, f64>) -> Result<Mat<f64>> {
        if xq.ncols() != self.data.x().ncols() {
            return input("query covariates do not match the training layout");
        }
        let kd = self.treatment_column(self.data.d(), d)?;
        let kx = gram(&self.kernels.x, self.data.x(), xq)?;
        Ok(self.omega_queries_from(&kd, kx.as_ref(), self.seq_embed(&kd, kx.as_ref()).as_ref()))
    }

    /// `K_MM(K_DD⊙K_XX + nλ₄I)⁻¹(K_Dd 1ᵀ ⊙ K_{X,xq})`.
    fn seq_embed(&self, kd: &[f64], kx: MatRef<'_, f64>) -> Mat<f64> {
        let w = self.seq.solve_mat(scale_rows(kx, kd).as_ref());
        self.k_m() * w.as_ref()
    }

    fn omega_queries_from(&self, kd: &[f64], kx: MatRef<'_, f64>, mw: MatRef<'_, f64>) -> Mat<f64> {
        Mat::from_fn(kx.nrows(), kx.ncols(), |i, j| self.s1[i] * kd[i] * kx[(i, j)] * mw[(i, j)])
    }

    /// Query vectors, one column per grid point.
    pub fn queries(&self, target: DynTarget<'_>, grid: &[f64], form: DynamicForm) -> Result<Mat<f64>> {
        check_grid(grid)?;
        let n = self.n();
        let mut q = Mat::zeros(n, grid.len());
        for (j, &d) in grid.iter().enumerate() {
            let kd = self.treatment_column(self.data.d(), d)?;
            let col: Vec<f64> = match (target, form) {
                (DynTarget::Ate, DynamicForm::Fast) => {
                    let gk = matvec(self.fast_matrix().as_ref(), &kd);
                    (0..n).map(|i| self.s1[i] * kd[i] * gk[i]).collect()
                }
                (DynTarget::Ate, DynamicForm::Summation) => {
                    let kx = self.grams.x.as_ref();
                    let per_point = self.omega_queries_from(&kd, kx, self.seq_embed(&kd, kx).as_ref());
                    crate::linalg::row_means(per_point.as_ref())
                }
                (DynTarget::Ds(prep), DynamicForm::Fast) => {
                    let kdt = self.treatment_column(&prep.d_tilde, d)?;
                    let gk = matvec(prep.fast_matrix().as_ref(), &kdt);
                    (0..n).map(|i| self.s1[i] * kd[i] * gk[i]).collect()
                }
                (DynTarget::Ds(prep), DynamicForm::Summation) => {
                    let kdt = self.treatment_column(&prep.d_tilde, d)?;
                    // ν̂_m(d, x̃_i) for every shifted point, expressed against training M
                    let w = prep.chol.solve_mat(scale_rows(prep.k_xt.as_ref(), &kdt).as_ref());
                    let mw = prep.k_m.as_ref() * w.as_ref();
                    let per_point = self.omega_queries_from(&kd, prep.k_x.as_ref(), mw.as_ref());
                    crate::linalg::row_means(per_point.as_ref())
                }
            };
            for (i, v) in col.into_iter().enumerate() {
                q[(i, j)] = v;
            }
        }
        Ok(q)
    }
}

/// Four-factor outcome regression with its sequential embedding.
pub struct DynamicFit {
    design: DynamicDesign,
    lambda: f64,
    beta: Vec<f64>,
}

impl DynamicFit {
    pub fn new(design: DynamicDesign) -> Result<Self> {
        let n = design.n();
        let lambda = match design.penalties.resolve(Penalty::Outcome, n) {
            Resolution::Value(v) => v,
            Resolution::Tune(grid) => tune_lambda(design.system(), design.data.sy(), &grid)?,
        };
        Self::with_lambda(design, lambda)
    }

    pub fn with_lambda(design: DynamicDesign, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("outcome penalty must be positive, got {lambda}")));
        }
        let chol = Chol::shifted(design.system(), design.n() as f64 * lambda)?;
        let beta = chol.solve_vec(design.data.sy());
        Ok(Self { design, lambda, beta })
    }

    pub fn fit(data: &Dataset, kernels: Kernels, penalties: PenaltyConfig) -> Result<Self> {
        Self::new(DynamicDesign::new(data, kernels, penalties)?)
    }

    pub fn design(&self) -> &DynamicDesign {
        &self.design
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn used_penalties(&self) -> UsedPenalties {
        let mut u = UsedPenalties::default();
        u.set(Penalty::Outcome, self.lambda);
        u.set(Penalty::Sequential, self.design.lambda4);
        u
    }

    pub fn omega_hat(&self, d: f64, x: &[f64]) -> Result<f64> {
        let xq = Mat::from_fn(1, x.len(), |_, j| x[j]);
        Ok(self.omega_batch(d, xq.as_ref())?[0])
    }

    /// `ω̂(1,d;x)` at each row of `xq`.
    pub fn omega_batch(&self, d: f64, xq: MatRef<'_, f64>) -> Result<Vec<f64>> {
        Ok(tmatvec(self.design.omega_queries(d, xq)?.as_ref(), &self.beta))
    }

    /// `γ̂(1, d_j, x_j, m_j)` at query rows.
    pub fn predict_selected(&self, d: &[f64], x: MatRef<'_, f64>, m: MatRef<'_, f64>) -> Result<Vec<f64>> {
        let des = &self.design;
        if x.nrows() != d.len() || m.nrows() != d.len() {
            return input("query rows have different lengths");
        }
        let kd = gram(&des.kernels.d, column(des.data.d()).as_ref(), column(d).as_ref())?;
        let kx = gram(&des.kernels.x, des.data.x(), x)?;
        let km = gram(des.kernels.m.as_ref().unwrap(), des.data.m().unwrap(), m)?;
        let k = hadamard_all(&[kd.as_ref(), kx.as_ref(), km.as_ref()]);
        let w: Vec<f64> = self.beta.iter().zip(&des.s1).map(|(b, s)| b * s).collect();
        Ok(tmatvec(k.as_ref(), &w))
    }

    pub fn curve(&self, target: DynTarget<'_>, grid: &[f64], form: DynamicForm) -> Result<CurveEstimate> {
        let q = self.design.queries(target, grid, form)?;
        let tag = match target {
            DynTarget::Ate => Estimand::DynAte,
            DynTarget::Ds(_) => Estimand::DynDs,
        };
        CurveEstimate::new(grid, tmatvec(q.as_ref(), &self.beta), tag)
    }

    pub fn ate_curve(&self, grid: &[f64]) -> Result<CurveEstimate> {
        self.curve(DynTarget::Ate, grid, DynamicForm::Fast)
    }

    pub fn ds_curve(&self, shifted: &ShiftedSample, grid: &[f64]) -> Result<CurveEstimate> {
        let prep = self.design.prepare_shift(shifted)?;
        self.curve(DynTarget::Ds(&prep), grid, DynamicForm::Fast)
    }
}
