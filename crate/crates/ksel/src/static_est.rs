//! Dose, incremental, distribution-shift, ATT and CATE curves under static
//! selection.
//!
//! Every curve is `βᵀq` with `β = (K_SS⊙K_DD⊙K_XX + nλI)⁻¹(S⊙Y)` and a query
//! vector `q` built from Gram columns, so a grid costs one solve.

use std::sync::OnceLock;

use faer::{Mat, MatRef};

use crate::data::{column, Dataset, ShiftedSample};
use crate::embeddings::{embedding_penalty, ConditionalEmbedding};
use crate::error::{input, Error, Result};
use crate::kernels::{gram, gram_column, grad_gram_column, s1_column, GramSet, Kernels};
use crate::linalg::{hadamard, hadamard_all, matvec, row_means, tmatvec, Chol};
use crate::penalty::{Penalty, PenaltyConfig, Resolution, UsedPenalties};
use crate::ridge::tune_lambda;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Estimand {
    Ate,
    Ds,
    Att,
    Cate,
    GradAte,
    GradDs,
    GradAtt,
    GradCate,
    DynAte,
    DynDs,
}

impl Estimand {
    pub const ALL: [Estimand; 10] = [
        Estimand::Ate,
        Estimand::Ds,
        Estimand::Att,
        Estimand::Cate,
        Estimand::GradAte,
        Estimand::GradDs,
        Estimand::GradAtt,
        Estimand::GradCate,
        Estimand::DynAte,
        Estimand::DynDs,
    ];

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    pub fn name(self) -> &'static str {
        match self {
            Estimand::Ate => "ate",
            Estimand::Ds => "ds",
            Estimand::Att => "att",
            Estimand::Cate => "cate",
            Estimand::GradAte => "grad-ate",
            Estimand::GradDs => "grad-ds",
            Estimand::GradAtt => "grad-att",
            Estimand::GradCate => "grad-cate",
            Estimand::DynAte => "dyn-ate",
            Estimand::DynDs => "dyn-ds",
        }
    }

    pub fn is_gradient(self) -> bool {
        matches!(self, Estimand::GradAte | Estimand::GradDs | Estimand::GradAtt | Estimand::GradCate)
    }

    fn with_gradient(self, gradient: bool) -> Self {
        match (self, gradient) {
            (Estimand::Ate, true) => Estimand::GradAte,
            (Estimand::Ds, true) => Estimand::GradDs,
            (Estimand::Att, true) => Estimand::GradAtt,
            (Estimand::Cate, true) => Estimand::GradCate,
            (e, _) => e,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveEstimate {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub estimand: Estimand,
}

impl CurveEstimate {
    pub(crate) fn new(grid: &[f64], values: Vec<f64>, estimand: Estimand) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "{} estimate is not finite at grid point {}",
                estimand.name(),
                grid[i]
            )));
        }
        Ok(Self { grid: grid.to_vec(), values, estimand })
    }
}

/// Which curve to evaluate. The grid always runs over the treatment slot of
/// the outcome regression: `d` for ATE/DS/CATE, `d'` for ATT.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Ate,
    Ds(&'a ShiftedSample),
    Att { d: f64 },
    Cate { v: &'a [f64] },
}

impl Target<'_> {
    fn estimand(&self) -> Estimand {
        match self {
            Target::Ate => Estimand::Ate,
            Target::Ds(_) => Estimand::Ds,
            Target::Att { .. } => Estimand::Att,
            Target::Cate { .. } => Estimand::Cate,
        }
    }
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return input("empty treatment grid");
    }
    if grid.iter().any(|g| !g.is_finite()) {
        return input("treatment grid contains a non-finite value");
    }
    Ok(())
}

/// Grams, the product system matrix and query-vector builders. Shared by the
/// outcome regression and the distribution embeddings.
pub struct StaticDesign {
    data: Dataset,
    kernels: Kernels,
    grams: GramSet,
    s1: Vec<f64>,
    x_mean: Vec<f64>,
    system: Mat<f64>,
    subgroup: bool,
    penalties: PenaltyConfig,
    lambda1: OnceLock<f64>,
    lambda2: OnceLock<f64>,
}

impl StaticDesign {
    /// Three-factor design `K_SS⊙K_DD⊙K_XX`.
    pub fn new(data: &Dataset, kernels: Kernels, penalties: PenaltyConfig) -> Result<Self> {
        Self::build(data, kernels, penalties, false)
    }

    /// Four-factor design `K_SS⊙K_DD⊙K_VV⊙K_XX`, needed for CATE.
    pub fn with_subgroup(data: &Dataset, kernels: Kernels, penalties: PenaltyConfig) -> Result<Self> {
        if data.v().is_none() || kernels.v.is_none() {
            return input("CATE needs a subcovariate column V");
        }
        Self::build(data, kernels, penalties, true)
    }

    fn build(data: &Dataset, kernels: Kernels, penalties: PenaltyConfig, subgroup: bool) -> Result<Self> {
        penalties.validate()?;
        let grams = GramSet::build(data, &kernels)?;
        let mut parts = vec![grams.s.as_ref(), grams.d.as_ref(), grams.x.as_ref()];
        if subgroup {
            parts.push(grams.v.as_ref().expect("checked above").as_ref());
        }
        let system = hadamard_all(&parts);
        let s1 = s1_column(data.s(), &kernels.s)?;
        let x_mean = row_means(grams.x.as_ref());
        Ok(Self {
            data: data.clone(),
            kernels,
            grams,
            s1,
            x_mean,
            system,
            subgroup,
            penalties,
            lambda1: OnceLock::new(),
            lambda2: OnceLock::new(),
        })
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

    pub fn has_subgroup(&self) -> bool {
        self.subgroup
    }

    /// The product Gram the outcome regression is solved against.
    pub fn system(&self) -> MatRef<'_, f64> {
        self.system.as_ref()
    }

    fn cached(lock: &OnceLock<f64>, f: impl FnOnce() -> Result<f64>) -> Result<f64> {
        if let Some(v) = lock.get() {
            return Ok(*v);
        }
        let v = f()?;
        Ok(*lock.get_or_init(|| v))
    }

    /// Penalty of the embedding of `X` given `D`, tuned on first use.
    pub fn lambda1(&self) -> Result<f64> {
        Self::cached(&self.lambda1, || {
            embedding_penalty(&self.penalties, Penalty::TreatmentEmbedding, self.grams.d.as_ref(), self.grams.x.as_ref())
        })
    }

    /// Penalty of the embedding of `X` given `V`, tuned on first use.
    pub fn lambda2(&self) -> Result<f64> {
        let kv = self.grams.v.as_ref().ok_or_else(|| Error::Input("CATE needs a subcovariate column V".into()))?;
        Self::cached(&self.lambda2, || {
            embedding_penalty(&self.penalties, Penalty::SubgroupEmbedding, kv.as_ref(), self.grams.x.as_ref())
        })
    }

    /// Embedding penalties resolved so far.
    pub fn used_embedding_penalties(&self) -> UsedPenalties {
        let mut u = UsedPenalties::default();
        if let Some(v) = self.lambda1.get() {
            u.set(Penalty::TreatmentEmbedding, *v);
        }
        if let Some(v) = self.lambda2.get() {
            u.set(Penalty::SubgroupEmbedding, *v);
        }
        u
    }

    fn treatment_column(&self, d: f64, gradient: bool) -> Result<Vec<f64>> {
        if gradient {
            grad_gram_column(&self.kernels.d, self.data.d(), d)
        } else {
            gram_column(&self.kernels.d, column(self.data.d()).as_ref(), &[d])
        }
    }

    /// `K_{XX̃}1/ñ`.
    pub fn shifted_x_mean(&self, shifted: &ShiftedSample) -> Result<Vec<f64>> {
        if shifted.is_empty() {
            return input("shifted sample is empty");
        }
        if shifted.x.ncols() != self.data.x().ncols() {
            return input(format!(
                "shifted covariates have {} columns, training covariates have {}",
                shifted.x.ncols(),
                self.data.x().ncols()
            ));
        }
        Ok(row_means(gram(&self.kernels.x, self.data.x(), shifted.x.as_ref())?.as_ref()))
    }

    /// `K_XX(K_DD + nλ₁I)⁻¹K_Dd`.
    fn att_x_embedding(&self, d: f64) -> Result<Vec<f64>> {
        let emb = ConditionalEmbedding::new(self.grams.d.as_ref(), self.lambda1()?)?;
        let kd = self.treatment_column(d, false)?;
        Ok(matvec(self.grams.x.as_ref(), &emb.weights(&kd)))
    }

    fn subgroup_column(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (vdata, vspec) = match (self.data.v(), self.kernels.v.as_ref()) {
            (Some(a), Some(b)) => (a, b),
            _ => return input("CATE needs a subcovariate column V"),
        };
        if v.len() != vdata.ncols() {
            return input(format!("subgroup value has {} entries, V has {} columns", v.len(), vdata.ncols()));
        }
        gram_column(vspec, vdata, v)
    }

    /// `K_XX(K_VV + nλ₂I)⁻¹K_Vv`.
    fn cate_x_embedding(&self, kv: &[f64]) -> Result<Vec<f64>> {
        let vg = self.grams.v.as_ref().expect("subgroup column checked");
        let emb = ConditionalEmbedding::new(vg.as_ref(), self.lambda2()?)?;
        Ok(matvec(self.grams.x.as_ref(), &emb.weights(kv)))
    }

    /// Query vectors, one column per grid point.
    pub fn queries(&self, target: Target<'_>, grid: &[f64], gradient: bool) -> Result<Mat<f64>> {
        check_grid(grid)?;
        if matches!(target, Target::Cate { .. }) != self.subgroup {
            return input(if self.subgroup {
                "a four-factor design serves CATE only"
            } else {
                "CATE needs the four-factor design with V"
            });
        }
        // factor shared by every grid point
        let common: Vec<f64> = match target {
            Target::Ate => self.x_mean.clone(),
            Target::Ds(shifted) => self.shifted_x_mean(shifted)?,
            Target::Att { d } => self.att_x_embedding(d)?,
            Target::Cate { v } => {
                let kv = self.subgroup_column(v)?;
                let emb = self.cate_x_embedding(&kv)?;
                kv.iter().zip(&emb).map(|(a, b)| a * b).collect()
            }
        };
        let n = self.n();
        let common: Vec<f64> = common.iter().zip(&self.s1).map(|(a, b)| a * b).collect();
        let mut q = Mat::zeros(n, grid.len());
        for (j, &g) in grid.iter().enumerate() {
            let kd = self.treatment_column(g, gradient)?;
            for i in 0..n {
                q[(i, j)] = common[i] * kd[i];
            }
        }
        Ok(q)
    }
}

/// Outcome regression `γ̂` on a static design.
pub struct StaticFit {
    design: StaticDesign,
    lambda: f64,
    beta: Vec<f64>,
    jittered: bool,
}

impl StaticFit {
    pub fn new(design: StaticDesign) -> Result<Self> {
        let n = design.n();
        let sy = design.data.sy().to_vec();
        let lambda = match design.penalties.resolve(Penalty::Outcome, n) {
            Resolution::Value(v) => v,
            Resolution::Tune(grid) => tune_lambda(design.system(), &sy, &grid)?,
        };
        Self::with_lambda(design, lambda)
    }

    pub fn with_lambda(design: StaticDesign, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("outcome penalty must be positive, got {lambda}")));
        }
        let n = design.n();
        let chol = Chol::shifted(design.system(), n as f64 * lambda)?;
        let beta = chol.solve_vec(design.data.sy());
        Ok(Self { jittered: chol.jittered(), design, lambda, beta })
    }

    /// Three-factor fit.
    pub fn fit(data: &Dataset, kernels: Kernels, penalties: PenaltyConfig) -> Result<Self> {
        Self::new(StaticDesign::new(data, kernels, penalties)?)
    }

    /// Four-factor fit for CATE.
    pub fn fit_subgroup(data: &Dataset, kernels: Kernels, penalties: PenaltyConfig) -> Result<Self> {
        Self::new(StaticDesign::with_subgroup(data, kernels, penalties)?)
    }

    pub fn design(&self) -> &StaticDesign {
        &self.design
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Dual coefficients `(K + nλI)⁻¹(S⊙Y)`.
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Whether the system needed diagonal jitter.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    pub fn used_penalties(&self) -> UsedPenalties {
        let mut u = self.design.used_embedding_penalties();
        u.set(Penalty::Outcome, self.lambda);
        u
    }

    pub fn curve(&self, target: Target<'_>, grid: &[f64], gradient: bool) -> Result<CurveEstimate> {
        let q = self.design.queries(target, grid, gradient)?;
        let values = tmatvec(q.as_ref(), &self.beta);
        CurveEstimate::new(grid, values, target.estimand().with_gradient(gradient))
    }

    pub fn ate_curve(&self, grid: &[f64]) -> Result<CurveEstimate> {
        self.curve(Target::Ate, grid, false)
    }

    pub fn ds_curve(&self, shifted: &ShiftedSample, grid: &[f64]) -> Result<CurveEstimate> {
        self.curve(Target::Ds(shifted), grid, false)
    }

    /// `θ̂^{ATT}(d, d')` over a grid of `d'`.
    pub fn att_curve(&self, d: f64, dprime_grid: &[f64]) -> Result<CurveEstimate> {
        self.curve(Target::Att { d }, dprime_grid, false)
    }

    pub fn cate_curve(&self, grid: &[f64], v: &[f64]) -> Result<CurveEstimate> {
        self.curve(Target::Cate { v }, grid, false)
    }

    pub fn incremental_curve(&self, target: Target<'_>, grid: &[f64]) -> Result<CurveEstimate> {
        self.curve(target, grid, true)
    }

    /// `γ̂(1, d_j, x_j[, v_j])` at query rows.
    pub fn predict_selected(&self, d: &[f64], x: MatRef<'_, f64>, v: Option<MatRef<'_, f64>>) -> Result<Vec<f64>> {
        let design = &self.design;
        if x.nrows() != d.len() || x.ncols() != design.data.x().ncols() {
            return input("query covariates do not match the training layout");
        }
        let kd = gram(&design.kernels.d, column(design.data.d()).as_ref(), column(d).as_ref())?;
        let kx = gram(&design.kernels.x, design.data.x(), x)?;
        let mut k = hadamard(kd.as_ref(), kx.as_ref());
        if design.subgroup {
            let v = v.ok_or_else(|| Error::Input("CATE fit needs subgroup values at query rows".into()))?;
            let kv = gram(design.kernels.v.as_ref().unwrap(), design.data.v().unwrap(), v)?;
            k = hadamard(k.as_ref(), kv.as_ref());
        }
        let w: Vec<f64> = self.beta.iter().zip(&design.s1).map(|(b, s)| b * s).collect();
        Ok(tmatvec(k.as_ref(), &w))
    }
}
