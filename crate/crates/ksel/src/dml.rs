//! Cross-fitted debiased inference for discrete-treatment effects.
//!
//! Nuisances are fitted on `I_ℓᶜ` and the moment is averaged over `I_ℓ`.
//! Nuisance learners receive the full table plus the training indices, so a
//! learner that reads a held-out row can be caught by poisoning those rows.

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{column, Dataset, ShiftedSample};
use crate::dynamic_est::{DynamicDesign, DynamicFit};
use crate::error::{input, Error, Result};
use crate::kernels::{gram, KernelConfig};
use crate::linalg::{hadamard_all, tmatvec};
use crate::penalty::{Penalty, PenaltyConfig, Resolution, UsedPenalties};
use crate::ridge::{ridge_solve, tune_lambda, RidgeWeights};
use crate::riesz::{censor, RieszKind, RieszSolver, DEFAULT_EPS};
use crate::static_est::{StaticDesign, StaticFit};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_LEVEL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub l: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

/// Balanced random partition: a seeded permutation, position `p` to fold `p mod L`.
pub fn make_folds(n: usize, l: usize, seed: u64) -> Result<FoldPlan> {
    if l < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {l}")));
    }
    if n < 2 * l {
        return input(format!("{n} observations cannot fill {l} folds of at least 2"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (p, &i) in perm.iter().enumerate() {
        assignment[i] = p % l;
    }
    Ok(FoldPlan { l, assignment, seed })
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Rows of fold `k`, ascending.
    pub fn fold(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == k).collect()
    }

    /// Rows outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != k).collect()
    }

    /// Same partition with labels renamed by `perm[old] = new`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        Self { l: self.l, assignment: self.assignment.iter().map(|&a| perm[a]).collect(), seed: self.seed }
    }

    /// Fold labels ordered by their smallest row, so the processing order
    /// does not depend on label names.
    fn canonical_order(&self) -> Vec<usize> {
        let mut first = vec![usize::MAX; self.l];
        for (i, &a) in self.assignment.iter().enumerate() {
            first[a] = first[a].min(i);
        }
        let mut order: Vec<usize> = (0..self.l).collect();
        order.sort_by_key(|&k| first[k]);
        order
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return input(format!("fold plan covers {} rows, data has {n}", self.n()));
        }
        if self.l < 2 {
            return Err(Error::Config("need at least 2 folds".into()));
        }
        let mut sizes = vec![0usize; self.l];
        for &a in &self.assignment {
            if a >= self.l {
                return input(format!("fold label {a} out of range"));
            }
            sizes[a] += 1;
        }
        if let Some(k) = sizes.iter().position(|&s| s == 0) {
            return input(format!("fold {k} is empty"));
        }
        Ok(())
    }
}

/// Wichura's AS241 (PPND16) for the standard Gaussian quantile, accurate to
/// about 1e-16 relative.
pub fn gaussian_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    fn poly(c: &[f64; 8], r: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &v| acc * r + v)
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let v = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -v
    } else {
        v
    }
}

/// `θ ± c_a σ/√n` with `c_a` the `1 − a/2` Gaussian quantile.
pub fn confidence_interval(theta: f64, sigma: f64, n: usize, a: f64) -> (f64, f64) {
    let half = gaussian_quantile(1.0 - a / 2.0) * sigma / (n as f64).sqrt();
    (theta - half, theta + half)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub eval_size: usize,
    pub train_size: usize,
    pub penalties: UsedPenalties,
    /// Riesz or inverse-propensity evaluations that hit a bound.
    pub clipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EffectEstimate {
    pub theta: f64,
    pub sigma: f64,
    pub ci: (f64, f64),
    pub level: f64,
    pub n: usize,
    pub folds: usize,
    pub diagnostics: Vec<FoldDiagnostics>,
    /// Per-observation influence values `φ_i`; `σ̂²` is their mean square
    /// (plus the shifted-sample term for distribution-shift targets).
    pub influence: Vec<f64>,
}

impl EffectEstimate {
    fn assemble(theta: f64, var: f64, level: f64, folds: usize, diagnostics: Vec<FoldDiagnostics>, influence: Vec<f64>) -> Result<Self> {
        let n = influence.len();
        if !theta.is_finite() || !var.is_finite() {
            return Err(Error::Numeric("effect estimate or its variance is not finite".into()));
        }
        let sigma = var.max(0.0).sqrt();
        Ok(Self { theta, sigma, ci: confidence_interval(theta, sigma, n, level), level, n, folds, diagnostics, influence })
    }
}

/// Shared inference settings.
#[derive(Clone, Debug)]
pub struct DmlConfig {
    pub folds: usize,
    pub seed: u64,
    pub level: f64,
    pub kernels: KernelConfig,
    pub penalties: PenaltyConfig,
    /// Propensity clipping margin; the Riesz bound defaults to `1/ε²`.
    pub eps: f64,
    pub censor_bound: Option<f64>,
}

impl Default for DmlConfig {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            seed: 0,
            level: DEFAULT_LEVEL,
            kernels: KernelConfig::discrete_treatment(),
            penalties: PenaltyConfig::default(),
            eps: DEFAULT_EPS,
            censor_bound: None,
        }
    }
}

impl DmlConfig {
    pub fn bound(&self) -> f64 {
        self.censor_bound.unwrap_or(1.0 / (self.eps * self.eps))
    }

    fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::Config(format!("clipping margin must lie in (0, 0.5), got {}", self.eps)));
        }
        if self.censor_bound.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::Config("censoring bound must be positive".into()));
        }
        self.penalties.validate()
    }
}

/// A linear combination of static kinds, e.g. `ATE(1) − ATE(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticTarget {
    pub terms: Vec<(f64, RieszKind)>,
}

impl StaticTarget {
    pub fn single(kind: RieszKind) -> Self {
        Self { terms: vec![(1.0, kind)] }
    }

    pub fn contrast(a: RieszKind, b: RieszKind) -> Self {
        Self { terms: vec![(1.0, a), (-1.0, b)] }
    }

    pub fn kinds(&self) -> Vec<RieszKind> {
        self.terms.iter().map(|(_, k)| k.clone()).collect()
    }

    fn subgroup(&self) -> Result<bool> {
        let first = self.terms.first().ok_or_else(|| Error::Input("empty target".into()))?.1.needs_subgroup();
        if self.terms.iter().any(|(_, k)| k.needs_subgroup() != first) {
            return input("CATE terms cannot be combined with other kinds");
        }
        Ok(first)
    }
}

/// Static nuisances fitted on one fold's training rows.
pub trait StaticNuisanceFit: Send {
    /// `γ̂(1, d_j, x_j[, v_j])`.
    fn gamma(&self, d: &[f64], x: MatRef<'_, f64>, v: Option<MatRef<'_, f64>>) -> Result<Vec<f64>>;
    /// Uncensored `α̂` of kind `k` at the rows of `rows`.
    fn alpha(&self, k: usize, rows: &Dataset) -> Result<Vec<f64>>;
    fn penalties(&self) -> UsedPenalties {
        UsedPenalties::default()
    }
}

pub trait StaticNuisance: Sync {
    /// Fit on `train` only. The other rows of `data` must not be read.
    fn fit(
        &self,
        data: &Dataset,
        train: &[usize],
        kinds: &[RieszKind],
        shifted: Option<&ShiftedSample>,
    ) -> Result<Box<dyn StaticNuisanceFit>>;
}

/// Kernel ridge `γ̂` plus kernel ridge Riesz representers.
pub struct KernelStaticNuisance {
    pub kernels: KernelConfig,
    pub penalties: PenaltyConfig,
    pub seed: u64,
}

impl KernelStaticNuisance {
    pub fn from_config(cfg: &DmlConfig) -> Self {
        Self { kernels: cfg.kernels.clone(), penalties: cfg.penalties.clone(), seed: cfg.seed }
    }
}

struct KernelStaticFit {
    gamma: StaticFit,
    reps: Vec<crate::riesz::Representer>,
    lambda3: f64,
}

impl StaticNuisanceFit for KernelStaticFit {
    fn gamma(&self, d: &[f64], x: MatRef<'_, f64>, v: Option<MatRef<'_, f64>>) -> Result<Vec<f64>> {
        self.gamma.predict_selected(d, x, v)
    }

    fn alpha(&self, k: usize, rows: &Dataset) -> Result<Vec<f64>> {
        self.reps[k].evaluate(rows)
    }

    fn penalties(&self) -> UsedPenalties {
        let mut u = self.gamma.used_penalties();
        u.set(Penalty::Riesz, self.lambda3);
        u
    }
}

impl StaticNuisance for KernelStaticNuisance {
    fn fit(
        &self,
        data: &Dataset,
        train: &[usize],
        kinds: &[RieszKind],
        shifted: Option<&ShiftedSample>,
    ) -> Result<Box<dyn StaticNuisanceFit>> {
        let sub = data.subset(train);
        let subgroup = kinds.iter().any(|k| k.needs_subgroup());
        let kernels = self.kernels.resolve(&sub, self.seed)?;
        let design = if subgroup {
            StaticDesign::with_subgroup(&sub, kernels.clone(), self.penalties.clone())?
        } else {
            StaticDesign::new(&sub, kernels.clone(), self.penalties.clone())?
        };
        let gamma = match self.penalties.resolve_inference_outcome(sub.n()) {
            Resolution::Value(v) => StaticFit::with_lambda(design, v)?,
            Resolution::Tune(_) => StaticFit::new(design)?,
        };
        let solver = RieszSolver::new(&sub, kernels, &self.penalties, subgroup)?;
        let reps = kinds.iter().map(|k| solver.representer(k, shifted)).collect::<Result<Vec<_>>>()?;
        Ok(Box::new(KernelStaticFit { gamma, reps, lambda3: solver.lambda3() }))
    }
}

fn rows_match(m: MatRef<'_, f64>, i: usize, v: &[f64]) -> bool {
    (0..v.len()).all(|c| m[(i, c)] == v[c])
}

/// Check that the training rows of a fold can identify the kind.
fn check_support(data: &Dataset, train: &[usize], kind: &RieszKind, fold: usize) -> Result<()> {
    let sel = |pred: &dyn Fn(usize) -> bool| train.iter().any(|&i| data.s()[i] == 1.0 && pred(i));
    let ok = match kind {
        RieszKind::Ate { d } | RieszKind::Ds { d } => sel(&|i| data.d()[i] == *d),
        RieszKind::Att { d, dprime } => train.iter().any(|&i| data.d()[i] == *d) && sel(&|i| data.d()[i] == *dprime),
        RieszKind::Cate { d, v } => {
            let vm = data.v().ok_or_else(|| Error::Input("CATE needs a subcovariate column V".into()))?;
            sel(&|i| data.d()[i] == *d && rows_match(vm, i, v))
        }
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Estimation(format!("fold {fold}: no selected training unit supports {kind:?}")))
    }
}

/// Selection-free weight of a kind: `1{D=d}` for ATT, `1{V=v}` for CATE, else 1.
fn kind_weights(data: &Dataset, kind: &RieszKind) -> Vec<f64> {
    match kind {
        RieszKind::Att { d, .. } => data.d().iter().map(|&x| if x == *d { 1.0 } else { 0.0 }).collect(),
        RieszKind::Cate { v, .. } => {
            let vm = data.v().expect("checked");
            (0..data.n()).map(|i| if rows_match(vm, i, v) { 1.0 } else { 0.0 }).collect()
        }
        _ => vec![1.0; data.n()],
    }
}

struct StaticFoldOut {
    rows: Vec<usize>,
    /// `ψ_ik` for the rows, kind-major
    psi: Vec<Vec<f64>>,
    /// `γ̂_ℓ(1, d, X̃_j)` per DS kind (empty otherwise)
    shifted_m: Vec<Vec<f64>>,
    diag: FoldDiagnostics,
}

fn fill(n: usize, v: f64) -> Vec<f64> {
    vec![v; n]
}

/// Cross-fitted estimate of a static target with the default kernel learners.
pub fn dml_static(
    data: &Dataset,
    target: &StaticTarget,
    shifted: Option<&ShiftedSample>,
    cfg: &DmlConfig,
) -> Result<EffectEstimate> {
    let plan = make_folds(data.n(), cfg.folds, cfg.seed)?;
    dml_static_with(data, target, shifted, cfg, &plan, &KernelStaticNuisance::from_config(cfg))
}

pub fn dml_static_with(
    data: &Dataset,
    target: &StaticTarget,
    shifted: Option<&ShiftedSample>,
    cfg: &DmlConfig,
    plan: &FoldPlan,
    learner: &dyn StaticNuisance,
) -> Result<EffectEstimate> {
    cfg.validate()?;
    plan.validate(data.n())?;
    let subgroup = target.subgroup()?;
    let kinds = target.kinds();
    if kinds.iter().any(|k| matches!(k, RieszKind::Ds { .. })) && shifted.is_none() {
        return input("distribution-shift targets need a shifted sample");
    }
    let bound = cfg.bound();
    let order = plan.canonical_order();
    let outs: Vec<StaticFoldOut> = order
        .par_iter()
        .map(|&fold| -> Result<StaticFoldOut> {
            let rows = plan.fold(fold);
            let train = plan.complement(fold);
            for k in &kinds {
                check_support(data, &train, k, fold)?;
            }
            let fit = learner.fit(data, &train, &kinds, shifted)?;
            let eval = data.subset(&rows);
            let m = rows.len();
            let v_obs = if subgroup { eval.v() } else { None };
            let gamma_obs = fit.gamma(eval.d(), eval.x(), v_obs)?;
            let resid: Vec<f64> = eval.sy().iter().zip(&gamma_obs).map(|(y, g)| y - g).collect();
            let mut clipped = 0;
            let mut psi = Vec::with_capacity(kinds.len());
            let mut shifted_m = Vec::with_capacity(kinds.len());
            for (k, kind) in kinds.iter().enumerate() {
                let alpha: Vec<f64> = fit
                    .alpha(k, &eval)?
                    .into_iter()
                    .map(|a| {
                        let c = censor(a, bound);
                        clipped += usize::from(c != a);
                        c
                    })
                    .collect();
                let (mterm, mshift) = match kind {
                    RieszKind::Ate { d } => (fit.gamma(&fill(m, *d), eval.x(), None)?, vec![]),
                    RieszKind::Ds { d } => {
                        let sh = shifted.expect("checked above");
                        (vec![0.0; m], fit.gamma(&fill(sh.len(), *d), sh.x.as_ref(), None)?)
                    }
                    RieszKind::Att { d, dprime } => {
                        let g = fit.gamma(&fill(m, *dprime), eval.x(), None)?;
                        (g.iter().zip(eval.d()).map(|(g, &di)| if di == *d { *g } else { 0.0 }).collect(), vec![])
                    }
                    RieszKind::Cate { d, v } => {
                        let vq = Mat::from_fn(m, v.len(), |_, c| v[c]);
                        let g = fit.gamma(&fill(m, *d), eval.x(), Some(vq.as_ref()))?;
                        let vm = eval.v().expect("checked");
                        (g.iter().enumerate().map(|(i, g)| if rows_match(vm, i, v) { *g } else { 0.0 }).collect(), vec![])
                    }
                };
                psi.push(mterm.iter().zip(&alpha).zip(&resid).map(|((mt, a), r)| mt + a * r).collect());
                shifted_m.push(mshift);
            }
            let diag = FoldDiagnostics { fold, eval_size: m, train_size: train.len(), penalties: fit.penalties(), clipped };
            Ok(StaticFoldOut { rows, psi, shifted_m, diag })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = data.n();
    let nk = kinds.len();
    let mut psi = vec![vec![0.0; n]; nk];
    for out in &outs {
        for k in 0..nk {
            for (r, &i) in out.rows.iter().enumerate() {
                psi[k][i] = out.psi[k][r];
            }
        }
    }
    // shifted-sample plug-in averaged over folds
    let mut shift_term: Option<Vec<f64>> = None;
    for (k, kind) in kinds.iter().enumerate() {
        if let RieszKind::Ds { .. } = kind {
            let nt = shifted.unwrap().len();
            let mut mt = vec![0.0; nt];
            for out in &outs {
                for (j, v) in out.shifted_m[k].iter().enumerate() {
                    mt[j] += v;
                }
            }
            mt.iter_mut().for_each(|v| *v /= outs.len() as f64);
            let mbar = mt.iter().sum::<f64>() / nt as f64;
            psi[k].iter_mut().for_each(|p| *p += mbar);
            let c = target.terms[k].0;
            let acc = shift_term.get_or_insert_with(|| vec![0.0; nt]);
            for (a, v) in acc.iter_mut().zip(&mt) {
                *a += c * v;
            }
        }
    }
    let mut theta = 0.0;
    let mut influence = vec![0.0; n];
    for (k, kind) in kinds.iter().enumerate() {
        let w = kind_weights(data, kind);
        let den = w.iter().sum::<f64>() / n as f64;
        if den == 0.0 {
            return Err(Error::Estimation(format!("no unit in the subpopulation of {kind:?}")));
        }
        let num = psi[k].iter().sum::<f64>() / n as f64;
        let th = num / den;
        let c = target.terms[k].0;
        theta += c * th;
        for i in 0..n {
            influence[i] += c * (psi[k][i] - th * w[i]) / den;
        }
    }
    let mut var = influence.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if let Some(mt) = shift_term {
        let nt = mt.len() as f64;
        let mean = mt.iter().sum::<f64>() / nt;
        let vt = mt.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nt;
        var += n as f64 / nt * vt;
    }
    let mut diagnostics: Vec<FoldDiagnostics> = outs.into_iter().map(|o| o.diag).collect();
    diagnostics.sort_by_key(|d| d.fold);
    EffectEstimate::assemble(theta, var, cfg.level, plan.l, diagnostics, influence)
}

/// Dynamic nuisances fitted on one fold's training rows.
pub trait DynamicNuisanceFit: Send {
    /// `γ̂(1, d_j, x_j, m_j)`.
    fn gamma(&self, d: &[f64], x: MatRef<'_, f64>, m: MatRef<'_, f64>) -> Result<Vec<f64>>;
    /// `ω̂(1, d; x_j)`.
    fn omega(&self, d: f64, x: MatRef<'_, f64>) -> Result<Vec<f64>>;
    /// Unclipped `P̂(D=1 | x_j)`.
    fn pi(&self, x: MatRef<'_, f64>) -> Result<Vec<f64>>;
    /// Unclipped `P̂(S=1 | d_j, x_j, m_j)`.
    fn rho(&self, d: &[f64], x: MatRef<'_, f64>, m: MatRef<'_, f64>) -> Result<Vec<f64>>;
    fn penalties(&self) -> UsedPenalties {
        UsedPenalties::default()
    }
}

pub trait DynamicNuisance: Sync {
    fn fit(&self, data: &Dataset, train: &[usize]) -> Result<Box<dyn DynamicNuisanceFit>>;
}

pub struct KernelDynamicNuisance {
    pub kernels: KernelConfig,
    pub penalties: PenaltyConfig,
    pub seed: u64,
}

impl KernelDynamicNuisance {
    pub fn from_config(cfg: &DmlConfig) -> Self {
        Self { kernels: cfg.kernels.clone(), penalties: cfg.penalties.clone(), seed: cfg.seed }
    }
}

struct KernelDynamicFit {
    fit: DynamicFit,
    pi: RidgeWeights,
    rho: RidgeWeights,
}

fn ridge_penalty(cfg: &PenaltyConfig, p: Penalty, k: MatRef<'_, f64>, y: &[f64]) -> Result<f64> {
    match cfg.resolve(p, k.nrows()) {
        Resolution::Value(v) => Ok(v),
        Resolution::Tune(grid) => tune_lambda(k, y, &grid),
    }
}

impl KernelDynamicFit {
    fn rho_gram(&self, d: &[f64], x: MatRef<'_, f64>, m: MatRef<'_, f64>) -> Result<Mat<f64>> {
        let des = self.fit.design();
        let k = des.kernels();
        let tr = des.data();
        let kd = gram(&k.d, column(tr.d()).as_ref(), column(d).as_ref())?;
        let kx = gram(&k.x, tr.x(), x)?;
        let km = gram(k.m.as_ref().unwrap(), tr.m().unwrap(), m)?;
        Ok(hadamard_all(&[kd.as_ref(), kx.as_ref(), km.as_ref()]))
    }
}

impl DynamicNuisanceFit for KernelDynamicFit {
    fn gamma(&self, d: &[f64], x: MatRef<'_, f64>, m: MatRef<'_, f64>) -> Result<Vec<f64>> {
        self.fit.predict_selected(d, x, m)
    }

    fn omega(&self, d: f64, x: MatRef<'_, f64>) -> Result<Vec<f64>> {
        self.fit.omega_batch(d, x)
    }

    fn pi(&self, x: MatRef<'_, f64>) -> Result<Vec<f64>> {
        let des = self.fit.design();
        let kx = gram(&des.kernels().x, des.data().x(), x)?;
        Ok(tmatvec(kx.as_ref(), &self.pi.alpha))
    }

    fn rho(&self, d: &[f64], x: MatRef<'_, f64>, m: MatRef<'_, f64>) -> Result<Vec<f64>> {
        Ok(tmatvec(self.rho_gram(d, x, m)?.as_ref(), &self.rho.alpha))
    }

    fn penalties(&self) -> UsedPenalties {
        let mut u = self.fit.used_penalties();
        u.set(Penalty::Propensity, self.pi.lambda);
        u.set(Penalty::Selection, self.rho.lambda);
        u
    }
}

impl DynamicNuisance for KernelDynamicNuisance {
    fn fit(&self, data: &Dataset, train: &[usize]) -> Result<Box<dyn DynamicNuisanceFit>> {
        let sub = data.subset(train);
        let kernels = self.kernels.resolve(&sub, self.seed)?;
        let design = DynamicDesign::new(&sub, kernels, self.penalties.clone())?;
        let fit = match self.penalties.resolve_inference_outcome(sub.n()) {
            Resolution::Value(v) => DynamicFit::with_lambda(design, v)?,
            Resolution::Tune(_) => DynamicFit::new(design)?,
        };
        let g = fit.design().grams();
        let lam6 = ridge_penalty(&self.penalties, Penalty::Propensity, g.x.as_ref(), sub.d())?;
        let pi = ridge_solve(g.x.as_ref(), sub.d(), lam6)?;
        let kr = hadamard_all(&[g.d.as_ref(), g.x.as_ref(), g.m.as_ref().unwrap().as_ref()]);
        let lam7 = ridge_penalty(&self.penalties, Penalty::Selection, kr.as_ref(), sub.s())?;
        let rho = ridge_solve(kr.as_ref(), sub.s(), lam7)?;
        Ok(Box::new(KernelDynamicFit { fit, pi, rho }))
    }
}

/// A linear combination of dynamic dose values, e.g. `θ(1) − θ(0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicTarget {
    pub terms: Vec<(f64, f64)>,
}

impl DynamicTarget {
    pub fn single(d: f64) -> Self {
        Self { terms: vec![(1.0, d)] }
    }

    pub fn contrast(a: f64, b: f64) -> Self {
        Self { terms: vec![(1.0, a), (-1.0, b)] }
    }
}

struct DynamicFoldOut {
    rows: Vec<usize>,
    psi: Vec<Vec<f64>>,
    diag: FoldDiagnostics,
}

pub fn dml_dynamic(data: &Dataset, target: &DynamicTarget, cfg: &DmlConfig) -> Result<EffectEstimate> {
    let plan = make_folds(data.n(), cfg.folds, cfg.seed)?;
    dml_dynamic_with(data, target, cfg, &plan, &KernelDynamicNuisance::from_config(cfg))
}

pub fn dml_dynamic_with(
    data: &Dataset,
    target: &DynamicTarget,
    cfg: &DmlConfig,
    plan: &FoldPlan,
    learner: &dyn DynamicNuisance,
) -> Result<EffectEstimate> {
    cfg.validate()?;
    plan.validate(data.n())?;
    if data.m().is_none() {
        return input("dynamic inference needs the follow-up covariate M");
    }
    if target.terms.is_empty() {
        return input("empty target");
    }
    if let Some((_, d)) = target.terms.iter().find(|(_, d)| *d != 0.0 && *d != 1.0) {
        return input(format!("dynamic inference needs a binary treatment, got d = {d}"));
    }
    if let Some(bad) = data.d().iter().find(|&&d| d != 0.0 && d != 1.0) {
        return input(format!("dynamic inference needs a binary treatment column, found {bad}"));
    }
    let eps = cfg.eps;
    let order = plan.canonical_order();
    let outs: Vec<DynamicFoldOut> = order
        .par_iter()
        .map(|&fold| -> Result<DynamicFoldOut> {
            let rows = plan.fold(fold);
            let train = plan.complement(fold);
            for (_, d) in &target.terms {
                if !train.iter().any(|&i| data.d()[i] == *d && data.s()[i] == 1.0) {
                    return Err(Error::Estimation(format!("fold {fold}: no selected training unit with D = {d}")));
                }
            }
            let fit = learner.fit(data, &train)?;
            let eval = data.subset(&rows);
            let m = rows.len();
            let (x, mm) = (eval.x(), eval.m().unwrap());
            let pi1 = fit.pi(x)?;
            let mut clipped = 0;
            let mut clip = |p: f64| {
                let c = p.clamp(eps, 1.0 - eps);
                clipped += usize::from(c != p);
                c
            };
            let mut psi = Vec::with_capacity(target.terms.len());
            for (_, d) in &target.terms {
                let dv = fill(m, *d);
                let omega = fit.omega(*d, x)?;
                let gamma = fit.gamma(&dv, x, mm)?;
                let rho = fit.rho(&dv, x, mm)?;
                let mut out = Vec::with_capacity(m);
                for i in 0..m {
                    let p = clip(if *d == 1.0 { pi1[i] } else { 1.0 - pi1[i] });
                    let r = clip(rho[i]);
                    let ind = if eval.d()[i] == *d { 1.0 } else { 0.0 };
                    let s = eval.s()[i];
                    out.push(omega[i] + ind * s / (p * r) * (eval.sy()[i] - gamma[i]) + ind / p * (gamma[i] - omega[i]));
                }
                psi.push(out);
            }
            let diag = FoldDiagnostics { fold, eval_size: m, train_size: train.len(), penalties: fit.penalties(), clipped };
            Ok(DynamicFoldOut { rows, psi, diag })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.n();
    let mut psi = vec![vec![0.0; n]; target.terms.len()];
    for out in &outs {
        for (k, p) in out.psi.iter().enumerate() {
            for (r, &i) in out.rows.iter().enumerate() {
                psi[k][i] = p[r];
            }
        }
    }
    let mut theta = 0.0;
    let mut influence = vec![0.0; n];
    for (k, (c, _)) in target.terms.iter().enumerate() {
        let th = psi[k].iter().sum::<f64>() / n as f64;
        theta += c * th;
        for i in 0..n {
            influence[i] += c * (psi[k][i] - th);
        }
    }
    let var = influence.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mut diagnostics: Vec<FoldDiagnostics> = outs.into_iter().map(|o| o.diag).collect();
    diagnostics.sort_by_key(|d| d.fold);
    EffectEstimate::assemble(theta, var, cfg.level, plan.l, diagnostics, influence)
}
