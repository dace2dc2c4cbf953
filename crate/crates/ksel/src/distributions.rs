//! Counterfactual distribution embeddings, kernel herding and MMD.
//!
//! An embedding is `y ↦ Σ_i w_i S_i k_Y(Y_i, y)` where `w` solves the same
//! product system as the outcome regression with `λ₈` (static) or `λ₉`
//! (dynamic) and the curve's query vector on the right-hand side.

use faer::Mat;

use crate::data::{column, ShiftedSample};
use crate::dynamic_est::{DynTarget, DynamicDesign, DynamicForm, ShiftPrep};
use crate::embeddings::embedding_penalty;
use crate::error::{input, Error, Result};
use crate::kernels::{eval_kernel, gram, KernelSpec};
use crate::linalg::{mat_col, Chol};
use crate::penalty::{Penalty, PenaltyConfig};
use crate::static_est::{StaticDesign, Target};

pub const DEFAULT_GRID_POINTS: usize = 512;
pub const DEFAULT_PAD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub enum DistKind {
    Ate { d: f64 },
    Ds { d: f64 },
    Att { d: f64, dprime: f64 },
    Cate { d: f64, v: Vec<f64> },
    DynAte { d: f64 },
    DynDs { d: f64 },
}

impl DistKind {
    pub fn tag(&self) -> String {
        match self {
            DistKind::Ate { d } => format!("D:ATE({d})"),
            DistKind::Ds { d } => format!("D:DS({d})"),
            DistKind::Att { d, dprime } => format!("D:ATT({d},{dprime})"),
            DistKind::Cate { d, v } => format!("D:CATE({d},{v:?})"),
            DistKind::DynAte { d } => format!("D:dyn-ATE({d})"),
            DistKind::DynDs { d } => format!("D:dyn-DS({d})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistEmbedding {
    pub weights: Vec<f64>,
    pub y_kernel: KernelSpec,
    pub kind: DistKind,
    pub lambda: f64,
    s: Vec<f64>,
    sy: Vec<f64>,
}

impl DistEmbedding {
    /// Selected outcomes with their weights.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.s.iter().zip(&self.sy).zip(&self.weights).filter(|((s, _), _)| **s == 1.0).map(|((_, y), w)| (*y, *w))
    }

    pub fn evaluate(&self, y: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (yi, w) in self.atoms() {
            acc += w * eval_kernel(&self.y_kernel, &[yi], &[y])?;
        }
        Ok(acc)
    }

    pub fn evaluate_many(&self, ys: &[f64]) -> Result<Vec<f64>> {
        let (pts, w): (Vec<f64>, Vec<f64>) = self.atoms().unzip();
        if pts.is_empty() {
            return Ok(vec![0.0; ys.len()]);
        }
        let k = gram(&self.y_kernel, column(&pts).as_ref(), column(ys).as_ref())?;
        Ok(crate::linalg::tmatvec(k.as_ref(), &w))
    }

    /// Selected outcomes and a uniform grid over their range padded by `pad`,
    /// sorted and deduplicated.
    pub fn default_candidates(&self, points: usize, pad: f64) -> Vec<f64> {
        let ys: Vec<f64> = self.atoms().map(|(y, _)| y).collect();
        default_candidates(&ys, points, pad)
    }
}

pub fn default_candidates(ys: &[f64], points: usize, pad: f64) -> Vec<f64> {
    if ys.is_empty() {
        return Vec::new();
    }
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (a, b) = (lo - pad * (hi - lo), hi + pad * (hi - lo));
    let mut out: Vec<f64> = ys.to_vec();
    if points == 1 {
        out.push(0.5 * (a + b));
    } else {
        out.extend((0..points).map(|i| a + (b - a) * i as f64 / (points - 1) as f64));
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Factorised `K + nλI` plus the selected-outcome data.
struct Solver {
    chol: Chol,
    lambda: f64,
    y: KernelSpec,
    s: Vec<f64>,
    sy: Vec<f64>,
}

impl Solver {
    fn new(system: faer::MatRef<'_, f64>, s: &[f64], sy: &[f64], y: KernelSpec, cfg: &PenaltyConfig, p: Penalty) -> Result<Self> {
        if y.dim() != 1 {
            return input("the outcome kernel must be one-dimensional");
        }
        let n = s.len();
        let lambda = match cfg.overrides.get(&p) {
            Some(v) => *v,
            None => {
                let kyy = gram(&y, column(sy).as_ref(), column(sy).as_ref())?;
                let target = Mat::from_fn(n, n, |i, j| s[i] * s[j] * kyy[(i, j)]);
                embedding_penalty(cfg, p, system, target.as_ref())?
            }
        };
        Self::with_lambda(system, s, sy, y, lambda)
    }

    fn with_lambda(system: faer::MatRef<'_, f64>, s: &[f64], sy: &[f64], y: KernelSpec, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("distribution penalty must be positive, got {lambda}")));
        }
        let chol = Chol::shifted(system, s.len() as f64 * lambda)?;
        Ok(Self { chol, lambda, y, s: s.to_vec(), sy: sy.to_vec() })
    }

    fn embed(&self, q: Mat<f64>, kind: DistKind) -> Result<DistEmbedding> {
        let weights = mat_col(self.chol.solve_mat(q.as_ref()).as_ref(), 0);
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numeric("distribution embedding weights are not finite".into()));
        }
        Ok(DistEmbedding { weights, y_kernel: self.y.clone(), kind, lambda: self.lambda, s: self.s.clone(), sy: self.sy.clone() })
    }
}

/// Static embeddings sharing one factorization.
pub struct StaticDistribution {
    design: StaticDesign,
    solver: Solver,
}

impl StaticDistribution {
    /// `λ₈` from the penalty configuration, tuned by LOOCV with target `(SSᵀ)⊙K_YY`.
    pub fn new(design: StaticDesign, y: KernelSpec) -> Result<Self> {
        let d = design.data();
        let solver = Solver::new(design.system(), d.s(), d.sy(), y, design.penalties(), Penalty::DistStatic)?;
        Ok(Self { design, solver })
    }

    pub fn with_lambda(design: StaticDesign, y: KernelSpec, lambda: f64) -> Result<Self> {
        let d = design.data();
        let solver = Solver::with_lambda(design.system(), d.s(), d.sy(), y, lambda)?;
        Ok(Self { design, solver })
    }

    pub fn lambda8(&self) -> f64 {
        self.solver.lambda
    }

    pub fn design(&self) -> &StaticDesign {
        &self.design
    }

    pub fn embedding(&self, kind: &DistKind, shifted: Option<&ShiftedSample>) -> Result<DistEmbedding> {
        let q = match kind {
            DistKind::Ate { d } => self.design.queries(Target::Ate, &[*d], false)?,
            DistKind::Ds { d } => {
                let sh = shifted.ok_or_else(|| Error::Input("D:DS needs a shifted sample".into()))?;
                self.design.queries(Target::Ds(sh), &[*d], false)?
            }
            DistKind::Att { d, dprime } => self.design.queries(Target::Att { d: *d }, &[*dprime], false)?,
            DistKind::Cate { d, v } => self.design.queries(Target::Cate { v }, &[*d], false)?,
            DistKind::DynAte { .. } | DistKind::DynDs { .. } => {
                return input("dynamic distribution kinds need a dynamic design");
            }
        };
        self.solver.embed(q, kind.clone())
    }
}

/// Dynamic embeddings sharing one factorization.
pub struct DynamicDistribution {
    design: DynamicDesign,
    solver: Solver,
}

impl DynamicDistribution {
    pub fn new(design: DynamicDesign, y: KernelSpec) -> Result<Self> {
        let d = design.data();
        let solver = Solver::new(design.system(), d.s(), d.sy(), y, design.penalties(), Penalty::DistDynamic)?;
        Ok(Self { design, solver })
    }

    pub fn with_lambda(design: DynamicDesign, y: KernelSpec, lambda: f64) -> Result<Self> {
        let d = design.data();
        let solver = Solver::with_lambda(design.system(), d.s(), d.sy(), y, lambda)?;
        Ok(Self { design, solver })
    }

    pub fn lambda9(&self) -> f64 {
        self.solver.lambda
    }

    pub fn design(&self) -> &DynamicDesign {
        &self.design
    }

    pub fn embedding(&self, kind: &DistKind, shifted: Option<&ShiftPrep>) -> Result<DistEmbedding> {
        let q = match kind {
            DistKind::DynAte { d } => self.design.queries(DynTarget::Ate, &[*d], DynamicForm::Fast)?,
            DistKind::DynDs { d } => {
                let prep = shifted.ok_or_else(|| Error::Input("D:DS needs a shifted sample".into()))?;
                self.design.queries(DynTarget::Ds(prep), &[*d], DynamicForm::Fast)?
            }
            _ => return input("static distribution kinds need a static design"),
        };
        self.solver.embed(q, kind.clone())
    }
}

/// Greedy herding over a finite candidate set. Step `j` maximises
/// `θ̂(y) − (1/(j+1)) Σ_{ℓ<j} k_Y(Ỹ_ℓ, y)`; exact ties go to the smallest candidate.
pub fn herd(emb: &DistEmbedding, m: usize, candidates: &[f64]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return input("herding needs at least one candidate");
    }
    if m == 0 {
        return input("herding needs m ≥ 1");
    }
    if candidates.iter().any(|c| !c.is_finite()) {
        return input("herding candidates must be finite");
    }
    let theta = emb.evaluate_many(candidates)?;
    let mut penalty = vec![0.0; candidates.len()];
    let mut out = Vec::with_capacity(m);
    for j in 1..=m {
        let scale = 1.0 / (j as f64 + 1.0);
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (c, (&t, &p)) in theta.iter().zip(&penalty).enumerate() {
            let score = t - scale * p;
            if score > best_score || (score == best_score && candidates[c] < candidates[best]) {
                best = c;
                best_score = score;
            }
        }
        let pick = candidates[best];
        out.push(pick);
        for (p, &c) in penalty.iter_mut().zip(candidates) {
            *p += eval_kernel(&emb.y_kernel, &[pick], &[c])?;
        }
    }
    Ok(out)
}

/// RKHS distance between the fitted embedding and the empirical embedding of
/// `samples`, clamped at zero.
pub fn mmd(samples: &[f64], emb: &DistEmbedding) -> Result<f64> {
    if samples.is_empty() {
        return input("MMD needs at least one sample");
    }
    // one signed measure; merging coincident atoms keeps exact cancellations exact
    let inv = 1.0 / samples.len() as f64;
    let mut atoms: Vec<(f64, f64)> = emb.atoms().collect();
    atoms.extend(samples.iter().map(|&y| (y, -inv)));
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (y, c) in atoms {
        match merged.last_mut() {
            Some(last) if last.0 == y => last.1 += c,
            _ => merged.push((y, c)),
        }
    }
    let pts: Vec<f64> = merged.iter().map(|a| a.0).collect();
    let coef: Vec<f64> = merged.iter().map(|a| a.1).collect();
    let k = gram(&emb.y_kernel, column(&pts).as_ref(), column(&pts).as_ref())?;
    let kc = crate::linalg::matvec(k.as_ref(), &coef);
    let sq = crate::linalg::dot(&coef, &kc);
    Ok(sq.max(0.0).sqrt())
}
