//! Penalty selection: LOOCV, fixed, or rate-based ("theory") schedules.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{config, Result};
use crate::ridge::LambdaGrid;

/// Every ridge penalty used by the estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Penalty {
    /// outcome regression γ
    Outcome,
    /// embedding of X given D (ATT)
    TreatmentEmbedding,
    /// embedding of X given V (CATE)
    SubgroupEmbedding,
    /// Riesz representer
    Riesz,
    /// embedding of M given (D, X)
    Sequential,
    /// embedding of M given (D, X) in the shifted population
    ShiftedSequential,
    /// treatment propensity
    Propensity,
    /// selection propensity
    Selection,
    /// static distribution embedding
    DistStatic,
    /// dynamic distribution embedding
    DistDynamic,
}

impl Penalty {
    pub const ALL: [Penalty; 10] = [
        Penalty::Outcome,
        Penalty::TreatmentEmbedding,
        Penalty::SubgroupEmbedding,
        Penalty::Riesz,
        Penalty::Sequential,
        Penalty::ShiftedSequential,
        Penalty::Propensity,
        Penalty::Selection,
        Penalty::DistStatic,
        Penalty::DistDynamic,
    ];

    /// `lambda`, `lambda1`, ..., `lambda9`.
    pub fn name(self) -> &'static str {
        match self {
            Penalty::Outcome => "lambda",
            Penalty::TreatmentEmbedding => "lambda1",
            Penalty::SubgroupEmbedding => "lambda2",
            Penalty::Riesz => "lambda3",
            Penalty::Sequential => "lambda4",
            Penalty::ShiftedSequential => "lambda5",
            Penalty::Propensity => "lambda6",
            Penalty::Selection => "lambda7",
            Penalty::DistStatic => "lambda8",
            Penalty::DistDynamic => "lambda9",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Exponents of the rate schedule `λ = n^{-1/(c+1)}`, with
/// `λ₃ = n^{-b₃/(b₃c₃+1)}` (or `n^{-1/2}` when `b₃` is infinite). The
/// propensity penalties `λ₆, λ₇` share the `λ₃` exponents.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryRates {
    pub c: f64,
    pub c3: f64,
    pub b3: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PenaltyMode {
    Loocv(LambdaGrid),
    Fixed(f64),
    Theory(TheoryRates),
}

pub const DEFAULT_FIXED: f64 = 1e-3;
pub const DEFAULT_RIESZ_SCALE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyConfig {
    pub mode: PenaltyMode,
    /// Values that bypass the mode entirely.
    pub overrides: BTreeMap<Penalty, f64>,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { mode: PenaltyMode::Loocv(LambdaGrid::default()), overrides: BTreeMap::new() }
    }
}

/// What the caller should do for a penalty.
pub enum Resolution {
    Value(f64),
    Tune(LambdaGrid),
}

impl PenaltyConfig {
    pub fn fixed(value: f64) -> Self {
        Self { mode: PenaltyMode::Fixed(value), overrides: BTreeMap::new() }
    }

    pub fn theory(c: f64) -> Self {
        Self { mode: PenaltyMode::Theory(TheoryRates { c, c3: c, b3: None }), overrides: BTreeMap::new() }
    }

    pub fn with(mut self, p: Penalty, value: f64) -> Self {
        self.overrides.insert(p, value);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (p, v) in &self.overrides {
            if !(*v > 0.0 && v.is_finite()) {
                return config(format!("{p} must be positive, got {v}"));
            }
        }
        match &self.mode {
            PenaltyMode::Fixed(v) if !(*v > 0.0 && v.is_finite()) => config(format!("fixed penalty must be positive, got {v}")),
            PenaltyMode::Theory(t) => {
                if !(t.c > 0.0 && t.c3 > 0.0) || t.b3.is_some_and(|b| b <= 0.0) {
                    return config("theory exponents must be positive");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `n` is the sample size of the regression the penalty belongs to.
    pub fn resolve(&self, p: Penalty, n: usize) -> Resolution {
        if let Some(v) = self.overrides.get(&p) {
            return Resolution::Value(*v);
        }
        let n = n as f64;
        match &self.mode {
            PenaltyMode::Fixed(v) => Resolution::Value(*v),
            PenaltyMode::Theory(t) => match p {
                Penalty::Riesz | Penalty::Propensity | Penalty::Selection => Resolution::Value(match t.b3 {
                    None => n.powf(-0.5),
                    Some(b) => n.powf(-b / (b * t.c3 + 1.0)),
                }),
                _ => Resolution::Value(n.powf(-1.0 / (t.c + 1.0))),
            },
            PenaltyMode::Loocv(grid) => Resolution::Tune(grid.clone()),
        }
    }

    /// Outcome penalty for inference, `n^{-(c-1)/(2(c+1))}` under the rate schedule.
    pub fn resolve_inference_outcome(&self, n: usize) -> Resolution {
        match (&self.mode, self.overrides.get(&Penalty::Outcome)) {
            (PenaltyMode::Theory(t), None) => Resolution::Value((n as f64).powf(-0.5 * (t.c - 1.0) / (t.c + 1.0))),
            _ => self.resolve(Penalty::Outcome, n),
        }
    }
}

/// Penalties actually used by a fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UsedPenalties(pub BTreeMap<Penalty, f64>);

impl UsedPenalties {
    pub fn set(&mut self, p: Penalty, v: f64) {
        self.0.insert(p, v);
    }

    pub fn get(&self, p: Penalty) -> Option<f64> {
        self.0.get(&p).copied()
    }

    pub fn merge(&mut self, other: &UsedPenalties) {
        for (k, v) in &other.0 {
            self.0.insert(*k, *v);
        }
    }
}
