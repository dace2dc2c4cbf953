//! Synthetic designs with known causal truths, oracle nuisances and a
//! replication harness.
//!
//! Replication `k` on rung `r` of the sample-size ladder draws data from
//! `splitmix64(seed + φ·(r·reps + k + 1))`, φ the 64-bit golden-ratio
//! increment, and seeds its folds with `splitmix64` of that value.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::{column, Dataset};
use crate::dml::{dml_dynamic, dml_static, DmlConfig, DynamicTarget, StaticTarget};
use crate::error::{input, Error, Result};
use crate::kernels::KernelConfig;
use crate::penalty::PenaltyConfig;
use crate::riesz::RieszKind;
use crate::static_est::StaticFit;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DgpId {
    /// binary treatment, binary covariate, linear selection
    S1,
    /// continuous treatment, quadratic response
    S2,
    /// binary treatment with a follow-up covariate driving selection
    D1,
}

impl DgpId {
    pub fn name(self) -> &'static str {
        match self {
            DgpId::S1 => "S1",
            DgpId::S2 => "S2",
            DgpId::D1 => "D1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(DgpId::S1),
            "S2" => Ok(DgpId::S2),
            "D1" => Ok(DgpId::D1),
            _ => Err(Error::Config(format!("unknown design {s:?}; expected S1, S2 or D1"))),
        }
    }

    pub fn is_dynamic(self) -> bool {
        self == DgpId::D1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DgpSpec {
    pub id: DgpId,
    /// outcome noise standard deviation
    pub noise_sd: f64,
    /// follow-up covariate noise standard deviation (D1)
    pub m_sd: f64,
    /// selection index coefficients `(intercept, D, X or M)`
    pub selection: [f64; 3],
    pub seed: u64,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

impl DgpSpec {
    pub fn new(id: DgpId, seed: u64) -> Self {
        let selection = match id {
            DgpId::S1 => [0.6, 0.2, 0.1],
            DgpId::S2 => [0.5, 1.0, -1.0],
            DgpId::D1 => [1.0, 0.5, -0.3],
        };
        Self { id, noise_sd: 0.1, m_sd: 0.5, selection, seed }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Checks noise scales and selection overlap on a grid of reachable values.
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite() && self.m_sd >= 0.0 && self.m_sd.is_finite()) {
            return Err(Error::Config("noise scales must be finite and nonnegative".into()));
        }
        if self.selection.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("selection coefficients must be finite".into()));
        }
        let grid: Vec<f64> = (0..=40).map(|i| -1.0 + i as f64 / 20.0).collect();
        let mut probs = Vec::new();
        match self.id {
            DgpId::S1 => {
                for d in [0.0, 1.0] {
                    for x in [-1.0, 1.0] {
                        probs.push(self.selection_prob(d, x, 0.0));
                    }
                }
            }
            DgpId::S2 => {
                for &x in &grid {
                    for &u in &grid {
                        probs.push(self.selection_prob(0.3 * x + u, x, 0.0));
                    }
                }
            }
            DgpId::D1 => {
                // M has unbounded support, so scan well into its tails
                for d in [0.0, 1.0] {
                    for &x in &grid {
                        for k in -12..=12 {
                            probs.push(self.selection_prob(d, x, d + x + k as f64 * self.m_sd / 2.0));
                        }
                    }
                }
            }
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::Config(format!("selection probability {p} violates overlap")));
        }
        Ok(())
    }

    /// `P(S=1 | d, x[, m])`.
    pub fn selection_prob(&self, d: f64, x: f64, m: f64) -> f64 {
        let [a, b, c] = self.selection;
        match self.id {
            DgpId::S1 => a + b * d + c * x,
            DgpId::S2 => 0.3 + 0.65 * sigmoid(a + b * d + c * x),
            DgpId::D1 => sigmoid(a + b * d + c * m).clamp(0.05, 0.95),
        }
    }

    /// `P(D=1 | x)` for the binary-treatment designs.
    pub fn propensity(&self, x: f64) -> Option<f64> {
        match self.id {
            DgpId::S1 => Some(0.5 + 0.2 * x),
            DgpId::D1 => Some(0.5 + 0.25 * x),
            DgpId::S2 => None,
        }
    }

    /// Structural outcome mean given `(d, x[, m])`; also `γ₀(1, d, x[, m])`.
    pub fn gamma0(&self, d: f64, x: f64, m: f64) -> f64 {
        match self.id {
            DgpId::S1 => d + 0.5 * x,
            DgpId::S2 => d * d + x * d,
            DgpId::D1 => m + x,
        }
    }

    /// `ω₀(1, d; x) = E[γ₀(1, d, x, M) | D=d, X=x]` (D1).
    pub fn omega0(&self, d: f64, x: f64) -> f64 {
        d + 2.0 * x
    }

    /// Static Riesz representer of `ATE(d)` at `(s, d_obs, x)`.
    pub fn alpha0_ate(&self, d: f64, s: f64, d_obs: f64, x: f64) -> Result<f64> {
        let p1 = self.propensity(x).ok_or_else(|| Error::Unsupported("the representer needs a binary treatment".into()))?;
        if d_obs != d || s == 0.0 {
            return Ok(0.0);
        }
        let pd = if d == 1.0 { p1 } else { 1.0 - p1 };
        Ok(1.0 / (pd * self.selection_prob(d, x, 0.0)))
    }

    pub fn simulate(&self, n: usize) -> Result<Dataset> {
        if n == 0 {
            return input("cannot simulate an empty sample");
        }
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
        let m_noise = Normal::new(0.0, self.m_sd).map_err(|e| Error::Config(e.to_string()))?;
        let (mut s, mut y, mut d, mut x, mut m) = (vec![], vec![], vec![], vec![], vec![]);
        for _ in 0..n {
            let (xi, di, mi) = match self.id {
                DgpId::S1 => {
                    let xi = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let di = if rng.random::<f64>() < 0.5 + 0.2 * xi { 1.0 } else { 0.0 };
                    (xi, di, 0.0)
                }
                DgpId::S2 => {
                    let xi = rng.random_range(-1.0..1.0);
                    (xi, 0.3 * xi + rng.random_range(-1.0..1.0), 0.0)
                }
                DgpId::D1 => {
                    let xi = rng.random_range(-1.0..1.0);
                    let di = if rng.random::<f64>() < 0.5 + 0.25 * xi { 1.0 } else { 0.0 };
                    (xi, di, di + xi + m_noise.sample(&mut rng))
                }
            };
            let yi = self.gamma0(di, xi, mi) + noise.sample(&mut rng);
            let si = if rng.random::<f64>() < self.selection_prob(di, xi, mi) { 1.0 } else { 0.0 };
            s.push(si);
            y.push(if si == 1.0 { yi } else { 0.0 });
            d.push(di);
            x.push(xi);
            m.push(mi);
        }
        let data = Dataset::new(s, &y, d, column(&x))?;
        if self.id.is_dynamic() {
            data.with_m(column(&m))
        } else {
            Ok(data)
        }
    }

    /// Closed-form causal value.
    pub fn true_value(&self, target: &Truth) -> Result<f64> {
        match (self.id, target) {
            (_, Truth::Contrast(a, b)) => Ok(self.true_value(&Truth::Ate(*a))? - self.true_value(&Truth::Ate(*b))?),
            (DgpId::S1, Truth::Ate(d)) | (DgpId::D1, Truth::Ate(d)) if *d == 0.0 || *d == 1.0 => Ok(*d),
            (DgpId::S2, Truth::Ate(d)) => Ok(d * d),
            (DgpId::S1, Truth::Att { d, dprime }) if *d == 0.0 || *d == 1.0 => {
                // P(X=1 | D=1) = 0.7, P(X=1 | D=0) = 0.3
                let ex = if *d == 1.0 { 0.4 } else { -0.4 };
                Ok(dprime + 0.5 * ex)
            }
            (DgpId::S2, Truth::Att { d, dprime }) => {
                // X | D=d is uniform on [-1,1] ∩ [(d-1)/0.3, (d+1)/0.3]
                let lo = ((d - 1.0) / 0.3).max(-1.0);
                let hi = ((d + 1.0) / 0.3).min(1.0);
                if lo >= hi {
                    return input(format!("D = {d} is outside the treatment support"));
                }
                Ok(dprime * dprime + 0.5 * (lo + hi) * dprime)
            }
            _ => Err(Error::Unsupported(format!("{target:?} on design {}", self.id.name()))),
        }
    }

    /// Monte Carlo estimate of an interventional mean by drawing `Y^{(d)}` from
    /// the structural equations; returns `(mean, standard error)`.
    pub fn monte_carlo_value(&self, target: &Truth, draws: usize, seed: u64) -> Result<(f64, f64)> {
        if draws < 2 {
            return input("need at least two draws");
        }
        let (a, b) = match target {
            Truth::Ate(d) => (*d, None),
            Truth::Contrast(a, b) => (*a, Some(*b)),
            Truth::Att { .. } => return Err(Error::Unsupported("Monte Carlo covers interventional means only".into())),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
        let m_noise = Normal::new(0.0, self.m_sd).map_err(|e| Error::Config(e.to_string()))?;
        let draw = |d: f64, x: f64, rng: &mut ChaCha8Rng| {
            let m = if self.id.is_dynamic() { d + x + m_noise.sample(rng) } else { 0.0 };
            self.gamma0(d, x, m) + noise.sample(rng)
        };
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..draws {
            let x = match self.id {
                DgpId::S1 => {
                    if rng.random_bool(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                }
                _ => rng.random_range(-1.0..1.0),
            };
            let mut v = draw(a, x, &mut rng);
            if let Some(b) = b {
                v -= draw(b, x, &mut rng);
            }
            sum += v;
            sq += v * v;
        }
        let nf = draws as f64;
        let mean = sum / nf;
        let var = (sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
        Ok((mean, (var / nf).sqrt()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Truth {
    Ate(f64),
    Contrast(f64, f64),
    Att { d: f64, dprime: f64 },
}

/// What each replication estimates.
#[derive(Clone, Debug)]
pub enum Experiment {
    /// Static ATE curve on a grid; the error is the sup over the grid.
    Curve { grid: Vec<f64>, kernels: KernelConfig, penalties: PenaltyConfig },
    StaticDml { target: StaticTarget, truth: Truth, cfg: DmlConfig },
    DynamicDml { target: DynamicTarget, truth: Truth, cfg: DmlConfig },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RepRow {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    /// point estimate, or the sup-norm error for curves
    pub estimate: f64,
    pub truth: f64,
    pub bias: f64,
    pub abs_error: f64,
    pub se: Option<f64>,
    pub covered: Option<bool>,
    pub runtime_secs: f64,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RungSummary {
    pub n: usize,
    pub reps: usize,
    pub failures: usize,
    pub rmse: f64,
    pub mean_bias: f64,
    pub median_abs_error: f64,
    pub coverage: Option<f64>,
    pub median_runtime_secs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub dgp: DgpId,
    pub seed: u64,
    pub reps: usize,
    pub rows: Vec<RepRow>,
    pub summary: Vec<RungSummary>,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rep_seed(seed: u64, rung: usize, reps: usize, rep: usize) -> u64 {
    let k = (rung * reps + rep + 1) as u64;
    splitmix64(seed.wrapping_add(k.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn run_one(dgp: &DgpSpec, exp: &Experiment, n: usize, rep: usize, seed: u64) -> RepRow {
    let start = Instant::now();
    let outcome = (|| -> Result<(f64, f64, Option<f64>, Option<bool>, f64)> {
        let data = dgp.with_seed(seed).simulate(n)?;
        let fold_seed = splitmix64(seed);
        match exp {
            Experiment::Curve { grid, kernels, penalties } => {
                let k = kernels.resolve(&data, fold_seed)?;
                let fit = StaticFit::fit(&data, k, penalties.clone())?;
                let curve = fit.ate_curve(grid)?;
                let mut sup: f64 = 0.0;
                let mut bias = 0.0;
                for (g, v) in grid.iter().zip(&curve.values) {
                    let e = v - dgp.true_value(&Truth::Ate(*g))?;
                    sup = sup.max(e.abs());
                    bias += e / grid.len() as f64;
                }
                Ok((sup, 0.0, None, None, bias))
            }
            Experiment::StaticDml { target, truth, cfg } => {
                let est = dml_static(&data, target, None, &DmlConfig { seed: fold_seed, ..cfg.clone() })?;
                let t = dgp.true_value(truth)?;
                Ok((est.theta, t, Some(est.sigma / (n as f64).sqrt()), Some(est.ci.0 <= t && t <= est.ci.1), est.theta - t))
            }
            Experiment::DynamicDml { target, truth, cfg } => {
                let est = dml_dynamic(&data, target, &DmlConfig { seed: fold_seed, ..cfg.clone() })?;
                let t = dgp.true_value(truth)?;
                Ok((est.theta, t, Some(est.sigma / (n as f64).sqrt()), Some(est.ci.0 <= t && t <= est.ci.1), est.theta - t))
            }
        }
    })();
    let runtime_secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok((estimate, truth, se, covered, bias)) => {
            let abs_error = if matches!(exp, Experiment::Curve { .. }) { estimate } else { bias.abs() };
            RepRow { n, rep, seed, estimate, truth, bias, abs_error, se, covered, runtime_secs, failure: None }
        }
        Err(e) => RepRow {
            n,
            rep,
            seed,
            estimate: f64::NAN,
            truth: f64::NAN,
            bias: f64::NAN,
            abs_error: f64::NAN,
            se: None,
            covered: None,
            runtime_secs,
            failure: Some(e.to_string()),
        },
    }
}

/// Replicates `exp` `reps` times at every sample size. A failing replication
/// is recorded in its row and excluded from the summary.
pub fn run_experiment(dgp: &DgpSpec, exp: &Experiment, ladder: &[usize], reps: usize, seed: u64) -> Result<Report> {
    if reps == 0 {
        return input("need at least one replication");
    }
    if ladder.is_empty() || ladder.contains(&0) {
        return input("sample-size ladder must be nonempty and positive");
    }
    dgp.validate()?;
    let jobs: Vec<(usize, usize, usize)> =
        ladder.iter().enumerate().flat_map(|(r, &n)| (0..reps).map(move |k| (r, n, k))).collect();
    let rows: Vec<RepRow> =
        jobs.par_iter().map(|&(r, n, k)| run_one(dgp, exp, n, k, rep_seed(seed, r, reps, k))).collect();
    let summary = ladder
        .iter()
        .map(|&n| {
            let ok: Vec<&RepRow> = rows.iter().filter(|r| r.n == n && r.failure.is_none()).collect();
            let failures = rows.iter().filter(|r| r.n == n).count() - ok.len();
            let m = ok.len() as f64;
            let rmse = (ok.iter().map(|r| r.abs_error * r.abs_error).sum::<f64>() / m).sqrt();
            let mean_bias = ok.iter().map(|r| r.bias).sum::<f64>() / m;
            let covers: Vec<bool> = ok.iter().filter_map(|r| r.covered).collect();
            let coverage =
                (!covers.is_empty()).then(|| covers.iter().filter(|c| **c).count() as f64 / covers.len() as f64);
            let mut errs: Vec<f64> = ok.iter().map(|r| r.abs_error).collect();
            let mut times: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.runtime_secs).collect();
            RungSummary {
                n,
                reps,
                failures,
                rmse,
                mean_bias,
                median_abs_error: median(&mut errs),
                coverage,
                median_runtime_secs: median(&mut times),
            }
        })
        .collect();
    Ok(Report { dgp: dgp.id, seed, reps, rows, summary })
}

/// Default static DML setup for the ATE contrast on S1.
pub fn s1_contrast() -> (StaticTarget, Truth) {
    (StaticTarget::contrast(RieszKind::Ate { d: 1.0 }, RieszKind::Ate { d: 0.0 }), Truth::Contrast(1.0, 0.0))
}
