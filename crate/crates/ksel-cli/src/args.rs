use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ksel::kernels::{KernelChoice, KernelConfig};
use ksel::penalty::{Penalty, PenaltyConfig, PenaltyMode, TheoryRates};
use ksel::ridge::LambdaGrid;

#[derive(Parser, Debug)]
#[command(name = "ksel", version, about = "Kernel causal estimators under sample selection")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate a response curve on a grid.
    FitCurve(FitCurveArgs),
    /// Debiased point estimate and confidence interval.
    Infer(InferArgs),
    /// Draw a synthetic dataset.
    Simulate(SimulateArgs),
    /// Replicate an estimator on a synthetic design.
    Coverage(CoverageArgs),
    /// Herd samples from a counterfactual distribution.
    Herd(HerdArgs),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Role {
    S,
    Y,
    D,
    X,
    M,
    V,
}

pub fn parse_col(s: &str) -> Result<(Role, String), String> {
    let (role, name) = s.split_once('=').ok_or("expected ROLE=COLUMN")?;
    let role = match role {
        "s" => Role::S,
        "y" => Role::Y,
        "d" => Role::D,
        "x" => Role::X,
        "m" => Role::M,
        "v" => Role::V,
        _ => return Err(format!("unknown role {role:?}; expected one of s, y, d, x, m, v")),
    };
    if name.is_empty() {
        return Err("empty column name".into());
    }
    Ok((role, name.to_string()))
}

pub fn parse_kernel(s: &str) -> Result<(Role, KernelChoice), String> {
    let (role, spec) = s.split_once('=').ok_or("expected ROLE=median|indicator|gaussian:L[,L...]")?;
    let (role, _) = parse_col(&format!("{role}=_"))?;
    let choice = match spec {
        "median" => KernelChoice::Median,
        "indicator" => KernelChoice::Indicator,
        _ => {
            let ls = spec.strip_prefix("gaussian:").ok_or_else(|| format!("unknown kernel {spec:?}"))?;
            let v = ls.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<Vec<_>, _>>()?;
            KernelChoice::Gaussian(v)
        }
    };
    Ok((role, choice))
}

/// `loocv`, `loocv:LO:HI:COUNT`, `fixed:VALUE` or `theory:C[:C3[:B3]]`.
pub fn parse_penalty(s: &str) -> Result<PenaltyMode, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums = |xs: &[&str]| xs.iter().map(|t| t.parse::<f64>().map_err(|e| format!("{t:?}: {e}"))).collect::<Result<Vec<_>, _>>();
    match parts[0] {
        "loocv" if parts.len() == 1 => Ok(PenaltyMode::Loocv(LambdaGrid::default())),
        "loocv" if parts.len() == 4 => {
            let v = nums(&parts[1..3])?;
            let count: usize = parts[3].parse().map_err(|e| format!("grid count: {e}"))?;
            Ok(PenaltyMode::Loocv(LambdaGrid::log_spaced(v[0], v[1], count).map_err(|e| e.to_string())?))
        }
        "fixed" if parts.len() == 2 => Ok(PenaltyMode::Fixed(nums(&parts[1..])?[0])),
        "theory" if (2..=4).contains(&parts.len()) => {
            let v = nums(&parts[1..])?;
            Ok(PenaltyMode::Theory(TheoryRates { c: v[0], c3: *v.get(1).unwrap_or(&v[0]), b3: v.get(2).copied() }))
        }
        _ => Err("expected loocv, loocv:LO:HI:COUNT, fixed:VALUE or theory:C[:C3[:B3]]".into()),
    }
}

pub fn parse_override(s: &str) -> Result<(Penalty, f64), String> {
    let (name, v) = s.split_once('=').ok_or("expected lambdaK=VALUE")?;
    let p = Penalty::from_name(name).ok_or_else(|| format!("unknown penalty {name:?}; expected lambda or lambda1..lambda9"))?;
    Ok((p, v.parse().map_err(|e| format!("{v:?}: {e}"))?))
}

/// A list of reals given as one flag value.
#[derive(Clone, Debug, PartialEq)]
pub struct Values(pub Vec<f64>);

/// `LO:HI:COUNT` or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Values, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty grid".into());
    }
    let parts: Vec<&str> = s.split(':').collect();
    let grid = if parts.len() == 3 {
        let lo: f64 = parts[0].parse().map_err(|e| format!("{:?}: {e}", parts[0]))?;
        let hi: f64 = parts[1].parse().map_err(|e| format!("{:?}: {e}", parts[1]))?;
        let count: usize = parts[2].parse().map_err(|e| format!("{:?}: {e}", parts[2]))?;
        match count {
            0 => return Err("grid needs at least one point".into()),
            1 => vec![lo],
            _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
        }
    } else {
        s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"))).collect::<Result<Vec<_>, _>>()?
    };
    if grid.iter().any(|g| !g.is_finite()) {
        return Err("grid values must be finite".into());
    }
    Ok(Values(grid))
}

pub fn parse_vector(s: &str) -> Result<Values, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"))).collect::<Result<_, _>>().map(Values)
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Column roles, e.g. `--col s=selected --col x=age`; repeat `x`, `m`, `v` for several columns.
    #[arg(long = "col", value_parser = parse_col, required = true)]
    pub cols: Vec<(Role, String)>,
    /// Covariates drawn from the shifted population, same column names.
    #[arg(long)]
    pub shifted: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    /// Penalty mode: loocv, loocv:LO:HI:COUNT, fixed:VALUE or theory:C[:C3[:B3]].
    #[arg(long, default_value = "loocv", value_parser = parse_penalty)]
    pub penalty: PenaltyMode,
    /// Pin one penalty, e.g. `--lambda lambda3=0.01`.
    #[arg(long = "lambda", value_parser = parse_override)]
    pub lambdas: Vec<(Penalty, f64)>,
    /// Kernel per role, e.g. `--kernel d=indicator --kernel y=gaussian:0.5`.
    #[arg(long = "kernel", value_parser = parse_kernel)]
    pub kernels: Vec<(Role, KernelChoice)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ModelArgs {
    pub fn penalty_config(&self) -> PenaltyConfig {
        let mut cfg = PenaltyConfig { mode: self.penalty.clone(), ..PenaltyConfig::default() };
        for (p, v) in &self.lambdas {
            cfg = cfg.with(*p, *v);
        }
        cfg
    }

    pub fn kernel_config(&self, mut base: KernelConfig) -> KernelConfig {
        for (role, k) in &self.kernels {
            let slot = match role {
                Role::S => &mut base.s,
                Role::D => &mut base.d,
                Role::X => &mut base.x,
                Role::M => &mut base.m,
                Role::V => &mut base.v,
                Role::Y => &mut base.y,
            };
            *slot = k.clone();
        }
        base
    }
}

#[derive(Args, Debug)]
pub struct FitCurveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// ate, ds, att, cate, grad-ate, grad-ds, grad-att, grad-cate, dyn-ate or dyn-ds.
    #[arg(long)]
    pub estimand: String,
    /// Treatment grid, `LO:HI:COUNT` or `a,b,c`. For ATT it runs over d'.
    #[arg(long, value_parser = parse_grid, allow_hyphen_values = true)]
    pub grid: Values,
    /// Conditioning treatment value for ATT.
    #[arg(long, allow_hyphen_values = true)]
    pub d: Option<f64>,
    /// Subgroup value for CATE, comma separated.
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    pub v: Option<Values>,
    /// Output prefix; writes PREFIX.csv and PREFIX.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// ate, att, cate, ds or dyn-ate.
    #[arg(long)]
    pub estimand: String,
    /// Treatment value.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub d: f64,
    /// Baseline treatment value; estimates the contrast d − d0 when given.
    #[arg(long, allow_hyphen_values = true)]
    pub d0: Option<f64>,
    /// Counterfactual treatment for ATT.
    #[arg(long, allow_hyphen_values = true)]
    pub dprime: Option<f64>,
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    pub v: Option<Values>,
    #[arg(long, default_value_t = ksel::dml::DEFAULT_FOLDS)]
    pub folds: usize,
    /// Significance level `a` of the `1 − a` interval.
    #[arg(long, default_value_t = ksel::dml::DEFAULT_LEVEL)]
    pub level: f64,
    /// Propensity clipping margin; Riesz values are censored at 1/eps².
    #[arg(long, default_value_t = ksel::riesz::DEFAULT_EPS)]
    pub eps: f64,
    /// Output JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// S1, S2 or D1.
    #[arg(long)]
    pub dgp: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    /// S1 (static ATE contrast), D1 (dynamic contrast) or S2 (ATE curve sup error).
    #[arg(long)]
    pub dgp: String,
    /// Sample sizes; repeat for a ladder.
    #[arg(long = "n", required = true)]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = ksel::dml::DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = ksel::dml::DEFAULT_LEVEL)]
    pub level: f64,
    /// Grid for the S2 curve.
    #[arg(long, value_parser = parse_grid, default_value = "-1:1:41", allow_hyphen_values = true)]
    pub grid: Values,
    #[arg(long, default_value = "loocv", value_parser = parse_penalty)]
    pub penalty: PenaltyMode,
    /// Output prefix; writes PREFIX.csv and PREFIX.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct HerdArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// ate, ds, att, cate, dyn-ate or dyn-ds.
    #[arg(long)]
    pub estimand: String,
    #[arg(long, allow_hyphen_values = true)]
    pub d: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub dprime: Option<f64>,
    #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
    pub v: Option<Values>,
    /// Number of herded samples.
    #[arg(long)]
    pub samples: usize,
    /// Uniform grid points added to the observed outcomes as candidates.
    #[arg(long, default_value_t = ksel::distributions::DEFAULT_GRID_POINTS)]
    pub grid_points: usize,
    /// Output prefix; writes PREFIX.csv and PREFIX.json.
    #[arg(long)]
    pub out: PathBuf,
}
