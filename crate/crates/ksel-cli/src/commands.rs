use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{anyhow, bail, Result};
use ksel::distributions::{herd, mmd, DistKind, DynamicDistribution, StaticDistribution, DEFAULT_PAD};
use ksel::dml::{dml_dynamic, dml_static, DmlConfig, DynamicTarget, StaticTarget};
use ksel::dynamic_est::{DynamicDesign, DynamicFit};
use ksel::kernels::KernelConfig;
use ksel::penalty::{PenaltyConfig, UsedPenalties};
use ksel::riesz::RieszKind;
use ksel::simulation::{run_experiment, DgpId, DgpSpec, Experiment, Truth};
use ksel::static_est::{Estimand, StaticDesign, StaticFit, Target};
use ksel::{Dataset, ShiftedSample};
use serde::Serialize;
use serde_json::value::RawValue;

use crate::args::{CoverageArgs, DataArgs, FitCurveArgs, HerdArgs, InferArgs, SimulateArgs};
use crate::input::{read_dataset, read_shifted, Roles};
use crate::output::{fmt, kernels_json, num, penalties, with_ext, write_csv, write_json, KernelJson, SCHEMA_VERSION};

type Raw = Box<RawValue>;

struct Inputs {
    data: Dataset,
    shifted: Option<ShiftedSample>,
}

fn load(a: &DataArgs) -> Result<Inputs> {
    let roles = Roles::from_pairs(&a.cols)?;
    let loaded = read_dataset(&a.data, &roles)?;
    for w in &loaded.warnings {
        eprintln!("warning: {}: {w}", a.data.display());
    }
    let shifted = a.shifted.as_ref().map(|p| read_shifted(p, &roles)).transpose()?;
    Ok(Inputs { data: loaded.data, shifted })
}

fn need_shifted(s: &Option<ShiftedSample>) -> Result<&ShiftedSample> {
    s.as_ref().ok_or_else(|| anyhow!("this estimand needs --shifted"))
}

#[derive(Serialize)]
struct CurveMeta {
    schema_version: u32,
    command: &'static str,
    estimand: &'static str,
    n: usize,
    n_selected: usize,
    grid_size: usize,
    d: Option<Raw>,
    v: Option<Vec<Raw>>,
    penalties: BTreeMap<String, Raw>,
    kernels: BTreeMap<&'static str, KernelJson>,
    seed: u64,
    runtime_secs: Raw,
}

pub fn fit_curve(a: &FitCurveArgs) -> Result<()> {
    let start = Instant::now();
    let estimand = Estimand::from_name(&a.estimand).ok_or_else(|| {
        let names: Vec<&str> = Estimand::ALL.iter().map(|e| e.name()).collect();
        anyhow!("unknown estimand {:?}; expected one of {}", a.estimand, names.join(", "))
    })?;
    let inp = load(&a.data)?;
    let kernels = a.model.kernel_config(KernelConfig::default()).resolve(&inp.data, a.model.seed)?;
    let pcfg = a.model.penalty_config();
    let grid = &a.grid.0;
    let v = a.v.as_ref().map(|v| v.0.clone());
    let (curve, used) = match estimand {
        Estimand::DynAte | Estimand::DynDs => {
            let fit = DynamicFit::fit(&inp.data, kernels.clone(), pcfg)?;
            let c = if estimand == Estimand::DynAte {
                fit.ate_curve(grid)?
            } else {
                fit.ds_curve(need_shifted(&inp.shifted)?, grid)?
            };
            (c, fit.used_penalties())
        }
        _ => {
            let cate = matches!(estimand, Estimand::Cate | Estimand::GradCate);
            let fit = if cate {
                StaticFit::fit_subgroup(&inp.data, kernels.clone(), pcfg)?
            } else {
                StaticFit::fit(&inp.data, kernels.clone(), pcfg)?
            };
            let target = match estimand {
                Estimand::Ate | Estimand::GradAte => Target::Ate,
                Estimand::Ds | Estimand::GradDs => Target::Ds(need_shifted(&inp.shifted)?),
                Estimand::Att | Estimand::GradAtt => Target::Att { d: a.d.ok_or_else(|| anyhow!("ATT needs --d"))? },
                _ => Target::Cate { v: v.as_deref().ok_or_else(|| anyhow!("CATE needs --v"))? },
            };
            let c = fit.curve(target, grid, estimand.is_gradient())?;
            (c, fit.used_penalties())
        }
    };
    write_csv(
        &with_ext(&a.out, "csv"),
        &["d", "estimate"],
        curve.grid.iter().zip(&curve.values).map(|(g, v)| vec![Some(fmt(*g)), Some(fmt(*v))]),
    )?;
    let meta = CurveMeta {
        schema_version: SCHEMA_VERSION,
        command: "fit-curve",
        estimand: estimand.name(),
        n: inp.data.n(),
        n_selected: inp.data.n_selected(),
        grid_size: grid.len(),
        d: a.d.map(num),
        v: v.map(|v| v.iter().map(|x| num(*x)).collect()),
        penalties: penalties(&used),
        kernels: kernels_json(&kernels),
        seed: a.model.seed,
        runtime_secs: num(start.elapsed().as_secs_f64()),
    };
    write_json(&with_ext(&a.out, "json"), &meta)
}

#[derive(Serialize)]
struct FoldJson {
    fold: usize,
    eval_size: usize,
    train_size: usize,
    clipped: usize,
    penalties: BTreeMap<String, Raw>,
}

#[derive(Serialize)]
struct InferJson {
    schema_version: u32,
    estimand: String,
    point: Raw,
    se: Raw,
    sigma: Raw,
    ci: [Raw; 2],
    level: Raw,
    n: usize,
    folds: usize,
    penalties: Vec<FoldJson>,
    clip_eps: Raw,
    censor_bound: Raw,
    seed: u64,
    runtime_secs: Raw,
}

pub fn infer(a: &InferArgs) -> Result<()> {
    let start = Instant::now();
    let inp = load(&a.data)?;
    let cfg = DmlConfig {
        folds: a.folds,
        seed: a.model.seed,
        level: a.level,
        kernels: a.model.kernel_config(KernelConfig::discrete_treatment()),
        penalties: a.model.penalty_config(),
        eps: a.eps,
        censor_bound: None,
    };
    let kind = |d: f64| -> Result<RieszKind> {
        Ok(match a.estimand.as_str() {
            "ate" => RieszKind::Ate { d },
            "ds" => RieszKind::Ds { d },
            "att" => RieszKind::Att { d, dprime: a.dprime.ok_or_else(|| anyhow!("ATT needs --dprime"))? },
            "cate" => RieszKind::Cate { d, v: a.v.as_ref().ok_or_else(|| anyhow!("CATE needs --v"))?.0.clone() },
            other => bail!("unknown estimand {other:?}; expected ate, att, cate, ds or dyn-ate"),
        })
    };
    let (est, label) = if a.estimand == "dyn-ate" {
        let target = match a.d0 {
            Some(b) => DynamicTarget::contrast(a.d, b),
            None => DynamicTarget::single(a.d),
        };
        (dml_dynamic(&inp.data, &target, &cfg)?, label(&a.estimand, a.d, a.d0))
    } else {
        // ATT contrasts compare counterfactual d' values within the D = d group
        let target = match (a.estimand.as_str(), a.d0) {
            ("att", Some(b)) => StaticTarget::contrast(
                kind(a.d)?,
                RieszKind::Att { d: a.d, dprime: b },
            ),
            (_, Some(b)) => StaticTarget::contrast(kind(a.d)?, kind(b)?),
            (_, None) => StaticTarget::single(kind(a.d)?),
        };
        let est = dml_static(&inp.data, &target, inp.shifted.as_ref(), &cfg)?;
        (est, label(&a.estimand, a.d, a.d0))
    };
    let folds = est
        .diagnostics
        .iter()
        .map(|f| FoldJson {
            fold: f.fold,
            eval_size: f.eval_size,
            train_size: f.train_size,
            clipped: f.clipped,
            penalties: penalties(&f.penalties),
        })
        .collect();
    let out = InferJson {
        schema_version: SCHEMA_VERSION,
        estimand: label,
        point: num(est.theta),
        se: num(est.sigma / (est.n as f64).sqrt()),
        sigma: num(est.sigma),
        ci: [num(est.ci.0), num(est.ci.1)],
        level: num(est.level),
        n: est.n,
        folds: est.folds,
        penalties: folds,
        clip_eps: num(cfg.eps),
        censor_bound: num(cfg.bound()),
        seed: cfg.seed,
        runtime_secs: num(start.elapsed().as_secs_f64()),
    };
    write_json(&a.out, &out)
}

fn label(estimand: &str, d: f64, d0: Option<f64>) -> String {
    match d0 {
        Some(b) => format!("{estimand}({d}) - {estimand}({b})"),
        None => format!("{estimand}({d})"),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let id = DgpId::parse(&a.dgp)?;
    let data = DgpSpec::new(id, a.seed).simulate(a.n)?;
    let mut header = vec!["s", "y", "d", "x"];
    if data.m().is_some() {
        header.push("m");
    }
    let rows = (0..data.n()).map(|i| {
        let mut r = vec![
            Some(fmt(data.s()[i])),
            (data.s()[i] == 1.0).then(|| fmt(data.sy()[i])),
            Some(fmt(data.d()[i])),
            Some(fmt(data.x()[(i, 0)])),
        ];
        if let Some(m) = data.m() {
            r.push(Some(fmt(m[(i, 0)])));
        }
        r
    });
    write_csv(&a.out, &header, rows)
}

#[derive(Serialize)]
struct RungJson {
    n: usize,
    reps: usize,
    failures: usize,
    rmse: Raw,
    mean_bias: Raw,
    median_abs_error: Raw,
    coverage: Option<Raw>,
    median_runtime_secs: Raw,
}

#[derive(Serialize)]
struct CoverageJson {
    schema_version: u32,
    dgp: &'static str,
    experiment: &'static str,
    seed: u64,
    reps: usize,
    folds: usize,
    level: Raw,
    summary: Vec<RungJson>,
}

pub fn coverage(a: &CoverageArgs) -> Result<()> {
    let id = DgpId::parse(&a.dgp)?;
    let penalties = PenaltyConfig { mode: a.penalty.clone(), ..PenaltyConfig::default() };
    let cfg = DmlConfig { folds: a.folds, level: a.level, penalties: penalties.clone(), ..DmlConfig::default() };
    let (exp, label) = match id {
        DgpId::S1 => (
            Experiment::StaticDml {
                target: StaticTarget::contrast(RieszKind::Ate { d: 1.0 }, RieszKind::Ate { d: 0.0 }),
                truth: Truth::Contrast(1.0, 0.0),
                cfg,
            },
            "static ATE(1) - ATE(0)",
        ),
        DgpId::D1 => (
            Experiment::DynamicDml { target: DynamicTarget::contrast(1.0, 0.0), truth: Truth::Contrast(1.0, 0.0), cfg },
            "dynamic ATE(1) - ATE(0)",
        ),
        DgpId::S2 => (
            Experiment::Curve { grid: a.grid.0.clone(), kernels: KernelConfig::default(), penalties },
            "ATE curve sup-norm error",
        ),
    };
    let report = run_experiment(&DgpSpec::new(id, a.seed), &exp, &a.ns, a.reps, a.seed)?;
    let header = ["n", "rep", "seed", "estimate", "truth", "bias", "abs_error", "se", "covered", "runtime_secs", "failure"];
    let rows = report.rows.iter().map(|r| {
        let f = |x: f64| x.is_finite().then(|| fmt(x));
        vec![
            Some(r.n.to_string()),
            Some(r.rep.to_string()),
            Some(r.seed.to_string()),
            f(r.estimate),
            f(r.truth),
            f(r.bias),
            f(r.abs_error),
            r.se.and_then(f),
            r.covered.map(|c| u8::from(c).to_string()),
            Some(fmt(r.runtime_secs)),
            r.failure.clone(),
        ]
    });
    write_csv(&with_ext(&a.out, "csv"), &header, rows)?;
    let summary = report
        .summary
        .iter()
        .map(|s| RungJson {
            n: s.n,
            reps: s.reps,
            failures: s.failures,
            rmse: num(s.rmse),
            mean_bias: num(s.mean_bias),
            median_abs_error: num(s.median_abs_error),
            coverage: s.coverage.map(num),
            median_runtime_secs: num(s.median_runtime_secs),
        })
        .collect();
    write_json(
        &with_ext(&a.out, "json"),
        &CoverageJson {
            schema_version: SCHEMA_VERSION,
            dgp: id.name(),
            experiment: label,
            seed: a.seed,
            reps: a.reps,
            folds: a.folds,
            level: num(a.level),
            summary,
        },
    )
}

#[derive(Serialize)]
struct HerdJson {
    schema_version: u32,
    estimand: String,
    samples: usize,
    candidates: usize,
    mmd: Raw,
    penalties: BTreeMap<String, Raw>,
    y_kernel: KernelJson,
    seed: u64,
    runtime_secs: Raw,
}

pub fn herd_cmd(a: &HerdArgs) -> Result<()> {
    let start = Instant::now();
    let inp = load(&a.data)?;
    let kcfg = a.model.kernel_config(KernelConfig::default());
    let kernels = kcfg.resolve(&inp.data, a.model.seed)?;
    let y = kcfg.resolve_y(&inp.data, a.model.seed)?;
    let pcfg = a.model.penalty_config();
    let v = a.v.as_ref().map(|v| v.0.clone());
    let mut used = UsedPenalties::default();
    let emb = match a.estimand.as_str() {
        "dyn-ate" | "dyn-ds" => {
            let dist = DynamicDistribution::new(DynamicDesign::new(&inp.data, kernels, pcfg)?, y.clone())?;
            used.set(ksel::penalty::Penalty::DistDynamic, dist.lambda9());
            used.set(ksel::penalty::Penalty::Sequential, dist.design().lambda4());
            if a.estimand == "dyn-ate" {
                dist.embedding(&DistKind::DynAte { d: a.d }, None)?
            } else {
                let prep = dist.design().prepare_shift(need_shifted(&inp.shifted)?)?;
                used.set(ksel::penalty::Penalty::ShiftedSequential, prep.lambda5());
                dist.embedding(&DistKind::DynDs { d: a.d }, Some(&prep))?
            }
        }
        other => {
            let kind = match other {
                "ate" => DistKind::Ate { d: a.d },
                "ds" => DistKind::Ds { d: a.d },
                "att" => DistKind::Att { d: a.d, dprime: a.dprime.ok_or_else(|| anyhow!("ATT needs --dprime"))? },
                "cate" => DistKind::Cate { d: a.d, v: v.clone().ok_or_else(|| anyhow!("CATE needs --v"))? },
                _ => bail!("unknown estimand {other:?}; expected ate, ds, att, cate, dyn-ate or dyn-ds"),
            };
            let design = if other == "cate" {
                StaticDesign::with_subgroup(&inp.data, kernels, pcfg)?
            } else {
                StaticDesign::new(&inp.data, kernels, pcfg)?
            };
            let dist = StaticDistribution::new(design, y.clone())?;
            used.set(ksel::penalty::Penalty::DistStatic, dist.lambda8());
            let e = dist.embedding(&kind, inp.shifted.as_ref())?;
            used.merge(&dist.design().used_embedding_penalties());
            e
        }
    };
    let candidates = emb.default_candidates(a.grid_points, DEFAULT_PAD);
    let samples = herd(&emb, a.samples, &candidates)?;
    let gap = mmd(&samples, &emb)?;
    write_csv(
        &with_ext(&a.out, "csv"),
        &["j", "y"],
        samples.iter().enumerate().map(|(j, s)| vec![Some((j + 1).to_string()), Some(fmt(*s))]),
    )?;
    write_json(
        &with_ext(&a.out, "json"),
        &HerdJson {
            schema_version: SCHEMA_VERSION,
            estimand: emb.kind.tag(),
            samples: samples.len(),
            candidates: candidates.len(),
            mmd: num(gap),
            penalties: penalties(&used),
            y_kernel: crate::output::kernel_json(&y),
            seed: a.model.seed,
            runtime_secs: num(start.elapsed().as_secs_f64()),
        },
    )
}
