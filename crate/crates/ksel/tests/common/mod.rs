//! Literal closed forms written with plain loops and a naive pivoted solver,
//! independent of the library's Gram, Hadamard and Cholesky code.

#![allow(dead_code)]

use faer::Mat;
use ksel::data::column;
use ksel::kernels::{KernelSpec, Kernels};
use ksel::penalty::{Penalty, PenaltyConfig};
use ksel::{Dataset, ShiftedSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

/// Gaussian product kernel `exp(-½ Σ ((a−b)/ℓ)²)`.
pub fn gauss(a: &[f64], b: &[f64], l: &[f64]) -> f64 {
    let mut e = 0.0;
    for k in 0..a.len() {
        let t = (a[k] - b[k]) / l[k];
        e += t * t;
    }
    (-0.5 * e).exp()
}

/// `∂/∂d exp(-(a−d)²/(2ℓ²))`.
pub fn gauss_grad(a: f64, d: f64, l: f64) -> f64 {
    (a - d) / (l * l) * gauss(&[a], &[d], &[l])
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Dense, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut b = b.to_vec();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for k in r + 1..n {
            acc -= a[r][k] * x[k];
        }
        x[r] = acc / a[r][r];
    }
    x
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, x)).collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n).map(|i| (0..m).map(|j| (0..k).map(|t| a[i][t] * b[t][j]).sum()).collect()).collect()
}

pub fn ridge_matrix(k: &Dense, shift: f64) -> Dense {
    let mut a = k.clone();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += shift;
    }
    a
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Scalar lengthscales of a random instance.
#[derive(Clone, Debug)]
pub struct Scales {
    pub s: f64,
    pub d: f64,
    pub x: [f64; 2],
    pub v: f64,
    pub m: f64,
    pub y: f64,
}

pub const SCALES: Scales = Scales { s: 0.7, d: 0.6, x: [0.8, 1.1], v: 0.9, m: 0.7, y: 0.5 };

pub fn kernels(sc: &Scales) -> Kernels {
    let g = |l: Vec<f64>| KernelSpec::gaussian(l).unwrap();
    Kernels {
        s: g(vec![sc.s]),
        d: g(vec![sc.d]),
        x: g(sc.x.to_vec()),
        m: Some(g(vec![sc.m])),
        v: Some(g(vec![sc.v])),
    }
}

pub fn y_kernel(sc: &Scales) -> KernelSpec {
    KernelSpec::gaussian(vec![sc.y]).unwrap()
}

/// Raw rows of a small random instance.
#[derive(Clone, Debug)]
pub struct Instance {
    pub s: Vec<f64>,
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub x: Vec<[f64; 2]>,
    pub v: Vec<f64>,
    pub m: Vec<f64>,
    /// shifted sample
    pub dt: Vec<f64>,
    pub xt: Vec<[f64; 2]>,
    pub mt: Vec<f64>,
}

impl Instance {
    /// `n` rows with continuous treatment, binary V and at least one selected row.
    pub fn random(n: usize, nt: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.7) { 1.0 } else { 0.0 }).collect();
        s[0] = 1.0;
        let y = (0..n).map(|i| if s[i] == 1.0 { rng.random_range(-2.0..2.0) } else { 0.0 }).collect();
        let pt = |rng: &mut ChaCha8Rng| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let x = (0..n).map(|_| pt(&mut rng)).collect();
        let xt = (0..nt).map(|_| pt(&mut rng)).collect();
        Self {
            s,
            y,
            d: (0..n).map(|_| rng.random_range(-1.5..1.5)).collect(),
            x,
            v: (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect(),
            m: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            dt: (0..nt).map(|_| rng.random_range(-1.5..1.5)).collect(),
            xt,
            mt: (0..nt).map(|_| rng.random_range(-2.0..2.0)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn nt(&self) -> usize {
        self.dt.len()
    }

    fn xmat(x: &[[f64; 2]]) -> Mat<f64> {
        Mat::from_fn(x.len(), 2, |i, j| x[i][j])
    }

    pub fn dataset(&self) -> Dataset {
        Dataset::new(self.s.clone(), &self.y, self.d.clone(), Self::xmat(&self.x))
            .unwrap()
            .with_m(column(&self.m))
            .unwrap()
            .with_v(column(&self.v))
            .unwrap()
    }

    pub fn shifted(&self) -> ShiftedSample {
        ShiftedSample { d: Some(self.dt.clone()), x: Self::xmat(&self.xt), m: Some(column(&self.mt)) }
    }

    pub fn sy(&self) -> Vec<f64> {
        self.s.iter().zip(&self.y).map(|(s, y)| s * y).collect()
    }
}

/// Distinct values for every penalty so a mix-up shows.
#[derive(Clone, Copy, Debug)]
pub struct Lambdas {
    pub outcome: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub l5: f64,
    pub l8: f64,
    pub l9: f64,
}

pub const LAMBDAS: Lambdas = Lambdas { outcome: 0.05, l1: 0.07, l2: 0.09, l3: 0.2, l4: 0.11, l5: 0.13, l8: 0.06, l9: 0.08 };

impl Lambdas {
    pub fn config(&self) -> PenaltyConfig {
        PenaltyConfig::fixed(self.outcome)
            .with(Penalty::TreatmentEmbedding, self.l1)
            .with(Penalty::SubgroupEmbedding, self.l2)
            .with(Penalty::Riesz, self.l3)
            .with(Penalty::Sequential, self.l4)
            .with(Penalty::ShiftedSequential, self.l5)
            .with(Penalty::DistStatic, self.l8)
            .with(Penalty::DistDynamic, self.l9)
    }
}

/// Summation-form references over one instance.
pub struct Oracle<'a> {
    pub inst: &'a Instance,
    pub sc: Scales,
    pub lam: Lambdas,
}

impl Oracle<'_> {
    fn n(&self) -> usize {
        self.inst.n()
    }

    fn ks(&self, a: f64, b: f64) -> f64 {
        gauss(&[a], &[b], &[self.sc.s])
    }

    fn kd(&self, a: f64, b: f64) -> f64 {
        gauss(&[a], &[b], &[self.sc.d])
    }

    fn kx(&self, a: &[f64; 2], b: &[f64; 2]) -> f64 {
        gauss(a, b, &self.sc.x)
    }

    fn kv(&self, a: f64, b: f64) -> f64 {
        gauss(&[a], &[b], &[self.sc.v])
    }

    fn km(&self, a: f64, b: f64) -> f64 {
        gauss(&[a], &[b], &[self.sc.m])
    }

    /// `K_SS⊙K_DD⊙K_XX[⊙K_VV][⊙K_MM] + nλI`.
    fn system(&self, with_v: bool, with_m: bool, lambda: f64) -> Dense {
        let i = self.inst;
        let n = self.n();
        let k = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| {
                        let mut v = self.ks(i.s[a], i.s[b]) * self.kd(i.d[a], i.d[b]) * self.kx(&i.x[a], &i.x[b]);
                        if with_v {
                            v *= self.kv(i.v[a], i.v[b]);
                        }
                        if with_m {
                            v *= self.km(i.m[a], i.m[b]);
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        ridge_matrix(&k, n as f64 * lambda)
    }

    /// `[K_Dd]_j`, or its derivative in `d`.
    fn kdd(&self, d: f64, grad: bool) -> Vec<f64> {
        self.inst.d.iter().map(|&dj| if grad { gauss_grad(dj, d, self.sc.d) } else { self.kd(dj, d) }).collect()
    }

    /// `(target)ᵀ A⁻¹ b`.
    fn form(&self, target: &[f64], a: &Dense, b: &[f64]) -> f64 {
        dot(target, &solve(a.clone(), b))
    }

    /// `(1/n)Σ_i (S⊙Y)ᵀ(K + nλI)⁻¹(K_S1⊙K_Dd⊙K_Xx_i)`; `xs` replaces the averaging set for DS.
    pub fn ate_like(&self, target: &[f64], lambda: f64, d: f64, xs: &[[f64; 2]], grad: bool) -> f64 {
        let i = self.inst;
        let a = self.system(false, false, lambda);
        let kd = self.kdd(d, grad);
        let mut total = 0.0;
        for xq in xs {
            let b: Vec<f64> = (0..self.n()).map(|j| self.ks(i.s[j], 1.0) * kd[j] * self.kx(&i.x[j], xq)).collect();
            total += self.form(target, &a, &b);
        }
        total / xs.len() as f64
    }

    pub fn ate(&self, d: f64, grad: bool) -> f64 {
        self.ate_like(&self.inst.sy(), self.lam.outcome, d, &self.inst.x, grad)
    }

    pub fn ds(&self, d: f64, grad: bool) -> f64 {
        self.ate_like(&self.inst.sy(), self.lam.outcome, d, &self.inst.xt, grad)
    }

    /// `K_XX(K_DD + nλ₁I)⁻¹K_Dd`.
    fn att_embedding(&self, d: f64) -> Vec<f64> {
        let i = self.inst;
        let n = self.n();
        let kdd: Dense = (0..n).map(|a| (0..n).map(|b| self.kd(i.d[a], i.d[b])).collect()).collect();
        let w = solve(ridge_matrix(&kdd, n as f64 * self.lam.l1), &self.kdd(d, false));
        let kxx: Dense = (0..n).map(|a| (0..n).map(|b| self.kx(&i.x[a], &i.x[b])).collect()).collect();
        matvec(&kxx, &w)
    }

    pub fn att_like(&self, target: &[f64], lambda: f64, d: f64, dprime: f64, grad: bool) -> f64 {
        let i = self.inst;
        let a = self.system(false, false, lambda);
        let emb = self.att_embedding(d);
        let kd = self.kdd(dprime, grad);
        let b: Vec<f64> = (0..self.n()).map(|j| self.ks(i.s[j], 1.0) * kd[j] * emb[j]).collect();
        self.form(target, &a, &b)
    }

    pub fn att(&self, d: f64, dprime: f64, grad: bool) -> f64 {
        self.att_like(&self.inst.sy(), self.lam.outcome, d, dprime, grad)
    }

    pub fn cate_like(&self, target: &[f64], lambda: f64, d: f64, v: f64, grad: bool) -> f64 {
        let i = self.inst;
        let n = self.n();
        let a = self.system(true, false, lambda);
        let kvv: Dense = (0..n).map(|r| (0..n).map(|c| self.kv(i.v[r], i.v[c])).collect()).collect();
        let kvq: Vec<f64> = i.v.iter().map(|&vj| self.kv(vj, v)).collect();
        let w = solve(ridge_matrix(&kvv, n as f64 * self.lam.l2), &kvq);
        let kxx: Dense = (0..n).map(|r| (0..n).map(|c| self.kx(&i.x[r], &i.x[c])).collect()).collect();
        let emb = matvec(&kxx, &w);
        let kd = self.kdd(d, grad);
        let b: Vec<f64> = (0..n).map(|j| self.ks(i.s[j], 1.0) * kd[j] * kvq[j] * emb[j]).collect();
        self.form(target, &a, &b)
    }

    pub fn cate(&self, d: f64, v: f64, grad: bool) -> f64 {
        self.cate_like(&self.inst.sy(), self.lam.outcome, d, v, grad)
    }

    /// `ω̂(1,d;x)` with `target = S⊙Y`, or its distribution analogue.
    pub fn omega_like(&self, target: &[f64], lambda: f64, d: f64, x: &[f64; 2]) -> f64 {
        let i = self.inst;
        let n = self.n();
        let a = self.system(false, true, lambda);
        let dx: Dense =
            (0..n).map(|r| (0..n).map(|c| self.kd(i.d[r], i.d[c]) * self.kx(&i.x[r], &i.x[c])).collect()).collect();
        let rhs: Vec<f64> = (0..n).map(|j| self.kd(i.d[j], d) * self.kx(&i.x[j], x)).collect();
        let w = solve(ridge_matrix(&dx, n as f64 * self.lam.l4), &rhs);
        let kmm: Dense = (0..n).map(|r| (0..n).map(|c| self.km(i.m[r], i.m[c])).collect()).collect();
        let mu = matvec(&kmm, &w);
        let b: Vec<f64> = (0..n).map(|j| self.ks(i.s[j], 1.0) * rhs[j] * mu[j]).collect();
        self.form(target, &a, &b)
    }

    pub fn omega(&self, d: f64, x: &[f64; 2]) -> f64 {
        self.omega_like(&self.inst.sy(), self.lam.outcome, d, x)
    }

    pub fn dyn_ate_like(&self, target: &[f64], lambda: f64, d: f64) -> f64 {
        let xs = &self.inst.x;
        xs.iter().map(|x| self.omega_like(target, lambda, d, x)).sum::<f64>() / xs.len() as f64
    }

    pub fn dyn_ate(&self, d: f64) -> f64 {
        self.dyn_ate_like(&self.inst.sy(), self.lam.outcome, d)
    }

    /// Dynamic distribution shift, averaged with `1/ñ`.
    pub fn dyn_ds_like(&self, target: &[f64], lambda: f64, d: f64) -> f64 {
        let i = self.inst;
        let (n, nt) = (self.n(), i.nt());
        let a = self.system(false, true, lambda);
        let dxt: Dense = (0..nt)
            .map(|r| (0..nt).map(|c| self.kd(i.dt[r], i.dt[c]) * self.kx(&i.xt[r], &i.xt[c])).collect())
            .collect();
        let inner = ridge_matrix(&dxt, nt as f64 * self.lam.l5);
        let kmmt: Dense = (0..n).map(|r| (0..nt).map(|c| self.km(i.m[r], i.mt[c])).collect()).collect();
        let mut total = 0.0;
        for q in 0..nt {
            let rhs: Vec<f64> = (0..nt).map(|j| self.kd(i.dt[j], d) * self.kx(&i.xt[j], &i.xt[q])).collect();
            let mu = matvec(&kmmt, &solve(inner.clone(), &rhs));
            let b: Vec<f64> =
                (0..n).map(|j| self.ks(i.s[j], 1.0) * self.kd(i.d[j], d) * self.kx(&i.x[j], &i.xt[q]) * mu[j]).collect();
            total += self.form(target, &a, &b);
        }
        total / nt as f64
    }

    pub fn dyn_ds(&self, d: f64) -> f64 {
        self.dyn_ds_like(&self.inst.sy(), self.lam.outcome, d)
    }

    /// `S⊙K_Yy`.
    pub fn sky(&self, y: f64) -> Vec<f64> {
        let i = self.inst;
        (0..self.n()).map(|j| i.s[j] * gauss(&[i.y[j]], &[y], &[self.sc.y])).collect()
    }
}

/// Which counterfactual basis the literal Riesz system uses.
#[derive(Clone, Debug)]
pub enum RieszCase {
    Ate(f64),
    Ds(f64),
    Att(f64, f64),
    Cate(f64, f64),
}

/// One row `W = (s, d, x, v)`.
#[derive(Clone, Copy, Debug)]
pub struct Row {
    pub s: f64,
    pub d: f64,
    pub x: [f64; 2],
    pub v: f64,
}

/// `zᵀ(Ω + nλ₃K)⁻¹u` with the four blocks written out entry by entry.
/// For DS the counterfactual block runs over the ñ shifted points and `z`
/// carries the factor `n/ñ`.
pub fn riesz_literal(inst: &Instance, sc: &Scales, lambda3: f64, case: &RieszCase, w: Row, with_v: bool) -> f64 {
    let n = inst.n();
    let ks = |a: f64, b: f64| gauss(&[a], &[b], &[sc.s]);
    let kd = |a: f64, b: f64| gauss(&[a], &[b], &[sc.d]);
    let kx = |a: &[f64; 2], b: &[f64; 2]| gauss(a, b, &sc.x);
    let kv = |a: f64, b: f64| if with_v { gauss(&[a], &[b], &[sc.v]) } else { 1.0 };
    let rows: Vec<Row> = (0..n).map(|i| Row { s: inst.s[i], d: inst.d[i], x: inst.x[i], v: inst.v[i] }).collect();
    let k1 = |a: &Row, b: &Row| ks(a.s, b.s) * kd(a.d, b.d) * kx(&a.x, &b.x) * kv(a.v, b.v);
    // counterfactual points with their indicator weights
    let tilde: Vec<(Row, f64)> = match *case {
        RieszCase::Ate(d) => rows.iter().map(|r| (Row { s: 1.0, d, ..*r }, 1.0)).collect(),
        RieszCase::Ds(d) => inst.xt.iter().map(|x| (Row { s: 1.0, d, x: *x, v: 0.0 }, 1.0)).collect(),
        RieszCase::Att(d, dp) => {
            rows.iter().map(|r| (Row { s: 1.0, d: dp, ..*r }, if r.d == d { 1.0 } else { 0.0 })).collect()
        }
        RieszCase::Cate(d, v) => rows.iter().map(|r| (Row { s: 1.0, d, v, ..*r }, if r.v == v { 1.0 } else { 0.0 })).collect(),
    };
    let nt = tilde.len();
    let k2: Dense = (0..n).map(|i| (0..nt).map(|j| tilde[j].1 * k1(&rows[i], &tilde[j].0)).collect()).collect();
    let k3: Dense = (0..nt).map(|i| (0..n).map(|j| k2[j][i]).collect()).collect();
    let k4: Dense = (0..nt)
        .map(|i| (0..nt).map(|j| tilde[i].1 * tilde[j].1 * k1(&tilde[i].0, &tilde[j].0)).collect())
        .collect();
    let k1m: Dense = (0..n).map(|i| (0..n).map(|j| k1(&rows[i], &rows[j])).collect()).collect();
    let size = n + nt;
    let mut kk = vec![vec![0.0; size]; size];
    let (o11, o12, o22) = (matmul(&k1m, &k1m), matmul(&k1m, &k2), matmul(&k3, &k2));
    for i in 0..n {
        for j in 0..n {
            kk[i][j] = k1m[i][j];
        }
        for j in 0..nt {
            kk[i][n + j] = k2[i][j];
            kk[n + j][i] = k3[j][i];
        }
    }
    for i in 0..nt {
        for j in 0..nt {
            kk[n + i][n + j] = k4[i][j];
        }
    }
    let mut a = vec![vec![0.0; size]; size];
    for i in 0..size {
        for j in 0..size {
            let omega = match (i < n, j < n) {
                (true, true) => o11[i][j],
                (true, false) => o12[i][j - n],
                (false, true) => o12[j][i - n],
                (false, false) => o22[i - n][j - n],
            };
            a[i][j] = omega + n as f64 * lambda3 * kk[i][j];
        }
    }
    let scale = n as f64 / nt as f64;
    let mut z: Vec<f64> = (0..n).map(|i| scale * k2[i].iter().sum::<f64>()).collect();
    z.extend((0..nt).map(|i| scale * k4[i].iter().sum::<f64>()));
    let mut u: Vec<f64> = rows.iter().map(|r| k1(r, &w)).collect();
    u.extend(tilde.iter().map(|(t, wt)| wt * k1(t, &w)));
    dot(&z, &solve(a, &u))
}

/// Rows of an instance as Riesz query points.
pub fn rows(inst: &Instance) -> Vec<Row> {
    (0..inst.n()).map(|i| Row { s: inst.s[i], d: inst.d[i], x: inst.x[i], v: inst.v[i] }).collect()
}

/// Library value against literal value for every estimator on one instance.
pub fn fidelity(n: usize, nt: usize, seed: u64) -> Vec<(&'static str, f64)> {
    use ksel::distributions::{DistKind, DynamicDistribution, StaticDistribution};
    use ksel::dynamic_est::{DynTarget, DynamicDesign, DynamicFit, DynamicForm};
    use ksel::riesz::{RieszKind, RieszSolver};
    use ksel::static_est::{StaticDesign, StaticFit, Target};

    let inst = Instance::random(n, nt, seed);
    let sc = SCALES;
    let lam = LAMBDAS;
    let o = Oracle { inst: &inst, sc: sc.clone(), lam };
    let data = inst.dataset();
    let shifted = inst.shifted();
    let k = kernels(&sc);
    let cfg = lam.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let grid: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
    let ys: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
    let dsel = inst.d[0];
    let mut out = Vec::new();
    let mut push = |name: &'static str, lib: Vec<f64>, lit: Vec<f64>| out.push((name, max_abs_diff(&lib, &lit)));

    let fit = StaticFit::with_lambda(StaticDesign::new(&data, k.clone(), cfg.clone()).unwrap(), lam.outcome).unwrap();
    let sub = StaticFit::with_lambda(StaticDesign::with_subgroup(&data, k.clone(), cfg.clone()).unwrap(), lam.outcome).unwrap();
    for grad in [false, true] {
        let c = |t: Target<'_>, f: &StaticFit| f.curve(t, &grid, grad).unwrap().values;
        let name = |a: &'static str, b: &'static str| if grad { b } else { a };
        push(name("ATE", "grad ATE"), c(Target::Ate, &fit), grid.iter().map(|&g| o.ate(g, grad)).collect());
        push(name("DS", "grad DS"), c(Target::Ds(&shifted), &fit), grid.iter().map(|&g| o.ds(g, grad)).collect());
        push(
            name("ATT", "grad ATT"),
            c(Target::Att { d: dsel }, &fit),
            grid.iter().map(|&g| o.att(dsel, g, grad)).collect(),
        );
        for v in [0.0, 1.0] {
            push(
                name("CATE", "grad CATE"),
                c(Target::Cate { v: &[v] }, &sub),
                grid.iter().map(|&g| o.cate(g, v, grad)).collect(),
            );
        }
    }

    let dfit = DynamicFit::with_lambda(DynamicDesign::new(&data, k.clone(), cfg.clone()).unwrap(), lam.outcome).unwrap();
    push(
        "omega",
        grid.iter().map(|&g| dfit.omega_hat(g, &inst.xt[0]).unwrap()).collect(),
        grid.iter().map(|&g| o.omega(g, &inst.xt[0])).collect(),
    );
    let prep = dfit.design().prepare_shift(&shifted).unwrap();
    for form in [DynamicForm::Summation, DynamicForm::Fast] {
        push("dynamic ATE", dfit.curve(DynTarget::Ate, &grid, form).unwrap().values, grid.iter().map(|&g| o.dyn_ate(g)).collect());
        push(
            "dynamic DS",
            dfit.curve(DynTarget::Ds(&prep), &grid, form).unwrap().values,
            grid.iter().map(|&g| o.dyn_ds(g)).collect(),
        );
    }

    let yk = y_kernel(&sc);
    let sd = StaticDistribution::with_lambda(StaticDesign::new(&data, k.clone(), cfg.clone()).unwrap(), yk.clone(), lam.l8).unwrap();
    let sdv =
        StaticDistribution::with_lambda(StaticDesign::with_subgroup(&data, k.clone(), cfg.clone()).unwrap(), yk.clone(), lam.l8).unwrap();
    let dd = DynamicDistribution::with_lambda(DynamicDesign::new(&data, k.clone(), cfg.clone()).unwrap(), yk, lam.l9).unwrap();
    let dprep = dd.design().prepare_shift(&shifted).unwrap();
    let g0 = grid[0];
    let eval = |e: ksel::distributions::DistEmbedding| ys.iter().map(|&y| e.evaluate(y).unwrap()).collect::<Vec<f64>>();
    let lit = |f: &dyn Fn(&[f64]) -> f64| ys.iter().map(|&y| f(&o.sky(y))).collect::<Vec<f64>>();
    push(
        "D:ATE",
        eval(sd.embedding(&DistKind::Ate { d: g0 }, None).unwrap()),
        lit(&|t| o.ate_like(t, lam.l8, g0, &inst.x, false)),
    );
    push(
        "D:DS",
        eval(sd.embedding(&DistKind::Ds { d: g0 }, Some(&shifted)).unwrap()),
        lit(&|t| o.ate_like(t, lam.l8, g0, &inst.xt, false)),
    );
    push(
        "D:ATT",
        eval(sd.embedding(&DistKind::Att { d: dsel, dprime: g0 }, None).unwrap()),
        lit(&|t| o.att_like(t, lam.l8, dsel, g0, false)),
    );
    push(
        "D:CATE",
        eval(sdv.embedding(&DistKind::Cate { d: g0, v: vec![1.0] }, None).unwrap()),
        lit(&|t| o.cate_like(t, lam.l8, g0, 1.0, false)),
    );
    push("D:dynamic ATE", eval(dd.embedding(&DistKind::DynAte { d: g0 }, None).unwrap()), lit(&|t| o.dyn_ate_like(t, lam.l9, g0)));
    push(
        "D:dynamic DS",
        eval(dd.embedding(&DistKind::DynDs { d: g0 }, Some(&dprep)).unwrap()),
        lit(&|t| o.dyn_ds_like(t, lam.l9, g0)),
    );

    // Riesz: counterfactual treatment values off the observed support keep
    // the stacked basis free of duplicates
    let query = rows(&inst);
    let plain = RieszSolver::new(&data, k.clone(), &cfg, false).unwrap();
    let grouped = RieszSolver::new(&data, k, &cfg, true).unwrap();
    let dq = 0.37;
    let cases = [
        ("Riesz ATE", RieszKind::Ate { d: dq }, RieszCase::Ate(dq)),
        ("Riesz DS", RieszKind::Ds { d: dq }, RieszCase::Ds(dq)),
        ("Riesz ATT", RieszKind::Att { d: dsel, dprime: dq }, RieszCase::Att(dsel, dq)),
        ("Riesz CATE", RieszKind::Cate { d: dq, v: vec![1.0] }, RieszCase::Cate(dq, 1.0)),
    ];
    for (name, kind, case) in cases {
        let cate = matches!(case, RieszCase::Cate(..));
        let solver = if cate { &grouped } else { &plain };
        let lib = solver.representer(&kind, Some(&shifted)).unwrap().evaluate(&data).unwrap();
        let lit = query.iter().map(|w| riesz_literal(&inst, &sc, lam.l3, &case, *w, cate)).collect();
        push(name, lib, lit);
    }
    out
}
