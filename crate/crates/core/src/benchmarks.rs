//! Benchmark functions on `R^8`, their input laws, sample files, and the
//! experiment driver producing quantile reports over repeated realizations.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_index_set, Family, FeatureBasis, PNorm};
use crate::deviation::empirical_quantile;
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_RANK_TOL;
use crate::grassmann::{learn, Method, OptimizerConfig};
use crate::regression::{cv_select_basis, cv_select_krr, krr_fit, krr_predict, rms_error, CvGrid};
use crate::surrogate::{estimate_j, FeatureMap, SampleJacobians, SampleSet};

pub const BENCHMARK_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkId {
    U1,
    U2,
    U3,
    U4,
}

impl BenchmarkId {
    pub fn name(&self) -> &'static str {
        match self {
            BenchmarkId::U1 => "u1",
            BenchmarkId::U2 => "u2",
            BenchmarkId::U3 => "u3",
            BenchmarkId::U4 => "u4",
        }
    }
}

impl std::str::FromStr for BenchmarkId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "u1" => Ok(BenchmarkId::U1),
            "u2" => Ok(BenchmarkId::U2),
            "u3" => Ok(BenchmarkId::U3),
            "u4" | "borehole" => Ok(BenchmarkId::U4),
            _ => Err(Error::InvalidInput(format!("unknown benchmark {s:?}"))),
        }
    }
}

/// Law of one input coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Marginal {
    Uniform { a: f64, b: f64 },
    Normal { mu: f64, sigma: f64 },
    /// `exp` of a normal with mean `mu` and standard deviation `sigma`.
    LogNormal { mu: f64, sigma: f64 },
}

impl Marginal {
    /// Orthonormal polynomial family of this law.
    pub fn family(&self) -> Family {
        match *self {
            Marginal::Uniform { a, b } => Family::Legendre { a, b },
            Marginal::Normal { mu, sigma } => Family::Hermite { mu, sigma },
            Marginal::LogNormal { mu, sigma } => Family::LogHermite { mu, sigma },
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Uniform { a, b } => 0.5 * (a + b),
            Marginal::Normal { mu, .. } => mu,
            Marginal::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }
}

enum Sampler {
    Uniform(Uniform<f64>),
    Normal(Normal<f64>),
    LogNormal(LogNormal<f64>),
}

impl Sampler {
    fn new(m: &Marginal) -> Result<Self> {
        let bad = |e: &dyn std::fmt::Display| Error::InvalidInput(format!("bad marginal {m:?}: {e}"));
        Ok(match *m {
            Marginal::Uniform { a, b } => Sampler::Uniform(Uniform::new(a, b).map_err(|e| bad(&e))?),
            Marginal::Normal { mu, sigma } => Sampler::Normal(Normal::new(mu, sigma).map_err(|e| bad(&e))?),
            Marginal::LogNormal { mu, sigma } => {
                Sampler::LogNormal(LogNormal::new(mu, sigma).map_err(|e| bad(&e))?)
            }
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampler::Uniform(d) => d.sample(rng),
            Sampler::Normal(d) => d.sample(rng),
            Sampler::LogNormal(d) => d.sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub id: BenchmarkId,
    pub marginals: Vec<Marginal>,
}

/// `M = (1/(i+j-1))`, the Hilbert matrix.
pub fn hilbert_matrix(d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| 1.0 / (i + j + 1) as f64)
}

pub fn make_benchmark(id: &str) -> Result<Benchmark> {
    Ok(Benchmark::new(id.parse()?))
}

impl Benchmark {
    pub fn new(id: BenchmarkId) -> Self {
        let marginals = match id {
            BenchmarkId::U4 => vec![
                Marginal::Normal { mu: 0.1, sigma: 0.0161812 },
                Marginal::LogNormal { mu: 7.71, sigma: 1.0056 },
                Marginal::Uniform { a: 63070.0, b: 115600.0 },
                Marginal::Uniform { a: 990.0, b: 1110.0 },
                Marginal::Uniform { a: 63.1, b: 116.0 },
                Marginal::Uniform { a: 700.0, b: 820.0 },
                Marginal::Uniform { a: 1120.0, b: 1680.0 },
                Marginal::Uniform { a: 9855.0, b: 12045.0 },
            ],
            _ => vec![Marginal::Uniform { a: -PI / 2.0, b: PI / 2.0 }; BENCHMARK_DIM],
        };
        Benchmark { id, marginals }
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn families(&self) -> Vec<Family> {
        self.marginals.iter().map(Marginal::family).collect()
    }

    /// `(u(x), grad u(x))`.
    pub fn evaluate(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::Shape(format!("point has {} coordinates, expected {d}", x.len())));
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        match self.id {
            BenchmarkId::U1 => {
                let c = 4.0 / (PI * PI);
                let t = c * dot(x, x);
                Ok((t.sin(), x.iter().map(|xi| t.cos() * 2.0 * c * xi).collect()))
            }
            BenchmarkId::U2 => {
                let m = hilbert_matrix(d);
                let mx: Vec<f64> = (0..d).map(|i| dot(&m.row(i).transpose().as_slice(), x)).collect();
                let a = 0.5 * dot(x, x);
                let b = 0.5 * dot(x, &mx);
                let grad = (0..d).map(|i| -a.sin() * x[i] + b.cos() * mx[i]).collect();
                Ok((a.cos() + b.sin(), grad))
            }
            BenchmarkId::U3 => {
                let s = x.iter().map(|xi| xi.sin() * xi.cos().exp()).sum::<f64>() / d as f64;
                let u = s.exp();
                let grad = x
                    .iter()
                    .map(|xi| u / d as f64 * xi.cos().exp() * (xi.cos() - xi.sin().powi(2)))
                    .collect();
                Ok((u, grad))
            }
            BenchmarkId::U4 => borehole(x),
        }
    }

    /// `n` i.i.d. draws, one row per point, coordinates drawn in order.
    pub fn sample_inputs(&self, n: usize, seed: u64) -> Result<DMatrix<f64>> {
        let samplers = self.marginals.iter().map(Sampler::new).collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(n, self.dim());
        for i in 0..n {
            for (j, s) in samplers.iter().enumerate() {
                x[(i, j)] = s.draw(&mut rng);
            }
        }
        Ok(x)
    }

    pub fn sample_set(&self, n: usize, seed: u64) -> Result<SampleSet> {
        let x = self.sample_inputs(n, seed)?;
        let d = self.dim();
        let mut u = DVector::zeros(n);
        let mut du = DMatrix::zeros(n, d);
        for i in 0..n {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let (v, g) = self.evaluate(&row)?;
            u[i] = v;
            for j in 0..d {
                du[(i, j)] = g[j];
            }
        }
        SampleSet::new(x, u, du, seed)
    }
}

fn borehole(x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let [x1, x2, x3, x4, x5, x6, x7, x8] = [x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]];
    if x1 <= 0.0 || x2 <= 0.0 {
        return Err(Error::Domain(format!("borehole needs x1, x2 > 0, got {x1}, {x2}")));
    }
    let l = (x2 / x1).ln();
    let c = 2.0 * x7 * x3 / (x1 * x1 * x8);
    let den = l * (1.0 + x3 / x5) + c;
    let num = 2.0 * PI * x3 * (x4 - x6);
    let u = num / den;
    let mut dnum = [0.0; 8];
    dnum[2] = 2.0 * PI * (x4 - x6);
    dnum[3] = 2.0 * PI * x3;
    dnum[5] = -2.0 * PI * x3;
    let mut dden = [0.0; 8];
    dden[0] = -(1.0 + x3 / x5) / x1 - 2.0 * c / x1;
    dden[1] = (1.0 + x3 / x5) / x2;
    dden[2] = l / x5 + c / x3;
    dden[4] = -l * x3 / (x5 * x5);
    dden[6] = c / x7;
    dden[7] = -c / x8;
    let grad = (0..8).map(|i| dnum[i] / den - u * dden[i] / den).collect();
    Ok((u, grad))
}

/// Coefficients of the two features `x^T x` and `x^T M x` of `u2` in a basis
/// containing all total-degree-2 monomials.
pub fn u2_true_coefficients(basis: &FeatureBasis) -> Result<DMatrix<f64>> {
    let d = basis.dim();
    let m = hilbert_matrix(d);
    let unit = |i: usize, j: usize| {
        let mut e = vec![0; d];
        e[i] += 1;
        e[j] += 1;
        e
    };
    let sq: Vec<(f64, Vec<usize>)> = (0..d).map(|i| (1.0, unit(i, i))).collect();
    let mut quad = Vec::new();
    for i in 0..d {
        quad.push((m[(i, i)], unit(i, i)));
        for j in i + 1..d {
            quad.push((2.0 * m[(i, j)], unit(i, j)));
        }
    }
    let a = basis.embed_polynomial(&sq)?;
    let b = basis.embed_polynomial(&quad)?;
    Ok(DMatrix::from_columns(&[a, b]))
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { line, msg: format!("{kind:?}") },
    }
}

/// Writes `x1..xd,u,du1..dud` rows.
pub fn write_samples_csv(path: &Path, samples: &SampleSet) -> Result<()> {
    std::fs::write(path, format_samples_csv(samples))?;
    Ok(())
}

pub fn format_samples_csv(samples: &SampleSet) -> String {
    let d = samples.dim();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.push("u".into());
    header.extend((1..=d).map(|i| format!("du{i}")));
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..samples.len() {
        let row: Vec<String> = samples
            .points()
            .row(i)
            .iter()
            .chain(std::iter::once(&samples.values()[i]))
            .chain(samples.gradients().row(i).iter())
            .map(|v| v.to_string())
            .collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn parse_samples_csv(text: &str, seed: u64) -> Result<SampleSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    let cols = header.len();
    if cols < 3 || cols % 2 == 0 {
        return Err(Error::Parse { line: 1, msg: format!("expected 2d+1 columns, got {cols}") });
    }
    let d = (cols - 1) / 2;
    for (j, name) in header.iter().enumerate() {
        let want = if j < d {
            format!("x{}", j + 1)
        } else if j == d {
            "u".to_string()
        } else {
            format!("du{}", j - d)
        };
        if name != want {
            return Err(Error::Parse { line: 1, msg: format!("column {} is {name:?}, expected {want:?}", j + 1) });
        }
    }
    let mut rows: Vec<f64> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("not a number: {field:?}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, msg: format!("non-finite value {field:?}") });
            }
            rows.push(v);
        }
    }
    let n = rows.len() / cols;
    if n == 0 {
        return Err(Error::Parse { line: 2, msg: "no sample rows".into() });
    }
    let all = DMatrix::from_row_slice(n, cols, &rows);
    SampleSet::new(
        all.columns(0, d).into_owned(),
        all.column(d).into_owned(),
        all.columns(d + 1, d).into_owned(),
        seed,
    )
}

pub fn read_samples_csv(path: &Path) -> Result<SampleSet> {
    parse_samples_csv(&std::fs::read_to_string(path)?, 0)
}

/// Settings of a benchmark sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkId,
    pub m: usize,
    pub methods: Vec<Method>,
    pub ntrain: Vec<usize>,
    pub n_test: usize,
    pub n_realizations: usize,
    pub seed: u64,
    /// Fixed `(p, k)`; when absent it is chosen by cross-validation per cell.
    pub basis: Option<(PNorm, f64)>,
    pub cv: CvGrid,
    pub optimizer: OptimizerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            benchmark: BenchmarkId::U1,
            m: 1,
            methods: vec![Method::Gli, Method::Sur, Method::Gsi],
            ntrain: vec![50, 100, 250],
            n_test: 1000,
            n_realizations: 5,
            seed: 0,
            basis: None,
            cv: CvGrid::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Realization count and training sizes of the full-scale study.
    pub fn full_scale(mut self) -> Self {
        self.n_realizations = 20;
        self.ntrain = vec![50, 100, 250, 500, 1000];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > BENCHMARK_DIM {
            return Err(Error::InvalidInput(format!("m must lie in 1..={BENCHMARK_DIM}")));
        }
        if self.methods.is_empty() || self.ntrain.is_empty() {
            return Err(Error::InvalidInput("methods and ntrain must be nonempty".into()));
        }
        if self.n_realizations == 0 || self.n_test == 0 {
            return Err(Error::InvalidInput("n_realizations and n_test must be >= 1".into()));
        }
        if let Some(&n) = self.ntrain.iter().find(|&&n| n < self.cv.folds.max(self.cv.pk_folds)) {
            return Err(Error::InvalidInput(format!("ntrain {n} is smaller than the fold count")));
        }
        self.optimizer.validate()
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the training set of `(realization, ntrain)`.
pub fn train_seed(base: u64, realization: usize, ntrain: usize) -> u64 {
    mix(mix(mix(base) ^ realization as u64) ^ (ntrain as u64).wrapping_mul(31) ^ 1)
}

/// Seed of the test set of `realization`.
pub fn test_seed(base: u64, realization: usize) -> u64 {
    mix(mix(mix(base) ^ realization as u64) ^ 2)
}

/// Monitored values of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub method: Method,
    pub ntrain: usize,
    pub realization: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub p: Option<PNorm>,
    pub k: Option<f64>,
    pub j_train: Option<f64>,
    pub j_test: Option<f64>,
    pub err_train: Option<f64>,
    pub err_test: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRow {
    pub method: Method,
    pub ntrain: usize,
    pub quantile: f64,
    pub n_ok: usize,
    pub j_train: Option<f64>,
    pub j_test: Option<f64>,
    pub err_train: Option<f64>,
    pub err_test: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileReport {
    pub config: ExperimentConfig,
    pub rows: Vec<QuantileRow>,
    pub raw: Vec<Realization>,
}

pub const REPORT_QUANTILES: [f64; 3] = [0.5, 0.9, 1.0];

struct Monitored {
    p: PNorm,
    k: f64,
    j_train: f64,
    j_test: f64,
    err_train: f64,
    err_test: f64,
}

fn run_pipeline(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
    method: Method,
    train: &SampleSet,
    test: &SampleSet,
    seed: u64,
) -> Result<Monitored> {
    let families = bench.families();
    let (p, k) = match cfg.basis {
        Some(pk) => pk,
        None => {
            let sel = cv_select_basis(train, &families, cfg.m, method, &cfg.cv, &cfg.optimizer, seed)?;
            (sel.p, sel.k)
        }
    };
    let basis = FeatureBasis::new(build_index_set(bench.dim(), p, k)?, families)?;
    let data = SampleJacobians::new(&basis, train)?;
    let r = data.gram()?;
    let learned = learn(method, &data, &basis, &r, cfg.m, &cfg.optimizer)?;
    let test_data = SampleJacobians::new(&basis, test)?;
    let j_train = estimate_j(&data, &learned.coeffs, DEFAULT_RANK_TOL)?;
    let j_test = estimate_j(&test_data, &learned.coeffs, DEFAULT_RANK_TOL)?;
    let map = FeatureMap::new(basis, learned.coeffs)?;
    let z_train = map.features(train)?;
    let z_test = map.features(test)?;
    let sel = cv_select_krr(&z_train, train.values(), &cfg.cv, mix(seed ^ 3))?;
    let model = krr_fit(&z_train, train.values(), sel.gamma, sel.ridge)?;
    let err_train = rms_error(train.values(), &krr_predict(&model, &z_train)?);
    let err_test = rms_error(test.values(), &krr_predict(&model, &z_test)?);
    Ok(Monitored { p, k, j_train, j_test, err_train, err_test })
}

/// Runs every `(method, ntrain, realization)` cell; failures are recorded per cell.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<QuantileReport> {
    cfg.validate()?;
    let bench = Benchmark::new(cfg.benchmark);
    let mut cells = Vec::new();
    for &method in &cfg.methods {
        for &ntrain in &cfg.ntrain {
            for r in 0..cfg.n_realizations {
                cells.push((method, ntrain, r));
            }
        }
    }
    let raw: Vec<Realization> = cells
        .par_iter()
        .map(|&(method, ntrain, r)| {
            let (ts, vs) = (train_seed(cfg.seed, r, ntrain), test_seed(cfg.seed, r));
            let out = bench.sample_set(ntrain, ts).and_then(|train| {
                let test = bench.sample_set(cfg.n_test, vs)?;
                run_pipeline(cfg, &bench, method, &train, &test, ts)
            });
            let mut rec = Realization {
                method,
                ntrain,
                realization: r,
                train_seed: ts,
                test_seed: vs,
                p: None,
                k: None,
                j_train: None,
                j_test: None,
                err_train: None,
                err_test: None,
                error: None,
            };
            match out {
                Ok(v) => {
                    rec.p = Some(v.p);
                    rec.k = Some(v.k);
                    rec.j_train = Some(v.j_train);
                    rec.j_test = Some(v.j_test);
                    rec.err_train = Some(v.err_train);
                    rec.err_test = Some(v.err_test);
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            rec
        })
        .collect();
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        for &ntrain in &cfg.ntrain {
            let ok: Vec<&Realization> = raw
                .iter()
                .filter(|r| r.method == method && r.ntrain == ntrain && r.error.is_none())
                .collect();
            let q = |f: fn(&Realization) -> Option<f64>, w: f64| -> Option<f64> {
                let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                empirical_quantile(&v, w.min(1.0 - f64::EPSILON)).ok()
            };
            for &w in &REPORT_QUANTILES {
                rows.push(QuantileRow {
                    method,
                    ntrain,
                    quantile: w,
                    n_ok: ok.len(),
                    j_train: q(|r| r.j_train, w),
                    j_test: q(|r| r.j_test, w),
                    err_train: q(|r| r.err_train, w),
                    err_test: q(|r| r.err_test, w),
                });
            }
        }
    }
    Ok(QuantileReport { config: cfg.clone(), rows, raw })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| x.to_string())
}

impl QuantileReport {
    /// One row per cell and quantile, preceded by a `#` line holding the config.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = format!("# config: {}\n", serde_json::to_string(&self.config)?);
        out.push_str("benchmark,method,m,ntrain,quantile,J_train,J_test,err_train,err_test\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                self.config.benchmark.name(),
                r.method.name(),
                self.config.m,
                r.ntrain,
                r.quantile,
                opt(r.j_train),
                opt(r.j_test),
                opt(r.err_train),
                opt(r.err_test)
            );
        }
        Ok(out)
    }

    /// Per-realization values, including seeds and failures.
    pub fn raw_csv(&self) -> String {
        let mut out = String::from(
            "benchmark,method,m,ntrain,realization,train_seed,test_seed,p,k,J_train,J_test,err_train,err_test,error\n",
        );
        for r in &self.raw {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.config.benchmark.name(),
                r.method.name(),
                self.config.m,
                r.ntrain,
                r.realization,
                r.train_seed,
                r.test_seed,
                r.p.map_or_else(|| "nan".into(), |p| match p {
                    PNorm::Finite(v) => v.to_string(),
                    PNorm::Inf => "inf".into(),
                }),
                opt(r.k),
                opt(r.j_train),
                opt(r.j_test),
                opt(r.err_train),
                opt(r.err_test),
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `report.csv`, `raw.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.to_csv()?)?;
        std::fs::write(dir.join("raw.csv"), self.raw_csv())?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        Ok(())
    }

    /// Fixed-width summary of the median rows.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<6}{:>8}{:>14}{:>14}{:>14}{:>14}{:>6}\n",
            "method", "ntrain", "J_train", "J_test", "err_train", "err_test", "ok"
        );
        for r in self.rows.iter().filter(|r| r.quantile == 0.5) {
            let f = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.3e}"));
            let _ = writeln!(
                out,
                "{:<6}{:>8}{:>14}{:>14}{:>14}{:>14}{:>6}",
                r.method.name(),
                r.ntrain,
                f(r.j_train),
                f(r.j_test),
                f(r.err_train),
                f(r.err_test),
                r.n_ok
            );
        }
        out
    }
}
