//! Command-line front end: `sample`, `learn`, `regress`, `benchmark` and `check-deviation`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::basis::{build_index_set, BasisSpec, Family, FeatureBasis, PNorm};
use crate::benchmarks::{
    read_samples_csv, run_experiment, write_samples_csv, Benchmark, BenchmarkId, ExperimentConfig,
};
use crate::deviation::{check_large_deviation, check_small_deviation, DeviationReport};
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_RANK_TOL;
use crate::grassmann::{learn, write_trace_csv, Method, OptimizerConfig};
use crate::regression::{cv_select_basis, cv_select_krr, krr_fit, krr_predict, rms_error, CvGrid};
use crate::surrogate::{estimate_j, read_coeffs, write_coeffs, FeatureMap, SampleJacobians};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSection {
    /// One family per input coordinate, or a single family used for all of them.
    pub families: Vec<Family>,
    pub p: PNorm,
    pub k: f64,
    /// Choose `(p, k)` among `regression.pk_candidates` by cross-validation.
    pub select: bool,
}

impl Default for BasisSection {
    fn default() -> Self {
        let h = std::f64::consts::FRAC_PI_2;
        BasisSection {
            families: vec![Family::Legendre { a: -h, b: h }],
            p: PNorm::Finite(1.0),
            k: 2.0,
            select: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnSection {
    pub method: Method,
    pub m: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for LearnSection {
    fn default() -> Self {
        LearnSection {
            method: Method::Sur,
            m: 1,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub benchmark: BenchmarkId,
    pub m: usize,
    pub methods: Vec<Method>,
    pub ntrain: Vec<usize>,
    pub n_test: usize,
    pub n_realizations: usize,
    /// Fixed `(p, k)` instead of cross-validation.
    pub basis: Option<(PNorm, f64)>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        ExperimentSection {
            benchmark: e.benchmark,
            m: e.m,
            methods: e.methods,
            ntrain: e.ntrain,
            n_test: e.n_test,
            n_realizations: e.n_realizations,
            basis: e.basis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationCase {
    /// `g(x) = x^2` on `U(0,1)`.
    Square,
    /// `g(x) = (4/pi^2) x^T x` on `U((-pi/2, pi/2)^8)`.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviationSection {
    pub case: DeviationCase,
    pub n_samples: usize,
    /// Concavity parameter; defaults to `1/d` of the case.
    pub s: Option<f64>,
    pub eps_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub small: bool,
    pub large: bool,
}

impl Default for DeviationSection {
    fn default() -> Self {
        DeviationSection {
            case: DeviationCase::Square,
            n_samples: 100_000,
            s: None,
            eps_grid: vec![1e-4, 1e-3, 1e-2, 0.1, 0.25, 0.5, 0.9],
            t_grid: vec![1.0, 1.5, 2.0, 3.0, 4.0, 8.0, 16.0],
            small: true,
            large: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub samples: Option<PathBuf>,
    pub test_samples: Option<PathBuf>,
    pub coeffs: Option<PathBuf>,
    pub basis: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            samples: None,
            test_samples: None,
            coeffs: None,
            basis: None,
            out: PathBuf::from("out"),
        }
    }
}

/// Full configuration; every key has a default and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub basis: BasisSection,
    pub learn: LearnSection,
    pub regression: CvGrid,
    pub experiment: ExperimentSection,
    pub deviation: DeviationSection,
    pub io: IoSection,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Paper-scale experiment sizes.
    pub fn full_scale(&mut self) {
        let e = ExperimentConfig::default().full_scale();
        self.experiment.n_realizations = e.n_realizations;
        self.experiment.ntrain = e.ntrain;
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        let e = &self.experiment;
        ExperimentConfig {
            benchmark: e.benchmark,
            m: e.m,
            methods: e.methods.clone(),
            ntrain: e.ntrain.clone(),
            n_test: e.n_test,
            n_realizations: e.n_realizations,
            seed: self.seed,
            basis: e.basis,
            cv: self.regression.clone(),
            optimizer: self.learn.optimizer.clone(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nlfeat", version, about = "Learn nonlinear features of differentiable functions")]
pub struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Paper-scale experiment sizes.
    #[arg(long, global = true)]
    pub full: bool,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a feature map from a sample file.
    Learn(LearnArgs),
    /// Fit a kernel ridge regression on learned features.
    Regress(RegressArgs),
    /// Run a benchmark sweep and write quantile reports.
    Benchmark(BenchmarkArgs),
    /// Check deviation inequalities by Monte Carlo.
    CheckDeviation,
    /// Write benchmark samples to a CSV file.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub benchmark: Option<BenchmarkId>,
    #[arg(long, default_value_t = 250)]
    pub n: usize,
    /// Target file (default: `<out>/samples.csv`).
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// Sample CSV with columns x1..xd,u,du1..dud.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub m: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub test_samples: Option<PathBuf>,
    /// Coefficient file written by `learn`.
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Basis specification written by `learn`.
    #[arg(long)]
    pub basis: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub benchmark: Option<BenchmarkId>,
}

impl clap::ValueEnum for Method {
    fn value_variants<'a>() -> &'a [Self] {
        &[Method::Sur, Method::Gli, Method::Gsi]
    }
    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

impl clap::ValueEnum for BenchmarkId {
    fn value_variants<'a>() -> &'a [Self] {
        &[BenchmarkId::U1, BenchmarkId::U2, BenchmarkId::U3, BenchmarkId::U4]
    }
    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

/// Merges the config file and the command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::from_json(&std::fs::read_to_string(p)?)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.io.out = o.clone();
    }
    if cli.full {
        cfg.full_scale();
    }
    match &cli.command {
        Command::Learn(a) => {
            if let Some(s) = &a.samples {
                cfg.io.samples = Some(s.clone());
            }
            if let Some(m) = a.method {
                cfg.learn.method = m;
            }
            if let Some(m) = a.m {
                cfg.learn.m = m;
            }
        }
        Command::Regress(a) => {
            for (src, dst) in [
                (&a.samples, &mut cfg.io.samples),
                (&a.test_samples, &mut cfg.io.test_samples),
                (&a.coeffs, &mut cfg.io.coeffs),
                (&a.basis, &mut cfg.io.basis),
            ] {
                if let Some(p) = src {
                    *dst = Some(p.clone());
                }
            }
        }
        Command::Benchmark(a) => {
            if let Some(b) = a.benchmark {
                cfg.experiment.benchmark = b;
            }
        }
        Command::Sample(a) => {
            if let Some(b) = a.benchmark {
                cfg.experiment.benchmark = b;
            }
        }
        Command::CheckDeviation => {}
    }
    Ok(cfg)
}

/// Outcome of a command: files written plus the exit status to report.
pub struct Outcome {
    pub code: i32,
    pub message: String,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("missing {what} path (flag or io section)")))
}

#[derive(Debug, Serialize)]
struct LearnMetrics {
    method: Method,
    m: usize,
    n_samples: usize,
    n_features: usize,
    p: PNorm,
    k: f64,
    j_scale: f64,
    j_before: f64,
    j_after: f64,
    iterations: usize,
}

pub fn cmd_learn(cfg: &Config) -> Result<Outcome> {
    let samples = read_samples_csv(required(&cfg.io.samples, "samples")?)?;
    let start = Instant::now();
    let (p, k) = if cfg.basis.select {
        let sel = cv_select_basis(
            &samples,
            &cfg.basis.families,
            cfg.learn.m,
            cfg.learn.method,
            &cfg.regression,
            &cfg.learn.optimizer,
            cfg.seed,
        )?;
        (sel.p, sel.k)
    } else {
        (cfg.basis.p, cfg.basis.k)
    };
    let basis = FeatureBasis::new(build_index_set(samples.dim(), p, k)?, cfg.basis.families.clone())?;
    let data = SampleJacobians::new(&basis, &samples)?;
    let r = data.gram()?;
    let opt = OptimizerConfig { seed: cfg.seed, ..cfg.learn.optimizer.clone() };
    let learned = learn(cfg.learn.method, &data, &basis, &r, cfg.learn.m, &opt)?;
    let elapsed = start.elapsed().as_secs_f64();
    let out = &cfg.io.out;
    std::fs::create_dir_all(out)?;
    write_coeffs(&out.join("coeffs.txt"), &learned.coeffs)?;
    write_json(&out.join("basis.json"), &basis.spec())?;
    write_trace_csv(&out.join("trace.csv"), &learned.trace)?;
    let metrics = LearnMetrics {
        method: cfg.learn.method,
        m: cfg.learn.m,
        n_samples: samples.len(),
        n_features: basis.len(),
        p,
        k,
        j_scale: samples.mean_grad_sq(),
        j_before: learned.j_init,
        j_after: learned.j_final,
        iterations: learned.trace.len().saturating_sub(1),
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    write_json(&out.join("timing.json"), &serde_json::json!({ "wall_time_s": elapsed }))?;
    std::fs::write(out.join("config.json"), cfg.to_json()?)?;
    Ok(Outcome {
        code: EXIT_OK,
        message: format!(
            "{} m={} K={} J: {:.6e} -> {:.6e} (scale {:.6e}) in {:.2}s",
            cfg.learn.method.name(),
            cfg.learn.m,
            basis.len(),
            learned.j_init,
            learned.j_final,
            metrics.j_scale,
            elapsed
        ),
    })
}

#[derive(Debug, Serialize)]
struct RegressMetrics {
    gamma: f64,
    ridge: f64,
    cv_rmse: f64,
    err_train: f64,
    j_train: f64,
    err_test: Option<f64>,
    j_test: Option<f64>,
}

pub fn cmd_regress(cfg: &Config) -> Result<Outcome> {
    let samples = read_samples_csv(required(&cfg.io.samples, "samples")?)?;
    let coeffs = read_coeffs(required(&cfg.io.coeffs, "coeffs")?)?;
    let spec: BasisSpec = serde_json::from_str(&std::fs::read_to_string(required(&cfg.io.basis, "basis")?)?)?;
    let basis = FeatureBasis::from_spec(samples.dim(), &spec)?;
    let map = FeatureMap::new(basis.clone(), coeffs.clone())?;
    let z = map.features(&samples)?;
    let sel = cv_select_krr(&z, samples.values(), &cfg.regression, cfg.seed)?;
    let model = krr_fit(&z, samples.values(), sel.gamma, sel.ridge)?;
    let err_train = rms_error(samples.values(), &krr_predict(&model, &z)?);
    let j_train = estimate_j(&SampleJacobians::new(&basis, &samples)?, &coeffs, DEFAULT_RANK_TOL)?;
    let (err_test, j_test) = match &cfg.io.test_samples {
        Some(p) => {
            let test = read_samples_csv(p)?;
            let pred: DVector<f64> = krr_predict(&model, &map.features(&test)?)?;
            let jt = estimate_j(&SampleJacobians::new(&basis, &test)?, &coeffs, DEFAULT_RANK_TOL)?;
            (Some(rms_error(test.values(), &pred)), Some(jt))
        }
        None => (None, None),
    };
    let out = &cfg.io.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("model.txt"), model.to_text())?;
    let metrics = RegressMetrics {
        gamma: sel.gamma,
        ridge: sel.ridge,
        cv_rmse: sel.cv_rmse,
        err_train,
        j_train,
        err_test,
        j_test,
    };
    write_json(&out.join("regression.json"), &metrics)?;
    std::fs::write(out.join("config.json"), cfg.to_json()?)?;
    Ok(Outcome {
        code: EXIT_OK,
        message: format!(
            "gamma={:.3e} ridge={:.3e} cv_rmse={:.4e} err_train={:.4e}{}",
            sel.gamma,
            sel.ridge,
            sel.cv_rmse,
            err_train,
            err_test.map(|e| format!(" err_test={e:.4e}")).unwrap_or_default()
        ),
    })
}

pub fn cmd_benchmark(cfg: &Config) -> Result<Outcome> {
    let report = run_experiment(&cfg.experiment_config())?;
    report.write(&cfg.io.out)?;
    std::fs::write(cfg.io.out.join("config.json"), cfg.to_json()?)?;
    let failed = report.raw.iter().filter(|r| r.error.is_some()).count();
    let mut message = report.summary_table();
    if failed > 0 {
        message.push_str(&format!("{failed} cell(s) failed, see raw.csv\n"));
    }
    Ok(Outcome { code: EXIT_OK, message })
}

/// Draws of `||grad g||^2` for the configured case, with its `(d, k, A)`.
pub fn deviation_samples(case: DeviationCase, n: usize, seed: u64) -> (Vec<f64>, usize, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match case {
        DeviationCase::Square => {
            let unif = Uniform::new(0.0f64, 1.0).expect("valid interval");
            let h = (0..n).map(|_| 4.0 * unif.sample(&mut rng).powi(2)).collect();
            (h, 1, 2.0, 4.0)
        }
        DeviationCase::Quadratic => {
            let h2 = std::f64::consts::FRAC_PI_2;
            let unif: Uniform<f64> = Uniform::new(-h2, h2).expect("valid interval");
            let c = (8.0 / (std::f64::consts::PI * std::f64::consts::PI)).powi(2);
            let h = (0..n)
                .map(|_| c * (0..8).map(|_| unif.sample(&mut rng).powi(2)).sum::<f64>())
                .collect();
            (h, 8, 2.0, 4.0)
        }
    }
}

#[derive(Debug, Serialize)]
struct DeviationOutput {
    case: DeviationCase,
    s: f64,
    k: f64,
    a: f64,
    reports: Vec<DeviationReport>,
}

pub fn cmd_check_deviation(cfg: &Config) -> Result<Outcome> {
    let dc = &cfg.deviation;
    if !dc.small && !dc.large {
        return Err(Error::InvalidInput("nothing to check: small and large are both off".into()));
    }
    let (h, d, k, a) = deviation_samples(dc.case, dc.n_samples, cfg.seed);
    let s = dc.s.unwrap_or(1.0 / d as f64);
    let mut reports = Vec::new();
    if dc.small {
        reports.push(check_small_deviation(&h, k, a, s, &dc.eps_grid)?);
    }
    if dc.large {
        reports.push(check_large_deviation(&h, k, a, s, &dc.t_grid)?);
    }
    let violations: usize = reports.iter().map(|r| r.violations).sum();
    let out = &cfg.io.out;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("deviation.json"), &DeviationOutput { case: dc.case, s, k, a, reports })?;
    std::fs::write(out.join("config.json"), cfg.to_json()?)?;
    Ok(Outcome {
        code: if violations == 0 { EXIT_OK } else { EXIT_VIOLATION },
        message: format!("{violations} violation(s) beyond Monte-Carlo slack"),
    })
}

pub fn cmd_sample(cfg: &Config, n: usize, file: Option<&Path>) -> Result<Outcome> {
    let bench = Benchmark::new(cfg.experiment.benchmark);
    let samples = bench.sample_set(n, cfg.seed)?;
    let path = match file {
        Some(f) => f.to_path_buf(),
        None => {
            std::fs::create_dir_all(&cfg.io.out)?;
            cfg.io.out.join("samples.csv")
        }
    };
    write_samples_csv(&path, &samples)?;
    Ok(Outcome {
        code: EXIT_OK,
        message: format!("wrote {n} {} samples to {}", bench.id.name(), path.display()),
    })
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_INPUT
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    if cli.print_config {
        match cfg.to_json() {
            Ok(t) => {
                print!("{t}");
                return EXIT_OK;
            }
            Err(e) => {
                eprintln!("error: {e}");
                return exit_code(&e);
            }
        }
    }
    if let Some(n) = cli.threads {
        // fails only if the global pool already exists, which keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let res = match &cli.command {
        Command::Learn(_) => cmd_learn(&cfg),
        Command::Regress(_) => cmd_regress(&cfg),
        Command::Benchmark(_) => cmd_benchmark(&cfg),
        Command::CheckDeviation => cmd_check_deviation(&cfg),
        Command::Sample(a) => cmd_sample(&cfg, a.n, a.file.as_deref()),
    };
    match res {
        Ok(o) => {
            print!("{}", o.message);
            if !o.message.ends_with('\n') {
                println!();
            }
            o.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
