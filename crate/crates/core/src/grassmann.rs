//! Direct minimization of `J` over the Grassmann manifold of `m`-dimensional
//! subspaces of coefficient space, and the linear (active-subspace) initializer.
//!
//! Points are represented by `R`-orthonormal coefficient matrices `G`
//! (`G^T R G = I`). The Riemannian gradient for the `R` metric is `R^{-1} grad_E J`,
//! which is horizontal because `J(G A) = J(G)` forces `G^T grad_E J = 0`.
//! Search directions follow Polak-Ribiere+ conjugate gradients with a reset to
//! steepest descent whenever the direction is not a descent direction; steps
//! are retracted by `R`-orthonormalization and accepted by Armijo backtracking.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::{FeatureBasis, GramMatrix};
use crate::error::{Error, Result};
use crate::geometry::{span_basis, DEFAULT_RANK_TOL};
use crate::sum::fixed_tree_sum;
use crate::surrogate::{estimate_j, greedy_learn, orthonormalize, SampleJacobians};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop when the gradient norm falls below this fraction of the initial one.
    pub grad_tol: f64,
    pub step_init: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 500,
            grad_tol: 1e-9,
            step_init: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 60,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidInput(format!("shrink must lie in (0,1), got {}", self.shrink)));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::InvalidInput(format!(
                "sufficient_decrease must lie in (0,1), got {}",
                self.sufficient_decrease
            )));
        }
        if !(self.step_init > 0.0) || !(self.grad_tol >= 0.0) {
            return Err(Error::InvalidInput("step_init must be > 0 and grad_tol >= 0".into()));
        }
        Ok(())
    }
}

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    MaxIters,
    LineSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub j: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub coeffs: DMatrix<f64>,
    pub trace: Vec<TraceRow>,
    pub stop: StopReason,
}

impl OptimResult {
    pub fn final_j(&self) -> f64 {
        self.trace.last().map(|r| r.j).unwrap_or(f64::NAN)
    }
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iter,J,grad_norm,step")?;
    for r in trace {
        writeln!(f, "{},{:e},{:e},{:e}", r.iter, r.j, r.grad_norm, r.step)?;
    }
    Ok(())
}

/// Active-subspace start: the top `m` eigenvectors of `mean grad u grad u^T`,
/// each written on the degree-one basis functions, then `R`-orthonormalized.
pub fn linear_init(
    data: &SampleJacobians,
    basis: &FeatureBasis,
    r: &GramMatrix,
    m: usize,
) -> Result<DMatrix<f64>> {
    let d = basis.dim();
    if m == 0 || m > d {
        return Err(Error::InvalidInput(format!(
            "linear start needs 1 <= m <= d = {d}, got {m}"
        )));
    }
    let units = basis.unit_positions()?;
    let c = fixed_tree_sum(
        data.len(),
        || DMatrix::zeros(d, d),
        |acc: &mut DMatrix<f64>, i| acc.ger(1.0, &data.gradients()[i], &data.gradients()[i], 1.0),
    ) / data.len() as f64;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut g = DMatrix::zeros(basis.len(), m);
    for (col, &e) in order.iter().take(m).enumerate() {
        let dir = eig.eigenvectors.column(e);
        let sign = dir
            .iter()
            .find(|v| v.abs() > 1e-12)
            .map(|v| v.signum())
            .unwrap_or(1.0);
        for (nu, &pos) in units.iter().enumerate() {
            g[(pos, col)] = sign * dir[nu] / basis.families()[nu].linear_slope();
        }
    }
    orthonormalize(&g, r)
}

/// Euclidean gradient of `J` with respect to `G`:
/// `-(2/N) sum grad Phi^T (I - P_i) b_i b_i^T M_i (M_i^T M_i)^{-1}`.
pub fn grad_j_euclidean(data: &SampleJacobians, g: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    Ok(objective_and_gradient(data, g, tol)?.1)
}

struct Acc {
    j: f64,
    grad: DMatrix<f64>,
    collapsed: usize,
}

impl<'a> std::ops::AddAssign<&'a Acc> for Acc {
    fn add_assign(&mut self, o: &'a Acc) {
        self.j += o.j;
        self.grad += &o.grad;
        self.collapsed += o.collapsed;
    }
}

/// `J(G)` and its Euclidean gradient in one pass.
pub fn objective_and_gradient(
    data: &SampleJacobians,
    g: &DMatrix<f64>,
    tol: f64,
) -> Result<(f64, DMatrix<f64>)> {
    let (k, m) = g.shape();
    if k != data.n_features() {
        return Err(Error::Shape(format!(
            "G has {k} rows for {} features",
            data.n_features()
        )));
    }
    let acc = fixed_tree_sum(
        data.len(),
        || Acc {
            j: 0.0,
            grad: DMatrix::zeros(k, m),
            collapsed: 0,
        },
        |acc: &mut Acc, i| {
            let jac = &data.jacobians()[i];
            let b = &data.gradients()[i];
            let mm = jac * g;
            let s = mm.tr_mul(&mm);
            let eig = SymmetricEigen::new(s.clone());
            let top = eig.eigenvalues.max();
            let chol = if top > 0.0 && eig.eigenvalues.min() > tol * tol * top {
                s.cholesky()
            } else {
                None
            };
            let Some(chol) = chol else {
                let q = span_basis(&mm, tol).unwrap_or_else(|_| DMatrix::zeros(b.len(), 0));
                acc.j += (b - &q * q.tr_mul(b)).norm_squared();
                acc.collapsed += 1;
                return;
            };
            // coefficients of the projection of b onto span(M)
            let c = chol.solve(&mm.tr_mul(b));
            let resid = b - &mm * &c;
            acc.j += resid.norm_squared();
            // -2 J^T resid c^T
            let jr = jac.tr_mul(&resid);
            acc.grad.ger(-2.0, &jr, &c, 1.0);
        },
    );
    let n = data.len() as f64;
    if !acc.j.is_finite() || acc.grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("objective or gradient is not finite".into()));
    }
    if 2 * acc.collapsed > data.len() {
        return Err(Error::IllConditioned(format!(
            "feature Jacobian is rank deficient at {} of {} samples",
            acc.collapsed,
            data.len()
        )));
    }
    Ok((acc.j / n, acc.grad / n))
}

fn inner(r: &GramMatrix, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    x.dot(&(r.matrix() * y))
}

/// Projection onto the horizontal space at `G`: `X - G (G^T R X)`.
fn horizontal(r: &GramMatrix, g: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    x - g * g.tr_mul(&(r.matrix() * x))
}

/// Riemannian conjugate-gradient descent of `J` from the `R`-orthonormal start `g0`.
pub fn minimize_j(
    data: &SampleJacobians,
    r: &GramMatrix,
    g0: &DMatrix<f64>,
    cfg: &OptimizerConfig,
) -> Result<OptimResult> {
    cfg.validate()?;
    let tol = DEFAULT_RANK_TOL;
    let mut g = orthonormalize(g0, r)?;
    let (mut f, egrad) = objective_and_gradient(data, &g, tol)?;
    let mut grad = horizontal(r, &g, &r.solve(&egrad));
    let mut gnorm = inner(r, &grad, &grad).max(0.0).sqrt();
    let g0norm = gnorm;
    let mut trace = vec![TraceRow {
        iter: 0,
        j: f,
        grad_norm: gnorm,
        step: 0.0,
    }];
    let scale = data.mean_grad_sq().max(f64::MIN_POSITIVE);
    let mut dir = -&grad;
    let mut step_guess = cfg.step_init;
    let mut stop = StopReason::MaxIters;
    for iter in 1..=cfg.max_iters {
        if gnorm <= cfg.grad_tol * g0norm || gnorm <= 1e-15 * scale || f <= 0.0 {
            stop = StopReason::GradTol;
            break;
        }
        let mut slope = inner(r, &grad, &dir);
        if !(slope < 0.0) {
            dir = -&grad;
            slope = -gnorm * gnorm;
        }
        let mut t = step_guess;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let trial = &g + &dir * t;
            if let Ok(gn) = orthonormalize(&trial, r) {
                match objective_and_gradient(data, &gn, tol) {
                    Ok((fnew, egn)) if fnew <= f + cfg.sufficient_decrease * t * slope => {
                        accepted = Some((gn, fnew, egn));
                        break;
                    }
                    Ok((fnew, _)) if !fnew.is_finite() => {
                        return Err(Error::Numeric(format!("non-finite objective at iteration {iter}")))
                    }
                    _ => {}
                }
            }
            t *= cfg.shrink;
        }
        let Some((gn, fnew, egn)) = accepted else {
            stop = StopReason::LineSearch;
            break;
        };
        let grad_new = horizontal(r, &gn, &r.solve(&egn));
        let old_transported = horizontal(r, &gn, &grad);
        let beta = (inner(r, &grad_new, &(&grad_new - &old_transported)) / (gnorm * gnorm)).max(0.0);
        dir = -&grad_new + horizontal(r, &gn, &dir) * beta;
        g = gn;
        f = fnew;
        grad = grad_new;
        gnorm = inner(r, &grad, &grad).max(0.0).sqrt();
        trace.push(TraceRow {
            iter,
            j: f,
            grad_norm: gnorm,
            step: t,
        });
        step_guess = (2.0 * t).min(1e3 * cfg.step_init);
    }
    Ok(OptimResult {
        coeffs: g,
        trace,
        stop,
    })
}

/// Feature-learning procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Greedy surrogate eigensolve.
    Sur,
    /// Grassmann descent from the linear start.
    Gli,
    /// Grassmann descent from the surrogate start.
    Gsi,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Sur => "sur",
            Method::Gli => "gli",
            Method::Gsi => "gsi",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sur" => Ok(Method::Sur),
            "gli" => Ok(Method::Gli),
            "gsi" => Ok(Method::Gsi),
            _ => Err(Error::InvalidInput(format!("unknown method {s:?}"))),
        }
    }
}

/// Result of a learning run: `R`-orthonormal coefficients plus diagnostics.
#[derive(Debug, Clone)]
pub struct Learned {
    pub coeffs: DMatrix<f64>,
    /// `J` at the starting point of the optimizer (or at the surrogate solution).
    pub j_init: f64,
    pub j_final: f64,
    pub trace: Vec<TraceRow>,
}

/// Runs `method` on precomputed Jacobians with Gram matrix `r`.
pub fn learn(
    method: Method,
    data: &SampleJacobians,
    basis: &FeatureBasis,
    r: &GramMatrix,
    m: usize,
    cfg: &OptimizerConfig,
) -> Result<Learned> {
    let tol = DEFAULT_RANK_TOL;
    let start = match method {
        Method::Sur | Method::Gsi => greedy_learn(data, r, m, tol)?,
        Method::Gli => linear_init(data, basis, r, m)?,
    };
    let j_init = estimate_j(data, &start, tol)?;
    if method == Method::Sur {
        return Ok(Learned {
            coeffs: start,
            j_init,
            j_final: j_init,
            trace: Vec::new(),
        });
    }
    let res = minimize_j(data, r, &start, cfg)?;
    let coeffs = if res.trace.len() > 1 { res.coeffs } else { start };
    let j_final = estimate_j(data, &coeffs, tol)?;
    Ok(Learned {
        coeffs,
        j_init,
        j_final,
        trace: res.trace,
    })
}
