//! Gaussian-kernel ridge regression on learned features, its cross-validated
//! hyperparameter selection, and the cross-validated choice of the multi-index
//! set `(p, k)` used by the feature learners.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_index_set, Family, FeatureBasis, PNorm};
use crate::error::{Error, Result};
use crate::geometry::DEFAULT_RANK_TOL;
use crate::grassmann::{learn, Method, OptimizerConfig};
use crate::surrogate::{estimate_j, SampleJacobians, SampleSet};

/// Fitted model `f(z) = sum_i a_i exp(-gamma ||z_i - z||^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrrModel {
    pub train_features: DMatrix<f64>,
    pub dual_coeffs: DVector<f64>,
    pub gamma: f64,
    pub ridge: f64,
}

fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|c| (a[(i, c)] - b[(j, c)]).powi(2)).sum()
}

/// Kernel matrix between the rows of `a` and the rows of `b`.
pub fn kernel_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| (-gamma * sq_dist(a, i, b, j)).exp())
}

pub fn krr_fit(z: &DMatrix<f64>, u: &DVector<f64>, gamma: f64, ridge: f64) -> Result<KrrModel> {
    let n = z.nrows();
    if n == 0 || u.len() != n {
        return Err(Error::Shape(format!("{n} feature rows for {} values", u.len())));
    }
    if !(gamma > 0.0) || !(ridge > 0.0) {
        return Err(Error::InvalidInput(format!(
            "gamma and ridge must be positive, got {gamma} and {ridge}"
        )));
    }
    let mut k = kernel_matrix(z, z, gamma);
    for i in 0..n {
        k[(i, i)] += ridge;
    }
    let chol = k.clone().cholesky().ok_or_else(|| {
        let eig = SymmetricEigen::new(k.clone()).eigenvalues;
        Error::Numeric(format!(
            "kernel system is not positive definite (condition estimate {:e})",
            eig.max() / eig.min().abs()
        ))
    })?;
    let a = chol.solve(u);
    // backward error of the solve; the forward residual is dominated by conditioning
    let resid = (&k * &a - u).norm();
    if !resid.is_finite() || resid > 1e3 * n as f64 * f64::EPSILON * (k.norm() * a.norm() + u.norm()) {
        return Err(Error::Numeric(format!(
            "kernel solve residual {resid:e} exceeds tolerance"
        )));
    }
    Ok(KrrModel {
        train_features: z.clone(),
        dual_coeffs: a,
        gamma,
        ridge,
    })
}

pub fn krr_predict(model: &KrrModel, query: &DMatrix<f64>) -> Result<DVector<f64>> {
    if query.ncols() != model.train_features.ncols() {
        return Err(Error::Shape(format!(
            "query has {} features, model has {}",
            query.ncols(),
            model.train_features.ncols()
        )));
    }
    Ok(kernel_matrix(query, &model.train_features, model.gamma) * &model.dual_coeffs)
}

impl KrrModel {
    /// Text form: header `N m gamma ridge`, then the `N` feature rows, then the `N` coefficients.
    pub fn to_text(&self) -> String {
        let (n, m) = self.train_features.shape();
        let mut s = format!("{n} {m} {:e} {:e}\n", self.gamma, self.ridge);
        for row in self.train_features.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        for a in self.dual_coeffs.iter() {
            let _ = writeln!(s, "{a:e}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let parse_line = |ln: usize, l: &str| -> Result<Vec<f64>> {
            l.split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|e| Error::Parse {
                        line: ln + 1,
                        msg: e.to_string(),
                    })
                })
                .collect()
        };
        let (hl, h) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty model file".into(),
        })?;
        let head = parse_line(hl, h)?;
        if head.len() != 4 || head[0] < 1.0 || head[1] < 1.0 {
            return Err(Error::Parse {
                line: hl + 1,
                msg: "header must be `N m gamma ridge`".into(),
            });
        }
        let (n, m) = (head[0] as usize, head[1] as usize);
        let mut z = Vec::with_capacity(n * m);
        let mut a = Vec::with_capacity(n);
        for (ln, l) in lines {
            let vals = parse_line(ln, l)?;
            let expected = if z.len() < n * m { m } else { 1 };
            if vals.len() != expected || a.len() == n {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: format!("expected {expected} values"),
                });
            }
            if z.len() < n * m {
                z.extend(vals);
            } else {
                a.push(vals[0]);
            }
        }
        if a.len() != n {
            return Err(Error::Parse {
                line: hl + 1,
                msg: format!("model file truncated: {} of {n} coefficients", a.len()),
            });
        }
        Ok(KrrModel {
            train_features: DMatrix::from_row_slice(n, m, &z),
            dual_coeffs: DVector::from_vec(a),
            gamma: head[2],
            ridge: head[3],
        })
    }
}

/// Endpoint-inclusive uniform grid of `n` points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Cross-validation grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvGrid {
    pub log10_gamma: Vec<f64>,
    pub log10_ridge: Vec<f64>,
    pub folds: usize,
    pub pk_candidates: Vec<(PNorm, f64)>,
    pub pk_folds: usize,
}

impl Default for CvGrid {
    fn default() -> Self {
        let mut pk = Vec::new();
        for k in [2.0, 3.0, 4.0, 5.0] {
            pk.push((PNorm::Finite(0.8), k));
        }
        for k in [2.0, 3.0, 4.0] {
            pk.push((PNorm::Finite(0.9), k));
        }
        for k in [1.0, 2.0, 3.0] {
            pk.push((PNorm::Finite(1.0), k));
        }
        CvGrid {
            log10_gamma: linspace(-6.0, -2.0, 30),
            log10_ridge: linspace(-11.0, -5.0, 40),
            folds: 10,
            pk_candidates: pk,
            pk_folds: 5,
        }
    }
}

/// Validation index sets: a seeded shuffle of `0..n` cut into `folds`
/// contiguous blocks whose sizes differ by at most one.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || n < folds {
        return Err(Error::InvalidInput(format!(
            "need at least 2 folds and n >= folds, got n = {n}, folds = {folds}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = n / folds;
    let extra = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

fn complement(n: usize, val: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in val {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KrrSelection {
    pub gamma: f64,
    pub ridge: f64,
    pub cv_rmse: f64,
}

/// Exhaustive grid search minimizing the mean validation RMSE. Ties go to the
/// larger ridge, then to the smaller gamma.
pub fn cv_select_krr(z: &DMatrix<f64>, u: &DVector<f64>, grid: &CvGrid, seed: u64) -> Result<KrrSelection> {
    let n = z.nrows();
    if u.len() != n {
        return Err(Error::Shape(format!("{n} feature rows for {} values", u.len())));
    }
    if grid.log10_gamma.is_empty() || grid.log10_ridge.is_empty() {
        return Err(Error::InvalidInput("empty cross-validation grid".into()));
    }
    let folds = fold_indices(n, grid.folds, seed)?;
    let ridges: Vec<f64> = grid.log10_ridge.iter().map(|r| 10f64.powf(*r)).collect();
    // scores[g][r] = mean RMSE over folds
    let scores: Vec<Vec<f64>> = grid
        .log10_gamma
        .par_iter()
        .map(|lg| {
            let gamma = 10f64.powf(*lg);
            let mut acc = vec![0.0; ridges.len()];
            for val in &folds {
                let tr = complement(n, val);
                let ztr = z.select_rows(&tr);
                let zval = z.select_rows(val);
                let utr = DVector::from_iterator(tr.len(), tr.iter().map(|&i| u[i]));
                let uval = DVector::from_iterator(val.len(), val.iter().map(|&i| u[i]));
                let eig = SymmetricEigen::new(kernel_matrix(&ztr, &ztr, gamma));
                let w = kernel_matrix(&zval, &ztr, gamma) * &eig.eigenvectors;
                let c = eig.eigenvectors.tr_mul(&utr);
                for (s, &ridge) in acc.iter_mut().zip(&ridges) {
                    let scaled = DVector::from_iterator(
                        c.len(),
                        c.iter()
                            .zip(eig.eigenvalues.iter())
                            .map(|(ci, l)| ci / (l.max(0.0) + ridge)),
                    );
                    let pred = &w * scaled;
                    *s += ((pred - &uval).norm_squared() / val.len() as f64).sqrt();
                }
            }
            acc.iter().map(|s| s / folds.len() as f64).collect()
        })
        .collect();
    let mut best: Option<(usize, usize, f64)> = None;
    for (gi, row) in scores.iter().enumerate() {
        for (ri, &s) in row.iter().enumerate() {
            if !s.is_finite() {
                continue;
            }
            let better = match best {
                None => true,
                Some((bg, br, bs)) => {
                    s < bs
                        || (s == bs
                            && (ridges[ri] > ridges[br]
                                || (ridges[ri] == ridges[br]
                                    && grid.log10_gamma[gi] < grid.log10_gamma[bg])))
                }
            };
            if better {
                best = Some((gi, ri, s));
            }
        }
    }
    let (gi, ri, s) =
        best.ok_or_else(|| Error::Numeric("no finite cross-validation score".into()))?;
    Ok(KrrSelection {
        gamma: 10f64.powf(grid.log10_gamma[gi]),
        ridge: ridges[ri],
        cv_rmse: s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSelection {
    pub p: PNorm,
    pub k: f64,
    pub n_features: usize,
    /// Mean validation `J` per candidate, in grid order (`None` when the learner failed).
    pub scores: Vec<Option<f64>>,
}

/// Chooses `(p, k)` by `pk_folds`-fold cross-validation of the validation `J`
/// of features learned on the training folds. Ties go to the smaller basis.
pub fn cv_select_basis(
    samples: &SampleSet,
    families: &[Family],
    m: usize,
    method: Method,
    grid: &CvGrid,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<BasisSelection> {
    if grid.pk_candidates.is_empty() {
        return Err(Error::InvalidInput("no (p, k) candidates".into()));
    }
    let n = samples.len();
    let folds = fold_indices(n, grid.pk_folds, seed)?;
    let mut scores = Vec::with_capacity(grid.pk_candidates.len());
    let mut sizes = Vec::with_capacity(grid.pk_candidates.len());
    for &(p, k) in &grid.pk_candidates {
        let basis = FeatureBasis::new(build_index_set(samples.dim(), p, k)?, families.to_vec())?;
        sizes.push(basis.len());
        let data = SampleJacobians::new(&basis, samples)?;
        let score = (|| -> Result<f64> {
            let mut total = 0.0;
            for val in &folds {
                let tr = complement(n, val);
                let dtr = data.subset(&tr);
                let r = dtr.gram()?;
                let learned = learn(method, &dtr, &basis, &r, m, opt)?;
                total += estimate_j(&data.subset(val), &learned.coeffs, DEFAULT_RANK_TOL)?;
            }
            Ok(total / folds.len() as f64)
        })();
        scores.push(score.ok().filter(|s| s.is_finite()));
    }
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        let Some(s) = s else { continue };
        best = match best {
            Some(b) if scores[b].unwrap() < *s => Some(b),
            Some(b) if scores[b].unwrap() == *s && sizes[b] <= sizes[i] => Some(b),
            _ => Some(i),
        };
    }
    let b = best.ok_or_else(|| {
        Error::Numeric("feature learning failed for every (p, k) candidate".into())
    })?;
    let (p, k) = grid.pk_candidates[b];
    Ok(BasisSelection {
        p,
        k,
        n_features: sizes[b],
        scores,
    })
}

/// Root mean square of `a - b`.
pub fn rms_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    ((a - b).norm_squared() / a.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_fit() {
        let z = DMatrix::from_element(1, 1, 0.3);
        let u = DVector::from_element(1, 2.0);
        let m = krr_fit(&z, &u, 1.0, 0.5).unwrap();
        assert!((m.dual_coeffs[0] - 2.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn two_point_fit_matches_explicit_inverse() {
        let z = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let ridge = 0.1;
        let m = krr_fit(&z, &u, 1.0, ridge).unwrap();
        let (a, b) = (1.0 + ridge, (-1.0f64).exp());
        let det = a * a - b * b;
        assert!((m.dual_coeffs[0] - a / det).abs() < 1e-14);
        assert!((m.dual_coeffs[1] + b / det).abs() < 1e-14);
    }

    #[test]
    fn predictions_interpolate_and_decay() {
        let z = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let u = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let m = krr_fit(&z, &u, 4.0, 1e-11).unwrap();
        let p = krr_predict(&m, &z).unwrap();
        assert!((p - &u).norm() <= 1e-4 * u.norm());
        let far = DMatrix::from_element(1, 1, 50.0);
        assert!(krr_predict(&m, &far).unwrap()[0].abs() < 1e-12);
        assert!(krr_predict(&m, &DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn grids_are_as_documented() {
        let g = CvGrid::default();
        assert_eq!(g.log10_gamma.len(), 30);
        assert_eq!(g.log10_ridge.len(), 40);
        assert_eq!((g.log10_gamma[0], g.log10_gamma[29]), (-6.0, -2.0));
        assert_eq!((g.log10_ridge[0], g.log10_ridge[39]), (-11.0, -5.0));
        assert_eq!(g.pk_candidates.len(), 10);
        assert_eq!((g.folds, g.pk_folds), (10, 5));
    }

    #[test]
    fn folds_partition() {
        let f = fold_indices(23, 5, 9).unwrap();
        let mut all: Vec<usize> = f.concat();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(f.iter().all(|v| v.len() == 4 || v.len() == 5));
        assert_eq!(f, fold_indices(23, 5, 9).unwrap());
        assert!(fold_indices(3, 5, 0).is_err());
    }

    #[test]
    fn single_candidate_grid() {
        let z = DMatrix::from_fn(20, 1, |i, _| i as f64 / 20.0);
        let u = z.column(0).into_owned();
        let grid = CvGrid {
            log10_gamma: vec![-1.0],
            log10_ridge: vec![-3.0],
            folds: 4,
            ..CvGrid::default()
        };
        let s = cv_select_krr(&z, &u, &grid, 0).unwrap();
        assert_eq!((s.gamma, s.ridge), (0.1, 1e-3));
    }

    #[test]
    fn model_text_roundtrip() {
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, -0.25]);
        let u = DVector::from_vec(vec![1.0, 3.0]);
        let m = krr_fit(&z, &u, 0.7, 1e-3).unwrap();
        assert_eq!(KrrModel::from_text(&m.to_text()).unwrap(), m);
    }
}
