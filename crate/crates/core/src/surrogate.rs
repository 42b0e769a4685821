//! Monte-Carlo estimators of the Poincaré objective `J` and of its quadratic
//! surrogates, the matrices defining those quadratic forms, and the greedy
//! eigenvalue-based learner.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::basis::{assemble_gram, FeatureBasis, GramMatrix};
use crate::error::{Error, Result};
use crate::geometry::{span_basis, split_w_v};
use crate::sum::{fixed_tree_sum, sum_f64};

/// Points, function values and gradients of the target function.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: DMatrix<f64>,
    values: DVector<f64>,
    gradients: DMatrix<f64>,
    seed: u64,
}

impl SampleSet {
    pub fn new(
        points: DMatrix<f64>,
        values: DVector<f64>,
        gradients: DMatrix<f64>,
        seed: u64,
    ) -> Result<Self> {
        let (n, d) = points.shape();
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput("sample set must be nonempty".into()));
        }
        if values.len() != n || gradients.shape() != (n, d) {
            return Err(Error::Shape(format!(
                "points {n}x{d}, values {}, gradients {}x{}",
                values.len(),
                gradients.nrows(),
                gradients.ncols()
            )));
        }
        let finite = points
            .iter()
            .chain(values.iter())
            .chain(gradients.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("sample set has non-finite entries".into()));
        }
        Ok(SampleSet {
            points,
            values,
            gradients,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }
    pub fn gradients(&self) -> &DMatrix<f64> {
        &self.gradients
    }
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }
    pub fn gradient(&self, i: usize) -> DVector<f64> {
        self.gradients.row(i).transpose()
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> SampleSet {
        SampleSet {
            points: self.points.select_rows(idx),
            values: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.values[i])),
            gradients: self.gradients.select_rows(idx),
            seed: self.seed,
        }
    }

    /// `(1/N) sum ||grad u(x_i)||^2`.
    pub fn mean_grad_sq(&self) -> f64 {
        sum_f64(self.len(), |i| self.gradients.row(i).norm_squared()) / self.len() as f64
    }
}

/// Basis Jacobians evaluated on a sample set, paired with the target gradients.
#[derive(Debug, Clone)]
pub struct SampleJacobians {
    jacobians: Vec<DMatrix<f64>>,
    gradients: Vec<DVector<f64>>,
}

impl SampleJacobians {
    pub fn new(basis: &FeatureBasis, samples: &SampleSet) -> Result<Self> {
        if basis.dim() != samples.dim() {
            return Err(Error::Shape(format!(
                "basis dimension {} but samples have dimension {}",
                basis.dim(),
                samples.dim()
            )));
        }
        let jacobians = (0..samples.len())
            .map(|i| basis.jacobian(&samples.point(i)))
            .collect::<Result<Vec<_>>>()?;
        let gradients = (0..samples.len()).map(|i| samples.gradient(i)).collect();
        Ok(SampleJacobians {
            jacobians,
            gradients,
        })
    }

    pub fn len(&self) -> usize {
        self.jacobians.len()
    }
    pub fn is_empty(&self) -> bool {
        self.jacobians.is_empty()
    }
    pub fn n_features(&self) -> usize {
        self.jacobians[0].ncols()
    }
    pub fn dim(&self) -> usize {
        self.jacobians[0].nrows()
    }
    pub fn jacobians(&self) -> &[DMatrix<f64>] {
        &self.jacobians
    }
    pub fn gradients(&self) -> &[DVector<f64>] {
        &self.gradients
    }

    pub fn subset(&self, idx: &[usize]) -> SampleJacobians {
        SampleJacobians {
            jacobians: idx.iter().map(|&i| self.jacobians[i].clone()).collect(),
            gradients: idx.iter().map(|&i| self.gradients[i].clone()).collect(),
        }
    }

    pub fn gram(&self) -> Result<GramMatrix> {
        assemble_gram(&self.jacobians)
    }

    pub fn mean_grad_sq(&self) -> f64 {
        sum_f64(self.len(), |i| self.gradients[i].norm_squared()) / self.len() as f64
    }

    fn check_coeffs(&self, g: &DMatrix<f64>) -> Result<()> {
        if g.nrows() != self.n_features() || g.ncols() == 0 {
            return Err(Error::Shape(format!(
                "coefficients are {}x{} for {} features",
                g.nrows(),
                g.ncols(),
                self.n_features()
            )));
        }
        Ok(())
    }
}

/// Feature map `g(x) = G^T Phi(x)`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    basis: FeatureBasis,
    coeffs: DMatrix<f64>,
}

impl FeatureMap {
    pub fn new(basis: FeatureBasis, coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() != basis.len() || coeffs.ncols() == 0 {
            return Err(Error::Shape(format!(
                "coefficients are {}x{} for a basis of {} features",
                coeffs.nrows(),
                coeffs.ncols(),
                basis.len()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("coefficients must be finite".into()));
        }
        if coeffs.column_iter().any(|c| c.norm() == 0.0) {
            return Err(Error::InvalidInput("feature coefficients have a zero column".into()));
        }
        Ok(FeatureMap { basis, coeffs })
    }

    pub fn basis(&self) -> &FeatureBasis {
        &self.basis
    }
    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }
    pub fn m(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.coeffs.tr_mul(&self.basis.eval(x)?))
    }

    /// `d x m` Jacobian of `g`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.basis.jacobian(x)? * &self.coeffs)
    }

    /// Features of every sample point, as an `N x m` matrix.
    pub fn features(&self, samples: &SampleSet) -> Result<DMatrix<f64>> {
        let mut z = DMatrix::zeros(samples.len(), self.m());
        for i in 0..samples.len() {
            z.row_mut(i).copy_from(&self.eval(&samples.point(i))?.transpose());
        }
        Ok(z)
    }
}

/// Writes `G` as text: a header line `K m`, then `K` rows of `m` numbers.
pub fn write_coeffs(path: &Path, g: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, format_coeffs(g))?;
    Ok(())
}

pub fn format_coeffs(g: &DMatrix<f64>) -> String {
    let mut s = format!("{} {}\n", g.nrows(), g.ncols());
    for row in g.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    s
}

pub fn parse_coeffs(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty coefficient file".into(),
    })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            line: hl + 1,
            msg: format!("bad header: {e}"),
        })?;
    let [k, m] = dims[..] else {
        return Err(Error::Parse {
            line: hl + 1,
            msg: "header must be `K m`".into(),
        });
    };
    let mut data = Vec::with_capacity(k * m);
    let mut rows = 0;
    for (ln, line) in lines {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: ln + 1,
                msg: format!("{e}"),
            })?;
        if vals.len() != m {
            return Err(Error::Parse {
                line: ln + 1,
                msg: format!("expected {m} values, found {}", vals.len()),
            });
        }
        data.extend(vals);
        rows += 1;
    }
    if rows != k {
        return Err(Error::Parse {
            line: hl + 1,
            msg: format!("header announces {k} rows, found {rows}"),
        });
    }
    Ok(DMatrix::from_row_slice(k, m, &data))
}

pub fn read_coeffs(path: &Path) -> Result<DMatrix<f64>> {
    parse_coeffs(&std::fs::read_to_string(path)?)
}

/// `J(G) = (1/N) sum ||(I - P_{grad Phi(x_i) G}) grad u(x_i)||^2`.
pub fn estimate_j(data: &SampleJacobians, g: &DMatrix<f64>, tol: f64) -> Result<f64> {
    data.check_coeffs(g)?;
    let terms = (0..data.len())
        .map(|i| {
            let m = &data.jacobians[i] * g;
            let b = &data.gradients[i];
            let q = span_basis(&m, tol)?;
            Ok((b - &q * q.tr_mul(b)).norm_squared())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sum_f64(terms.len(), |i| terms[i]) / data.len() as f64)
}

/// Single-feature surrogate `L_1(g) = (1/N) sum ||grad u||^2 ||(I - P_{grad u}) grad g||^2`.
pub fn estimate_l1(data: &SampleJacobians, g: &DMatrix<f64>) -> Result<f64> {
    data.check_coeffs(g)?;
    if g.ncols() != 1 {
        return Err(Error::InvalidInput(format!(
            "single-feature surrogate needs m = 1, got m = {}",
            g.ncols()
        )));
    }
    let total = sum_f64(data.len(), |i| {
        let c = &data.jacobians[i] * g.column(0);
        let b = &data.gradients[i];
        let bb = b.norm_squared();
        if bb == 0.0 {
            return 0.0;
        }
        let r = &c - b * (b.dot(&c) / bb);
        bb * r.norm_squared()
    });
    Ok(total / data.len() as f64)
}

/// Multi-feature surrogate `L_{m,j}(g) = (1/N) sum ||v||^2 ||(I - P_v) w||^2` (zero-based `j`).
pub fn estimate_lmj(data: &SampleJacobians, g: &DMatrix<f64>, j: usize, tol: f64) -> Result<f64> {
    data.check_coeffs(g)?;
    if j >= g.ncols() {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: g.ncols(),
        });
    }
    let terms = (0..data.len())
        .map(|i| {
            let jac = &data.jacobians[i] * g;
            let (w, v) = split_w_v(&jac, &data.gradients[i], j, tol)?;
            let vv = v.norm_squared();
            if vv == 0.0 {
                return Ok(0.0);
            }
            let r = &w - &v * (v.dot(&w) / vv);
            Ok(vv * r.norm_squared())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sum_f64(terms.len(), |i| terms[i]) / data.len() as f64)
}

/// Matrices of the surrogate quadratic form `G^T H G`, with `H = H1 - H2`.
#[derive(Debug, Clone)]
pub struct SurrogateMatrices {
    pub h1: DMatrix<f64>,
    pub h2: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub shift_alpha: Option<f64>,
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[derive(Clone)]
struct Pair(DMatrix<f64>, DMatrix<f64>);

impl<'a> std::ops::AddAssign<&'a Pair> for Pair {
    fn add_assign(&mut self, o: &'a Pair) {
        self.0 += &o.0;
        self.1 += &o.1;
    }
}

fn finish(pair: Pair, n: usize) -> SurrogateMatrices {
    let h1 = symmetrize(pair.0 / n as f64);
    let h2 = symmetrize(pair.1 / n as f64);
    let h = &h1 - &h2;
    SurrogateMatrices {
        h1,
        h2,
        h,
        shift_alpha: None,
    }
}

/// `H1 = mean ||grad u||^2 grad Phi^T grad Phi`, `H2 = mean grad Phi^T grad u grad u^T grad Phi`.
pub fn assemble_h(data: &SampleJacobians) -> Result<SurrogateMatrices> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    let k = data.n_features();
    let sum = fixed_tree_sum(
        data.len(),
        || Pair(DMatrix::zeros(k, k), DMatrix::zeros(k, k)),
        |acc: &mut Pair, i| {
            let jac = &data.jacobians[i];
            let b = &data.gradients[i];
            acc.0.gemm_tr(b.norm_squared(), jac, jac, 1.0);
            let jb = jac.tr_mul(b);
            acc.1.ger(1.0, &jb, &jb, 1.0);
        },
    );
    Ok(finish(sum, data.len()))
}

/// Matrices of `L_{m,j}` as a quadratic form in `G_j`, given the other columns
/// `G_{-j}`: `mean grad Phi^T (||v||^2 P - v v^T) grad Phi` with
/// `P = I - P_{grad Phi G_{-j}}` and `v = P grad u`.
pub fn assemble_h_gj(
    data: &SampleJacobians,
    g_minus_j: &DMatrix<f64>,
    tol: f64,
) -> Result<SurrogateMatrices> {
    if g_minus_j.ncols() == 0 {
        return assemble_h(data);
    }
    if data.is_empty() {
        return Err(Error::InvalidInput("no samples".into()));
    }
    data.check_coeffs(g_minus_j)?;
    let k = data.n_features();
    let bases = (0..data.len())
        .map(|i| span_basis(&(&data.jacobians[i] * g_minus_j), tol))
        .collect::<Result<Vec<_>>>()?;
    let sum = fixed_tree_sum(
        data.len(),
        || Pair(DMatrix::zeros(k, k), DMatrix::zeros(k, k)),
        |acc: &mut Pair, i| {
            let jac = &data.jacobians[i];
            let q = &bases[i];
            let b = &data.gradients[i];
            let v = b - q * q.tr_mul(b);
            // P J = J - Q (Q^T J)
            let pj = jac - q * q.tr_mul(jac);
            acc.0.gemm_tr(v.norm_squared(), &pj, &pj, 1.0);
            let jv = jac.tr_mul(&v);
            acc.1.ger(1.0, &jv, &jv, 1.0);
        },
    );
    Ok(finish(sum, data.len()))
}

/// Full symmetric-definite generalized eigendecomposition `H x = lambda R x`,
/// eigenvalues ascending, eigenvectors `R`-orthonormal.
pub fn gen_eig(h: &DMatrix<f64>, r: &GramMatrix) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let k = r.dim();
    if h.shape() != (k, k) {
        return Err(Error::Shape(format!(
            "H is {}x{} but R is {k}x{k}",
            h.nrows(),
            h.ncols()
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("H has non-finite entries".into()));
    }
    let l = r.cholesky().l();
    // C = L^{-1} H L^{-T}
    let y = l
        .solve_lower_triangular(h)
        .ok_or_else(|| Error::SingularMetric("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::SingularMetric("triangular solve failed".into()))?;
    let eig = SymmetricEigen::new(symmetrize(c));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(k, order.iter().map(|&i| eig.eigenvalues[i]));
    let z = eig.eigenvectors.select_columns(&order);
    let mut x = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::SingularMetric("triangular solve failed".into()))?;
    for mut col in x.column_iter_mut() {
        fix_sign(&mut col);
    }
    Ok((vals, x))
}

fn fix_sign(col: &mut nalgebra::DVectorViewMut<f64>) {
    let scale = col.amax();
    if let Some(first) = col.iter().find(|v| v.abs() > 1e-12 * scale).copied() {
        if first < 0.0 {
            col.neg_mut();
        }
    }
}

/// Minimal generalized eigenpair of `(H, R)`; the eigenvector satisfies `x^T R x = 1`.
pub fn solve_min_gen_eig(h: &DMatrix<f64>, r: &GramMatrix) -> Result<(f64, DVector<f64>)> {
    let (vals, vecs) = gen_eig(h, r)?;
    Ok((vals[0], vecs.column(0).into_owned()))
}

/// Largest generalized eigenvalue of `(H, R)`.
pub fn largest_gen_eig(h: &DMatrix<f64>, r: &GramMatrix) -> Result<f64> {
    let (vals, _) = gen_eig(h, r)?;
    Ok(vals[vals.len() - 1])
}

/// `G (G^T R G)^{-1/2}`: same column span, `G^T R G = I`.
pub fn orthonormalize(g: &DMatrix<f64>, r: &GramMatrix) -> Result<DMatrix<f64>> {
    if g.nrows() != r.dim() {
        return Err(Error::Shape(format!(
            "G has {} rows but R is {}x{}",
            g.nrows(),
            r.dim(),
            r.dim()
        )));
    }
    let s = symmetrize(g.tr_mul(&(r.matrix() * g)));
    let eig = SymmetricEigen::new(s);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || !(min > 1e-14 * max) {
        return Err(Error::RankDeficient(format!(
            "G^T R G is singular (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    Ok(g * w)
}

/// Greedy learner: the first column minimizes `L_1`; column `j` minimizes
/// `L_{m,j}` given the previous columns, with the shift `alpha R G_{-j} G_{-j}^T R`
/// pushing the solution away from the span of the previous columns.
pub fn greedy_learn(
    data: &SampleJacobians,
    r: &GramMatrix,
    m: usize,
    tol: f64,
) -> Result<DMatrix<f64>> {
    let k = data.n_features();
    if m == 0 || m > k {
        return Err(Error::InvalidInput(format!(
            "number of features must lie in 1..={k}, got {m}"
        )));
    }
    let mats = assemble_h(data)?;
    let (_, g1) = solve_min_gen_eig(&mats.h, r)?;
    let mut g = DMatrix::zeros(k, m);
    g.set_column(0, &g1);
    if m == 1 {
        return Ok(g);
    }
    let alpha = largest_gen_eig(&mats.h1, r)?;
    for j in 1..m {
        let prev = g.columns(0, j).into_owned();
        let hgj = assemble_h_gj(data, &prev, tol)?;
        let rg = r.matrix() * &prev;
        let h3 = &rg * rg.transpose();
        let (_, mut col) = solve_min_gen_eig(&(hgj.h + h3 * alpha), r)?;
        // R-orthogonalize against the previous columns and renormalize
        let coef = rg.tr_mul(&col);
        col -= &prev * coef;
        let norm = col.dot(&(r.matrix() * &col)).sqrt();
        if !(norm > 0.0) {
            return Err(Error::RankDeficient(format!(
                "feature {} collapsed onto the previous ones",
                j + 1
            )));
        }
        g.set_column(j, &(col / norm));
    }
    orthonormalize(&g, r)
}
