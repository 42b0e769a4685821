//! Sparse tensorized orthonormal polynomial bases.
//!
//! A basis is a set of multi-indices `alpha` (zero excluded) together with one
//! univariate orthonormal family per input dimension; the feature
//! `Phi_alpha(x)` is the product of the univariate polynomials
//! `phi_{alpha_nu}(x_nu)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Univariate orthonormal family, tagged by the measure it is orthonormal for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// Shifted Legendre polynomials, orthonormal for `U(a, b)`.
    Legendre { a: f64, b: f64 },
    /// Probabilists' Hermite polynomials in `(x - mu) / sigma`, orthonormal for `N(mu, sigma^2)`.
    Hermite { mu: f64, sigma: f64 },
    /// Hermite polynomials in `(ln x - mu) / sigma`, orthonormal for `LogNormal(mu, sigma^2)`.
    LogHermite { mu: f64, sigma: f64 },
}

impl Family {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Family::Legendre { a, b } => a.is_finite() && b.is_finite() && a < b,
            Family::Hermite { mu, sigma } | Family::LogHermite { mu, sigma } => {
                mu.is_finite() && sigma.is_finite() && sigma > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidBasis(format!("bad family parameters {self:?}")))
        }
    }

    pub fn is_polynomial(&self) -> bool {
        !matches!(self, Family::LogHermite { .. })
    }

    /// Maps `x` to the reference variable and returns it with its derivative `d/dx`.
    fn reference(&self, x: f64) -> Result<(f64, f64)> {
        match *self {
            Family::Legendre { a, b } => Ok(((2.0 * x - a - b) / (b - a), 2.0 / (b - a))),
            Family::Hermite { mu, sigma } => Ok(((x - mu) / sigma, 1.0 / sigma)),
            Family::LogHermite { mu, sigma } => {
                if x <= 0.0 || !x.is_finite() {
                    return Err(Error::Domain(format!(
                        "log-Hermite family requires x > 0, got {x}"
                    )));
                }
                Ok(((x.ln() - mu) / sigma, 1.0 / (sigma * x)))
            }
        }
    }

    /// Values and `x`-derivatives of `phi_0..=phi_deg` at `x`.
    pub fn eval_with_derivatives(&self, x: f64, deg: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if !x.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite input {x}")));
        }
        let (t, dt) = self.reference(x)?;
        let mut p = vec![0.0; deg + 1];
        let mut dp = vec![0.0; deg + 1];
        p[0] = 1.0;
        if deg >= 1 {
            p[1] = t;
            dp[1] = 1.0;
        }
        match self {
            Family::Legendre { .. } => {
                for n in 1..deg {
                    let nf = n as f64;
                    p[n + 1] = ((2.0 * nf + 1.0) * t * p[n] - nf * p[n - 1]) / (nf + 1.0);
                    dp[n + 1] = dp[n - 1] + (2.0 * nf + 1.0) * p[n];
                }
                for n in 0..=deg {
                    let c = (2.0 * n as f64 + 1.0).sqrt();
                    p[n] *= c;
                    dp[n] *= c * dt;
                }
            }
            Family::Hermite { .. } | Family::LogHermite { .. } => {
                for n in 1..deg {
                    p[n + 1] = t * p[n] - n as f64 * p[n - 1];
                }
                for n in 1..=deg {
                    dp[n] = n as f64 * p[n - 1];
                }
                let mut fact = 1.0f64;
                for n in 0..=deg {
                    if n > 0 {
                        fact *= n as f64;
                    }
                    let c = 1.0 / fact.sqrt();
                    p[n] *= c;
                    dp[n] *= c * dt;
                }
            }
        }
        Ok((p, dp))
    }

    /// Slope of `phi_1` with respect to its reference variable scaled back to `x`
    /// (for log-Hermite: with respect to `ln x`).
    pub fn linear_slope(&self) -> f64 {
        match *self {
            Family::Legendre { a, b } => 3f64.sqrt() * 2.0 / (b - a),
            Family::Hermite { sigma, .. } | Family::LogHermite { sigma, .. } => 1.0 / sigma,
        }
    }

    /// Monomial coefficients in `x` of `phi_0..=phi_deg`; row `n` holds `phi_n`.
    fn monomial_coefficients(&self, deg: usize) -> Result<Vec<Vec<f64>>> {
        let (scale, shift) = match *self {
            Family::Legendre { a, b } => (2.0 / (b - a), -(a + b) / (b - a)),
            Family::Hermite { mu, sigma } => (1.0 / sigma, -mu / sigma),
            Family::LogHermite { .. } => {
                return Err(Error::InvalidBasis(
                    "log-Hermite features are not polynomial in x".into(),
                ))
            }
        };
        // t(x) = scale * x + shift
        let mul_t = |poly: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; poly.len() + 1];
            for (j, &c) in poly.iter().enumerate() {
                out[j] += c * shift;
                out[j + 1] += c * scale;
            }
            out
        };
        let mut raw: Vec<Vec<f64>> = vec![vec![1.0]];
        if deg >= 1 {
            raw.push(vec![shift, scale]);
        }
        for n in 1..deg {
            let nf = n as f64;
            let tp = mul_t(&raw[n]);
            let prev = &raw[n - 1];
            let next: Vec<f64> = match self {
                Family::Legendre { .. } => tp
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| {
                        ((2.0 * nf + 1.0) * c - nf * prev.get(j).copied().unwrap_or(0.0))
                            / (nf + 1.0)
                    })
                    .collect(),
                _ => tp
                    .iter()
                    .enumerate()
                    .map(|(j, &c)| c - nf * prev.get(j).copied().unwrap_or(0.0))
                    .collect(),
            };
            raw.push(next);
        }
        let mut fact = 1.0f64;
        for (n, row) in raw.iter_mut().enumerate() {
            if n > 0 {
                fact *= n as f64;
            }
            let c = match self {
                Family::Legendre { .. } => (2.0 * n as f64 + 1.0).sqrt(),
                _ => 1.0 / fact.sqrt(),
            };
            row.iter_mut().for_each(|v| *v *= c);
            row.resize(deg + 1, 0.0);
        }
        Ok(raw)
    }

    /// Expansion of the monomials `x^0..=x^deg` in `phi_0..=phi_deg`; row `j` is `x^j`.
    fn monomial_expansion(&self, deg: usize) -> Result<Vec<Vec<f64>>> {
        let c = self.monomial_coefficients(deg)?;
        // c is lower triangular as a (poly n, power j) table; invert row by row.
        let mut e = vec![vec![0.0; deg + 1]; deg + 1];
        for j in 0..=deg {
            // x^j = (phi_j - sum_{i<j} c[j][i] x^i) / c[j][j]
            let mut row = vec![0.0; deg + 1];
            row[j] = 1.0 / c[j][j];
            for i in 0..j {
                let f = c[j][i] / c[j][j];
                for n in 0..=i {
                    row[n] -= f * e[i][n];
                }
            }
            e[j] = row;
        }
        Ok(e)
    }
}

/// Exponent of the multi-index norm; `Inf` selects the max-norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PNorm {
    Finite(f64),
    Inf,
}

impl PNorm {
    pub fn value(&self) -> f64 {
        match self {
            PNorm::Finite(p) => *p,
            PNorm::Inf => f64::INFINITY,
        }
    }
}

impl From<f64> for PNorm {
    fn from(p: f64) -> Self {
        if p.is_infinite() {
            PNorm::Inf
        } else {
            PNorm::Finite(p)
        }
    }
}

impl Serialize for PNorm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PNorm::Finite(p) => s.serialize_f64(*p),
            PNorm::Inf => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for PNorm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => Ok(PNorm::Finite(p)),
            Raw::Str(s) if s.eq_ignore_ascii_case("inf") => Ok(PNorm::Inf),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

/// Downward-closed-in-norm multi-index set `{alpha : ||alpha||_p <= k} \ {0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiIndexSet {
    dim: usize,
    p: PNorm,
    k: f64,
    indices: Vec<Vec<usize>>,
}

const PNORM_SLACK: f64 = 1e-12;

impl MultiIndexSet {
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn p(&self) -> PNorm {
        self.p
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }
    pub fn len(&self) -> usize {
        self.indices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Largest total degree over the set.
    pub fn max_total_degree(&self) -> usize {
        self.indices
            .iter()
            .map(|a| a.iter().sum::<usize>())
            .max()
            .unwrap_or(0)
    }

    /// Position of the multi-index `alpha`, if present.
    pub fn position(&self, alpha: &[usize]) -> Option<usize> {
        self.indices
            .binary_search_by(|probe| graded_order(probe, alpha))
            .ok()
    }
}

/// Graded order: total degree first, then descending lexicographic, so that
/// `(1,0)` precedes `(0,1)`.
fn graded_order(a: &[usize], b: &[usize]) -> std::cmp::Ordering {
    let da: usize = a.iter().sum();
    let db: usize = b.iter().sum();
    da.cmp(&db).then_with(|| b.cmp(a))
}

/// Enumerates `Lambda_{p,k}`.
pub fn build_index_set(dim: usize, p: PNorm, k: f64) -> Result<MultiIndexSet> {
    if dim == 0 {
        return Err(Error::InvalidInput("dimension must be >= 1".into()));
    }
    if !(k >= 1.0) || !k.is_finite() {
        return Err(Error::InvalidInput(format!("k must be finite and >= 1, got {k}")));
    }
    if let PNorm::Finite(pv) = p {
        if !(pv > 0.0) || !pv.is_finite() {
            return Err(Error::InvalidInput(format!("p must lie in (0, inf], got {pv}")));
        }
    }
    let max_deg = k.floor() as usize;
    let budget = match p {
        PNorm::Finite(pv) => k.powf(pv) * (1.0 + PNORM_SLACK) + PNORM_SLACK,
        PNorm::Inf => f64::INFINITY,
    };
    let mut indices = Vec::new();
    let mut current = vec![0usize; dim];
    enumerate(&mut current, 0, 0.0, budget, max_deg, p, &mut indices);
    indices.retain(|a: &Vec<usize>| a.iter().any(|&v| v > 0));
    indices.sort_by(|a, b| graded_order(a, b));
    Ok(MultiIndexSet { dim, p, k, indices })
}

fn enumerate(
    current: &mut Vec<usize>,
    pos: usize,
    used: f64,
    budget: f64,
    max_deg: usize,
    p: PNorm,
    out: &mut Vec<Vec<usize>>,
) {
    if pos == current.len() {
        out.push(current.clone());
        return;
    }
    for a in 0..=max_deg {
        let cost = match p {
            PNorm::Finite(pv) if a > 0 => (a as f64).powf(pv),
            _ => 0.0,
        };
        if used + cost > budget {
            break;
        }
        current[pos] = a;
        enumerate(current, pos + 1, used + cost, budget, max_deg, p, out);
    }
    current[pos] = 0;
}

/// Serializable description of a basis: one family per dimension (a single
/// entry is broadcast to every dimension) plus the index-set parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub families: Vec<Family>,
    pub p: PNorm,
    pub k: f64,
}

/// Tensorized orthonormal feature map `Phi : R^d -> R^K`.
#[derive(Debug, Clone)]
pub struct FeatureBasis {
    index_set: MultiIndexSet,
    families: Vec<Family>,
    max_degree: Vec<usize>,
    // nonzero (dimension, degree) pairs of each multi-index
    support: Vec<Vec<(usize, usize)>>,
}

impl FeatureBasis {
    pub fn new(index_set: MultiIndexSet, families: Vec<Family>) -> Result<Self> {
        let d = index_set.dim();
        let families = match families.len() {
            1 if d > 1 => vec![families[0]; d],
            n if n == d => families,
            n => {
                return Err(Error::InvalidBasis(format!(
                    "{n} families given for dimension {d}"
                )))
            }
        };
        for f in &families {
            f.validate()?;
        }
        let mut max_degree = vec![0; d];
        let support: Vec<Vec<(usize, usize)>> = index_set
            .indices()
            .iter()
            .map(|alpha| {
                alpha
                    .iter()
                    .enumerate()
                    .filter(|(_, &a)| a > 0)
                    .map(|(nu, &a)| {
                        max_degree[nu] = max_degree[nu].max(a);
                        (nu, a)
                    })
                    .collect()
            })
            .collect();
        Ok(FeatureBasis {
            index_set,
            families,
            max_degree,
            support,
        })
    }

    pub fn from_spec(dim: usize, spec: &BasisSpec) -> Result<Self> {
        let set = build_index_set(dim, spec.p, spec.k)?;
        Self::new(set, spec.families.clone())
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec {
            families: self.families.clone(),
            p: self.index_set.p(),
            k: self.index_set.k(),
        }
    }

    pub fn dim(&self) -> usize {
        self.index_set.dim()
    }

    /// Number of features `K`.
    pub fn len(&self) -> usize {
        self.index_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_set.is_empty()
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    pub fn families(&self) -> &[Family] {
        &self.families
    }

    pub fn is_polynomial(&self) -> bool {
        self.families.iter().all(Family::is_polynomial)
    }

    /// Class degree: the largest total degree of the features.
    pub fn total_degree(&self) -> usize {
        self.index_set.max_total_degree()
    }

    /// Positions of the unit multi-indices `e_1..e_d`.
    pub fn unit_positions(&self) -> Result<Vec<usize>> {
        (0..self.dim())
            .map(|nu| {
                let mut e = vec![0; self.dim()];
                e[nu] = 1;
                self.index_set.position(&e).ok_or_else(|| {
                    Error::InvalidBasis(format!("unit multi-index e_{} missing", nu + 1))
                })
            })
            .collect()
    }

    fn tables(&self, x: &[f64]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "point has dimension {} but basis has {}",
                x.len(),
                self.dim()
            )));
        }
        self.families
            .iter()
            .zip(x)
            .zip(&self.max_degree)
            .map(|((f, &xi), &deg)| f.eval_with_derivatives(xi, deg))
            .collect()
    }

    /// `Phi(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        let tables = self.tables(x)?;
        Ok(DVector::from_iterator(
            self.len(),
            self.support.iter().map(|supp| {
                supp.iter()
                    .map(|&(nu, a)| tables[nu].0[a])
                    .product::<f64>()
            }),
        ))
    }

    /// Jacobian `d x K`: column `j` is the gradient of `Phi_j` at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let tables = self.tables(x)?;
        let mut jac = DMatrix::zeros(self.dim(), self.len());
        for (j, supp) in self.support.iter().enumerate() {
            for (i, &(nu, a)) in supp.iter().enumerate() {
                let mut v = tables[nu].1[a];
                for (r, &(rho, b)) in supp.iter().enumerate() {
                    if r != i {
                        v *= tables[rho].0[b];
                    }
                }
                jac[(nu, j)] = v;
            }
        }
        Ok(jac)
    }

    /// Coefficients `c` with `c^T Phi(x) = poly(x) - poly(0-mode)`, i.e. the
    /// polynomial up to an additive constant. Each term is `(coefficient, exponents)`.
    pub fn embed_polynomial(&self, terms: &[(f64, Vec<usize>)]) -> Result<DVector<f64>> {
        let d = self.dim();
        let max_pow = terms
            .iter()
            .flat_map(|(_, e)| e.iter().copied())
            .max()
            .unwrap_or(0);
        let expansions = self
            .families
            .iter()
            .map(|f| f.monomial_expansion(max_pow))
            .collect::<Result<Vec<_>>>()?;
        let mut coeffs = DVector::zeros(self.len());
        for (c, exps) in terms {
            if exps.len() != d {
                return Err(Error::Shape(format!(
                    "monomial has {} exponents for dimension {d}",
                    exps.len()
                )));
            }
            // product over dimensions of sum_n e[j_nu][n] phi_n(x_nu)
            let mut partial: Vec<(Vec<usize>, f64)> = vec![(vec![], *c)];
            for (nu, &j) in exps.iter().enumerate() {
                let mut next = Vec::new();
                for (alpha, w) in &partial {
                    for n in 0..=j {
                        let e = expansions[nu][j][n];
                        if e != 0.0 {
                            let mut a = alpha.clone();
                            a.push(n);
                            next.push((a, w * e));
                        }
                    }
                }
                partial = next;
            }
            for (alpha, w) in partial {
                if alpha.iter().all(|&a| a == 0) {
                    continue;
                }
                match self.index_set.position(&alpha) {
                    Some(pos) => coeffs[pos] += w,
                    None if w.abs() <= 1e-13 * c.abs().max(1.0) => {}
                    None => {
                        return Err(Error::InvalidBasis(format!(
                            "multi-index {alpha:?} needed by the polynomial is not in the basis"
                        )))
                    }
                }
            }
        }
        Ok(coeffs)
    }
}

/// Which second-moment matrix a Gram matrix holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramKind {
    /// `E[grad Phi^T grad Phi]`.
    GradGram,
    /// `E[Phi Phi^T]`.
    ValueGram,
}

/// Symmetric positive definite metric on coefficient space, with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    matrix: DMatrix<f64>,
    kind: GramKind,
    ridge_added: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl GramMatrix {
    /// Factorizes `matrix`; when the plain factorization fails a ridge
    /// `1e-12 * trace / K` is added once and recorded.
    pub fn new(matrix: DMatrix<f64>, kind: GramKind) -> Result<Self> {
        let k = matrix.nrows();
        if k == 0 || matrix.ncols() != k {
            return Err(Error::Shape(format!(
                "Gram matrix must be square and nonempty, got {}x{}",
                k,
                matrix.ncols()
            )));
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        if let Some(chol) = matrix.clone().cholesky() {
            return Ok(GramMatrix {
                matrix,
                kind,
                ridge_added: 0.0,
                chol,
            });
        }
        let ridge = 1e-12 * matrix.trace() / k as f64;
        let ridged = &matrix + DMatrix::identity(k, k) * ridge;
        match ridged.clone().cholesky() {
            Some(chol) if ridge > 0.0 => Ok(GramMatrix {
                matrix: ridged,
                kind,
                ridge_added: ridge,
                chol,
            }),
            _ => Err(Error::SingularMetric(
                "Gram matrix is not positive definite even after ridge".into(),
            )),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
    pub fn kind(&self) -> GramKind {
        self.kind
    }
    pub fn ridge_added(&self) -> f64 {
        self.ridge_added
    }
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    /// Lower Cholesky factor `L` with `R = L L^T`.
    pub fn cholesky(&self) -> &nalgebra::Cholesky<f64, nalgebra::Dyn> {
        &self.chol
    }
    /// `R^{-1} B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }
}

/// Monte-Carlo estimate of `E[grad Phi^T grad Phi]` from per-sample Jacobians.
pub fn assemble_gram(jacobians: &[DMatrix<f64>]) -> Result<GramMatrix> {
    let first = jacobians
        .first()
        .ok_or_else(|| Error::InvalidInput("no samples to assemble Gram matrix".into()))?;
    let k = first.ncols();
    let sum = crate::sum::fixed_tree_sum(
        jacobians.len(),
        || DMatrix::zeros(k, k),
        |acc: &mut DMatrix<f64>, i| acc.gemm_tr(1.0, &jacobians[i], &jacobians[i], 1.0),
    );
    GramMatrix::new(sum / jacobians.len() as f64, GramKind::GradGram)
}

/// Monte-Carlo estimate of `E[Phi Phi^T]`.
pub fn assemble_value_gram(values: &[DVector<f64>]) -> Result<GramMatrix> {
    let first = values
        .first()
        .ok_or_else(|| Error::InvalidInput("no samples to assemble Gram matrix".into()))?;
    let k = first.len();
    let sum = crate::sum::fixed_tree_sum(
        values.len(),
        || DMatrix::zeros(k, k),
        |acc: &mut DMatrix<f64>, i| acc.ger(1.0, &values[i], &values[i], 1.0),
    );
    GramMatrix::new(sum / values.len() as f64, GramKind::ValueGram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn index_set_examples() {
        let s = build_index_set(2, PNorm::Finite(1.0), 2.0).unwrap();
        assert_eq!(
            s.indices(),
            &[vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        let s = build_index_set(2, PNorm::Finite(0.8), 2.0).unwrap();
        assert_eq!(s.indices(), &[vec![1, 0], vec![0, 1], vec![2, 0], vec![0, 2]]);
        let s = build_index_set(1, PNorm::Inf, 3.0).unwrap();
        assert_eq!(s.indices(), &[vec![1], vec![2], vec![3]]);
        assert!(build_index_set(2, PNorm::Finite(1.0), 0.5).is_err());
    }

    #[test]
    fn index_set_sizes_for_eight_dimensions() {
        // total degree <= 3 in 8 variables: C(11,3) - 1
        let s = build_index_set(8, PNorm::Finite(1.0), 3.0).unwrap();
        assert_eq!(s.len(), 164);
        let s = build_index_set(8, PNorm::Finite(1.0), 2.0).unwrap();
        assert_eq!(s.len(), 44);
    }

    #[test]
    fn legendre_degree_one() {
        let f = Family::Legendre {
            a: -PI / 2.0,
            b: PI / 2.0,
        };
        let (v, d) = f.eval_with_derivatives(PI / 2.0, 1).unwrap();
        assert!((v[1] - 3f64.sqrt()).abs() < 1e-14);
        assert!((d[1] - 2.0 * 3f64.sqrt() / PI).abs() < 1e-14);

        let f = Family::Legendre { a: 0.0, b: 1.0 };
        for x in [0.1, 0.5, 0.93] {
            let (v, d) = f.eval_with_derivatives(x, 1).unwrap();
            assert!((v[1] - 3f64.sqrt() * (2.0 * x - 1.0)).abs() < 1e-14);
            assert!((d[1] - 2.0 * 3f64.sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn hermite_degree_two_at_zero() {
        let f = Family::Hermite { mu: 0.0, sigma: 1.0 };
        let (v, _) = f.eval_with_derivatives(0.0, 2).unwrap();
        assert!((v[2] + 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn odd_families_vanish_at_center() {
        let fams = [
            Family::Legendre { a: -2.0, b: 4.0 },
            Family::Hermite { mu: 1.5, sigma: 0.3 },
        ];
        for (f, c) in fams.iter().zip([1.0, 1.5]) {
            let (v, _) = f.eval_with_derivatives(c, 5).unwrap();
            assert!(v[1].abs() < 1e-15 && v[3].abs() < 1e-14 && v[5].abs() < 1e-14);
        }
        let f = Family::LogHermite { mu: 0.7, sigma: 2.0 };
        let (v, _) = f.eval_with_derivatives(0.7f64.exp(), 3).unwrap();
        assert!(v[1].abs() < 1e-15);
    }

    #[test]
    fn log_hermite_domain() {
        let f = Family::LogHermite { mu: 0.0, sigma: 1.0 };
        assert!(matches!(f.eval_with_derivatives(0.0, 2), Err(Error::Domain(_))));
        assert!(matches!(f.eval_with_derivatives(-1.0, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn monomial_coefficients_match_evaluation() {
        let fams = [
            Family::Legendre { a: -1.0, b: 3.0 },
            Family::Hermite { mu: 0.5, sigma: 2.0 },
        ];
        for f in fams {
            let c = f.monomial_coefficients(6).unwrap();
            for x in [-0.7, 0.2, 1.9] {
                let (v, _) = f.eval_with_derivatives(x, 6).unwrap();
                for n in 0..=6 {
                    let poly: f64 = c[n].iter().enumerate().map(|(j, a)| a * x.powi(j as i32)).sum();
                    assert!((poly - v[n]).abs() < 1e-10 * (1.0 + v[n].abs()), "{f:?} n={n}");
                }
            }
        }
    }

    #[test]
    fn jacobian_is_all_nonzero_columns() {
        let set = build_index_set(3, PNorm::Finite(1.0), 2.0).unwrap();
        let b = FeatureBasis::new(set, vec![Family::Legendre { a: 0.0, b: 1.0 }]).unwrap();
        let jac = b.jacobian(&[0.3, 0.7, 0.9]).unwrap();
        for j in 0..b.len() {
            assert!(jac.column(j).norm() > 0.0);
        }
    }

    #[test]
    fn embed_quadratic_reproduces_values() {
        let set = build_index_set(3, PNorm::Finite(1.0), 2.0).unwrap();
        let b = FeatureBasis::new(
            set,
            vec![
                Family::Legendre { a: -1.0, b: 2.0 },
                Family::Hermite { mu: 0.3, sigma: 1.4 },
                Family::Legendre { a: 0.0, b: 1.0 },
            ],
        )
        .unwrap();
        let terms = vec![
            (1.5, vec![2, 0, 0]),
            (-0.5, vec![1, 1, 0]),
            (2.0, vec![0, 0, 1]),
            (0.25, vec![0, 1, 1]),
        ];
        let c = b.embed_polynomial(&terms).unwrap();
        let poly = |x: &[f64]| -> f64 {
            terms
                .iter()
                .map(|(w, e)| w * x.iter().zip(e).map(|(xi, &p)| xi.powi(p as i32)).product::<f64>())
                .sum()
        };
        let x0 = [0.1, -0.4, 0.6];
        let x1 = [1.3, 0.9, 0.2];
        let lhs = c.dot(&b.eval(&x1).unwrap()) - c.dot(&b.eval(&x0).unwrap());
        assert!((lhs - (poly(&x1) - poly(&x0))).abs() < 1e-12);
        assert!(b.embed_polynomial(&[(1.0, vec![3, 0, 0])]).is_err());
    }

    #[test]
    fn gram_ridge_is_recorded() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let g = GramMatrix::new(m, GramKind::GradGram).unwrap();
        assert!(g.ridge_added() > 0.0);
        assert!(assemble_gram(&[]).is_err());
    }

    #[test]
    fn spec_roundtrip_with_infinite_p() {
        let spec = BasisSpec {
            families: vec![Family::Hermite { mu: 0.0, sigma: 1.0 }],
            p: PNorm::Inf,
            k: 3.0,
        };
        let s = serde_json::to_string(&spec).unwrap();
        assert!(s.contains("\"inf\""));
        let back: BasisSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
    }
}
