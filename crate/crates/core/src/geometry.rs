//! Orthogonal projectors onto column spans and the coordinate splitting used by
//! the multi-feature estimators.
//!
//! Spans are revealed with a column-pivoted QR factorization; columns whose
//! pivot magnitude falls below `tol * (largest pivot)` are treated as linearly
//! dependent. A zero matrix spans the zero subspace.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default relative tolerance for rank determination.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Projectors of dimension at most this are materialized as dense `d x d` matrices.
pub const DENSE_PROJECTOR_MAX_DIM: usize = 64;

/// Orthogonal projector onto a subspace of `R^d`.
///
/// Stored as an orthonormal basis of the subspace; the dense matrix is kept
/// alongside when `d <= DENSE_PROJECTOR_MAX_DIM`.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: DMatrix<f64>,
    dense: Option<DMatrix<f64>>,
}

impl Projector {
    fn from_basis(basis: DMatrix<f64>) -> Self {
        let d = basis.nrows();
        let dense = (d <= DENSE_PROJECTOR_MAX_DIM).then(|| &basis * basis.transpose());
        Projector { basis, dense }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Orthonormal basis of the range, `d x rank`.
    pub fn range_basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Dense matrix, built on demand when it was not materialized.
    pub fn matrix(&self) -> DMatrix<f64> {
        match &self.dense {
            Some(m) => m.clone(),
            None => &self.basis * self.basis.transpose(),
        }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.rank() == 0 {
            return DVector::zeros(x.len());
        }
        &self.basis * (self.basis.transpose() * x)
    }

    /// `(I - P) x`.
    pub fn apply_complement(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.rank() == 0 {
            return x.clone();
        }
        x - &self.basis * (self.basis.transpose() * x)
    }

    /// `(I - P) M`, column by column.
    pub fn apply_complement_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank() == 0 {
            return m.clone();
        }
        m - &self.basis * (self.basis.transpose() * m)
    }

    /// Dense complement `I - P`.
    pub fn complement_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - self.matrix()
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

/// Orthonormal basis (`d x r`) of the column span of `m`, with the rank revealed
/// by column-pivoted QR at relative tolerance `tol`.
pub fn span_basis(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    check_finite(m)?;
    let (d, k) = m.shape();
    if d == 0 {
        return Err(Error::Shape("matrix has zero rows".into()));
    }
    if k == 0 {
        return Ok(DMatrix::zeros(d, 0));
    }
    if k == 1 {
        let norm = m.column(0).norm();
        if norm == 0.0 {
            return Ok(DMatrix::zeros(d, 0));
        }
        return Ok(m / norm);
    }
    let qr = m.clone().col_piv_qr();
    let r = qr.r();
    let diag_len = d.min(k);
    let largest = r[(0, 0)].abs();
    if largest == 0.0 {
        return Ok(DMatrix::zeros(d, 0));
    }
    let rank = (0..diag_len)
        .take_while(|&i| r[(i, i)].abs() > tol * largest)
        .count();
    let q = qr.q();
    Ok(q.columns(0, rank).into_owned())
}

/// Orthogonal projector onto the column span of `m`.
pub fn orthogonal_projector(m: &DMatrix<f64>, tol: f64) -> Result<Projector> {
    Ok(Projector::from_basis(span_basis(m, tol)?))
}

/// `(I - P_M) x`, orthogonal to every column of `m`.
pub fn project_complement(m: &DMatrix<f64>, x: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    if m.nrows() != x.len() {
        return Err(Error::Shape(format!(
            "matrix has {} rows but vector has length {}",
            m.nrows(),
            x.len()
        )));
    }
    Ok(orthogonal_projector(m, tol)?.apply_complement(x))
}

/// `m` with column `j` removed.
pub fn remove_column(m: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    m.clone().remove_column(j)
}

/// Splits the feature Jacobian around column `j` (zero-based):
/// `w = (I - P_{J_{-j}}) J_j` and `v = (I - P_{J_{-j}}) grad_u`.
pub fn split_w_v(
    jac_g: &DMatrix<f64>,
    grad_u: &DVector<f64>,
    j: usize,
    tol: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = jac_g.ncols();
    if j >= m {
        return Err(Error::IndexOutOfRange { index: j, len: m });
    }
    if jac_g.nrows() != grad_u.len() {
        return Err(Error::Shape(format!(
            "jacobian has {} rows but gradient has length {}",
            jac_g.nrows(),
            grad_u.len()
        )));
    }
    let rest = remove_column(jac_g, j);
    let proj = orthogonal_projector(&rest, tol)?;
    let w = proj.apply_complement(&jac_g.column(j).into_owned());
    let v = proj.apply_complement(grad_u);
    Ok((w, v))
}

/// Smallest of the `m` singular values of a `d x m` matrix with `d >= m`.
pub fn smallest_singular_value(m: &DMatrix<f64>) -> Result<f64> {
    let (d, k) = m.shape();
    if d < k {
        return Err(Error::Shape(format!("expected rows >= cols, got {d}x{k}")));
    }
    check_finite(m)?;
    if k == 0 {
        return Ok(0.0);
    }
    let sv = m.clone().svd(false, false).singular_values;
    Ok(sv.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0))
}
