//! Dense Hessian spectra and finite-difference oracles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::{self, FactorPoint};
use crate::risk::{Geometry, RiskModel};

/// Smallest eigenvalue (algebraic, not in magnitude) of a Hessian.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumResult {
    pub lambda_min: f64,
    /// Unit eigenvector as an `N×k` matrix (horizontal for quotient spectra).
    #[serde(skip)]
    pub eigvec: DMatrix<f64>,
    /// `‖Hv − λv‖` measured with the model operator.
    pub residual: f64,
    /// All eigenvalues, ascending.
    pub spectrum: Vec<f64>,
}

impl SpectrumResult {
    /// Number of eigenvalues with `|λ| < tol`.
    pub fn near_zero_count(&self, tol: f64) -> usize {
        self.spectrum.iter().filter(|l| l.abs() < tol).count()
    }
}

/// Eigenpairs of a symmetric matrix, ascending, with each eigenvector's
/// largest-magnitude entry made positive.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteEntry("Hessian".into()));
    }
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        vecs.set_column(c, &v);
    }
    Ok((values, vecs))
}

/// Dense ambient Hessian in the canonical basis of `R^{N×k}`
/// (column-major ordering of the entries).
pub fn euclidean_hessian(model: &dyn RiskModel, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.check_point(p)?;
    let (n, k) = p.shape();
    let dim = n * k;
    let mut h = DMatrix::zeros(dim, dim);
    let mut e = DMatrix::zeros(n, k);
    for idx in 0..dim {
        e.as_mut_slice()[idx] = 1.0;
        let col = model.hess_vec(p, &e)?;
        h.set_column(idx, &DVector::from_column_slice(col.as_slice()));
        e.as_mut_slice()[idx] = 0.0;
    }
    Ok(h)
}

pub fn min_eig_euclidean(model: &dyn RiskModel, p: &DMatrix<f64>) -> Result<SpectrumResult> {
    let h = euclidean_hessian(model, p)?;
    let (values, vecs) = sorted_eigen(h)?;
    let (n, k) = p.shape();
    let eigvec = DMatrix::from_column_slice(n, k, vecs.column(0).as_slice());
    let lambda_min = values[0];
    let residual = (model.hess_vec(p, &eigvec)? - &eigvec * lambda_min).norm();
    Ok(SpectrumResult {
        lambda_min,
        eigvec,
        residual,
        spectrum: values,
    })
}

/// Hessian restricted to the horizontal space: `B_ij = ⟨hess_vec(U, E_i), E_j⟩`
/// over an orthonormal horizontal basis `{E_i}`.
pub fn horizontal_hessian(
    model: &dyn RiskModel,
    u: &FactorPoint,
) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>)> {
    model.check_point(u.matrix())?;
    let basis: Vec<DMatrix<f64>> = manifold::horizontal_basis(u)?
        .into_iter()
        .map(|t| t.into_matrix())
        .collect();
    let images = basis
        .iter()
        .map(|e| model.hess_vec(u.matrix(), e))
        .collect::<Result<Vec<_>>>()?;
    let dim = basis.len();
    let b = DMatrix::from_fn(dim, dim, |i, j| images[i].dot(&basis[j]));
    Ok((basis, b))
}

pub fn min_eig_horizontal(model: &dyn RiskModel, u: &FactorPoint) -> Result<SpectrumResult> {
    let (basis, b) = horizontal_hessian(model, u)?;
    let (values, vecs) = sorted_eigen(b)?;
    let mut eigvec = DMatrix::zeros(u.n_rows(), u.n_cols());
    for (e, c) in basis.iter().zip(vecs.column(0).iter()) {
        eigvec += e * *c;
    }
    let lambda_min = values[0];
    let image = manifold::project_matrix(u, &model.hess_vec(u.matrix(), &eigvec)?)?;
    let residual = (image - &eigvec * lambda_min).norm();
    Ok(SpectrumResult {
        lambda_min,
        eigvec,
        residual,
        spectrum: values,
    })
}

/// Spectrum in the model's own geometry.
pub fn min_eig(model: &dyn RiskModel, p: &DMatrix<f64>) -> Result<SpectrumResult> {
    match model.geometry() {
        Geometry::Euclidean => min_eig_euclidean(model, p),
        Geometry::Quotient => min_eig_horizontal(model, &FactorPoint::new(p.clone())?),
    }
}

/// Dense Hessian in the model's geometry (canonical or horizontal basis).
pub fn model_hessian(model: &dyn RiskModel, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match model.geometry() {
        Geometry::Euclidean => euclidean_hessian(model, p),
        Geometry::Quotient => Ok(horizontal_hessian(model, &FactorPoint::new(p.clone())?)?.1),
    }
}

// ---------------------------------------------------------------------------
// Finite-difference oracles
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl FdReport {
    fn new(max_rel_error: f64, tol: f64) -> Self {
        Self {
            max_rel_error,
            tol,
            passed: max_rel_error <= tol,
        }
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, falling back to the absolute error when both
/// are below 1e-12.
fn rel_error(a: f64, b: f64, diff: f64) -> f64 {
    let scale = a.max(b);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn grad_step(p: &DMatrix<f64>) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + p.norm())
}

fn hess_step(p: &DMatrix<f64>) -> f64 {
    f64::EPSILON.powf(0.25) * (1.0 + p.norm())
}

/// Compares the analytic gradient with central differences of the value
/// along every canonical coordinate.
pub fn fd_grad_check(model: &dyn RiskModel, p: &DMatrix<f64>, tol: f64) -> Result<FdReport> {
    let analytic = model.euclidean_grad(p)?;
    let h = grad_step(p);
    let mut fd = DMatrix::zeros(p.nrows(), p.ncols());
    for idx in 0..p.len() {
        let mut plus = p.clone();
        let mut minus = p.clone();
        plus.as_mut_slice()[idx] += h;
        minus.as_mut_slice()[idx] -= h;
        fd.as_mut_slice()[idx] = (model.value(&plus)? - model.value(&minus)?) / (2.0 * h);
    }
    let err = rel_error(analytic.norm(), fd.norm(), (&analytic - &fd).norm());
    Ok(FdReport::new(err, tol))
}

/// Compares `hess_vec(p, d)` with central differences of the gradient along `d`.
pub fn fd_hess_check(
    model: &dyn RiskModel,
    p: &DMatrix<f64>,
    direction: &DMatrix<f64>,
    tol: f64,
) -> Result<FdReport> {
    model.check_point(direction)?;
    let dn = direction.norm();
    if dn == 0.0 {
        return Ok(FdReport::new(0.0, tol));
    }
    let unit = direction / dn;
    let h = hess_step(p);
    let analytic = model.hess_vec(p, &unit)?;
    let fd = (model.euclidean_grad(&(p + &unit * h))? - model.euclidean_grad(&(p - &unit * h))?)
        / (2.0 * h);
    let err = rel_error(analytic.norm(), fd.norm(), (&analytic - &fd).norm());
    Ok(FdReport::new(err, tol))
}

/// Compares `hess_quadratic(p, d)` with the second difference of the value
/// along `d`.
pub fn fd_hess_quadratic_check(
    model: &dyn RiskModel,
    p: &DMatrix<f64>,
    direction: &DMatrix<f64>,
    tol: f64,
) -> Result<FdReport> {
    model.check_point(direction)?;
    let dn = direction.norm();
    if dn == 0.0 {
        return Ok(FdReport::new(0.0, tol));
    }
    let unit = direction / dn;
    let h = hess_step(p);
    let analytic = model.hess_quadratic(p, &unit)?;
    let f0 = model.value(p)?;
    let fd = (model.value(&(p + &unit * h))? - 2.0 * f0 + model.value(&(p - &unit * h))?) / (h * h);
    let err = rel_error(analytic.abs(), fd.abs(), (analytic - fd).abs());
    Ok(FdReport::new(err, tol))
}
