//! Geometry of the quotient `R*^{N×k} / O(k)`.
//!
//! A point is a full-column-rank factor `U`; two factors are equivalent when
//! `V = UQ` for an orthogonal `Q`. The vertical space at `U` is `{UΩ : Ω skew}`
//! and the horizontal space is its Frobenius-orthogonal complement,
//! `{D : DᵀU = UᵀD}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_shape, Error, Result};

/// Relative tolerance used for the `DᵀU = UᵀD` invariant.
pub const HORIZONTAL_TOL: f64 = 1e-10;
/// Projected canonical directions shorter than this are dropped from a basis.
const BASIS_DROP_TOL: f64 = 1e-8;
const RANK_TOL: f64 = 1e-12;

/// Full-column-rank `N×k` factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPoint {
    entries: DMatrix<f64>,
}

impl FactorPoint {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (n, k) = entries.shape();
        if k == 0 || k > n {
            return Err(Error::DimensionMismatch {
                expected: "N×k factor with 1 ≤ k ≤ N".into(),
                found: format!("{n}x{k}"),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry("factor".into()));
        }
        let sv = singular_values(&entries);
        let smax = sv.max();
        let smin = sv.min();
        if smax == 0.0 || smin <= RANK_TOL * smax {
            return Err(Error::RankDeficient { sigma_min: smin });
        }
        Ok(Self { entries })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn n_rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.entries.ncols()
    }

    /// `σ_k(U)`, the smallest singular value.
    pub fn sigma_min(&self) -> f64 {
        singular_values(&self.entries).min()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.entries.transpose() * &self.entries
    }
}

/// Tangent matrix at `base` satisfying `DᵀU = UᵀD`.
#[derive(Debug, Clone)]
pub struct HorizontalTangent<'a> {
    base: &'a FactorPoint,
    entries: DMatrix<f64>,
}

impl<'a> HorizontalTangent<'a> {
    /// Wraps `entries`, checking the horizontality invariant.
    pub fn new(base: &'a FactorPoint, entries: DMatrix<f64>) -> Result<Self> {
        check_shape("tangent", &entries, base.n_rows(), base.n_cols())?;
        let residual = horizontal_residual(base.matrix(), &entries);
        let scale = entries.norm() * base.matrix().norm();
        if residual > HORIZONTAL_TOL * scale.max(f64::MIN_POSITIVE) && residual > 0.0 {
            return Err(Error::NotSkew {
                asymmetry: residual / scale.max(f64::MIN_POSITIVE),
            });
        }
        Ok(Self { base, entries })
    }

    pub fn base(&self) -> &'a FactorPoint {
        self.base
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }
}

/// `‖DᵀU − UᵀD‖_F`.
pub fn horizontal_residual(u: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let dtu = d.transpose() * u;
    (&dtu - dtu.transpose()).norm()
}

/// Skew-symmetric `k×k` matrix; only the strict lower triangle is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewFactor {
    k: usize,
    lower: Vec<f64>,
}

impl SkewFactor {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            lower: vec![0.0; k * k.saturating_sub(1) / 2],
        }
    }

    /// Keeps the skew part `(M − Mᵀ)/2` of a square matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let k = m.nrows();
        let mut lower = Vec::with_capacity(k * k.saturating_sub(1) / 2);
        for i in 1..k {
            for j in 0..i {
                lower.push(0.5 * (m[(i, j)] - m[(j, i)]));
            }
        }
        Self { k, lower }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.k, self.k);
        let mut idx = 0;
        for i in 1..self.k {
            for j in 0..i {
                m[(i, j)] = self.lower[idx];
                m[(j, i)] = -self.lower[idx];
                idx += 1;
            }
        }
        m
    }
}

/// Solves `ΩG + GΩ = S` for skew `Ω`, given SPD `G` and skew `S`.
///
/// With `G = VΓVᵀ` the equation decouples in the eigenbasis:
/// `(VᵀΩV)_ij = (VᵀSV)_ij / (γ_i + γ_j)`.
pub fn solve_skew_sylvester(gram: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<SkewFactor> {
    let k = gram.nrows();
    check_shape("Gram matrix", gram, k, k)?;
    check_shape("Sylvester right-hand side", rhs, k, k)?;

    let s_norm = rhs.norm();
    let asym = (rhs + rhs.transpose()).norm();
    if asym > 1e-10 * s_norm {
        return Err(Error::NotSkew {
            asymmetry: asym / s_norm,
        });
    }

    let eig = SymmetricEigen::new(gram.clone());
    let gmax = eig.eigenvalues.max();
    let gmin = eig.eigenvalues.min();
    if !(gmax > 0.0) || gmin <= 1e-12 * gmax {
        return Err(Error::GramNotSpd {
            min_eig: gmin,
            max_eig: gmax,
        });
    }
    let v = &eig.eigenvectors;
    let mut rotated = v.transpose() * rhs * v;
    for i in 0..k {
        for j in 0..k {
            rotated[(i, j)] /= eig.eigenvalues[i] + eig.eigenvalues[j];
        }
    }
    Ok(SkewFactor::from_matrix(&(v * rotated * v.transpose())))
}

/// `P_U(Z) = Z − UΩ`, where `ΩUᵀU + UᵀUΩ = UᵀZ − ZᵀU`.
pub fn horizontal_project<'a>(
    base: &'a FactorPoint,
    ambient: &DMatrix<f64>,
) -> Result<HorizontalTangent<'a>> {
    let entries = project_matrix(base, ambient)?;
    Ok(HorizontalTangent { base, entries })
}

pub(crate) fn project_matrix(base: &FactorPoint, ambient: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let u = base.matrix();
    check_shape("ambient matrix", ambient, u.nrows(), u.ncols())?;
    if u.ncols() == 1 {
        return Ok(ambient.clone());
    }
    let utz = u.transpose() * ambient;
    let rhs = &utz - utz.transpose();
    if rhs.norm() == 0.0 {
        return Ok(ambient.clone());
    }
    let omega = solve_skew_sylvester(&base.gram(), &rhs)?;
    Ok(ambient - u * omega.to_matrix())
}

/// Orthogonal Procrustes distance `min_{P ∈ O(k)} ‖U − VP‖_F`.
///
/// Reflections are allowed. The optimal `P = A Bᵀ` comes from the SVD
/// `VᵀU = AΣBᵀ`; the distance is evaluated directly at that `P`.
pub fn procrustes_distance(u: &FactorPoint, v: &FactorPoint) -> Result<f64> {
    procrustes_distance_raw(u.matrix(), v.matrix())
}

/// Same as [`procrustes_distance`] without the full-rank requirement.
pub fn procrustes_distance_raw(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    check_shape("second factor", v, u.nrows(), u.ncols())?;
    let p = procrustes_rotation(u, v);
    Ok((u - v * p).norm())
}

/// Orthogonal `P` minimizing `‖U − VP‖_F`.
pub fn procrustes_rotation(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    polar_factor(&(v.transpose() * u))
}

/// Thin SVD `M = A diag(σ) Bᵀ` of a matrix with at least as many rows as
/// columns, by one-sided Jacobi rotations. Columns of `A` belonging to zero
/// singular values are completed to an orthonormal set.
pub struct ThinSvd {
    pub a: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub b: DMatrix<f64>,
}

pub fn thin_svd(m: &DMatrix<f64>) -> ThinSvd {
    let (rows, cols) = m.shape();
    assert!(rows >= cols, "thin_svd needs rows >= cols");
    let mut w = m.clone();
    let mut b = DMatrix::identity(cols, cols);
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut b] {
                    let cp = mat.column(p).clone_owned();
                    let cq = mat.column(q).clone_owned();
                    mat.set_column(p, &(&cp * c - &cq * s));
                    mat.set_column(q, &(&cp * s + &cq * c));
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma = DVector::from_iterator(cols, w.column_iter().map(|c| c.norm()));
    let cutoff = rows as f64 * f64::EPSILON * sigma.max();
    let mut a = DMatrix::zeros(rows, cols);
    let mut filled = Vec::new();
    for j in 0..cols {
        if sigma[j] > cutoff {
            a.set_column(j, &(w.column(j) / sigma[j]));
            filled.push(j);
        }
    }
    let mut candidate = 0;
    for j in 0..cols {
        if filled.contains(&j) {
            continue;
        }
        while candidate < rows {
            let mut e = DVector::zeros(rows);
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let proj = a.column(f).dot(&e);
                    e -= a.column(f) * proj;
                }
            }
            let norm = e.norm();
            if norm > 0.5 {
                a.set_column(j, &(e / norm));
                filled.push(j);
                break;
            }
        }
    }
    ThinSvd { a, sigma, b }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() >= m.ncols() {
        thin_svd(m).sigma
    } else {
        thin_svd(&m.transpose()).sigma
    }
}

/// Nearest matrix with orthonormal columns (or rows) to `m`: `ABᵀ` for
/// `m = AΣBᵀ`.
pub fn polar_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() >= m.ncols() {
        let s = thin_svd(m);
        s.a * s.b.transpose()
    } else {
        polar_factor(&m.transpose()).transpose()
    }
}

/// Frobenius-orthonormal basis of the horizontal space at `base`, of size
/// `Nk − k(k−1)/2`.
///
/// The `Nk` canonical matrices (column-major order) are projected and then
/// orthonormalized by Gram–Schmidt with pivoting on the largest remaining
/// residual; each accepted vector is orthogonalized twice.
pub fn horizontal_basis(base: &FactorPoint) -> Result<Vec<HorizontalTangent<'_>>> {
    let (n, k) = (base.n_rows(), base.n_cols());
    let expected = n * k - k * (k - 1) / 2;

    let mut residuals: Vec<DMatrix<f64>> = Vec::with_capacity(n * k);
    for j in 0..k {
        for i in 0..n {
            let mut e = DMatrix::zeros(n, k);
            e[(i, j)] = 1.0;
            residuals.push(project_matrix(base, &e)?);
        }
    }

    let mut basis: Vec<DMatrix<f64>> = Vec::with_capacity(expected);
    let mut used = vec![false; residuals.len()];
    loop {
        // pivot: first index of the largest residual, for determinism
        let mut best: Option<(usize, f64)> = None;
        for (idx, r) in residuals.iter().enumerate() {
            if used[idx] {
                continue;
            }
            let norm = r.norm();
            if best.is_none_or(|(_, b)| norm > b) {
                best = Some((idx, norm));
            }
        }
        let Some((idx, norm)) = best else { break };
        if norm < BASIS_DROP_TOL {
            break;
        }
        used[idx] = true;
        let mut q = residuals[idx].clone();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&q);
                q -= b * c;
            }
        }
        let qn = q.norm();
        if qn < BASIS_DROP_TOL {
            continue;
        }
        q /= qn;
        for (other, r) in residuals.iter_mut().enumerate() {
            if !used[other] {
                let c = q.dot(r);
                *r -= &q * c;
            }
        }
        basis.push(q);
    }

    if basis.len() != expected {
        return Err(Error::BasisDimension {
            expected,
            found: basis.len(),
        });
    }
    Ok(basis
        .into_iter()
        .map(|entries| HorizontalTangent { base, entries })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::GaussianStream;

    fn random_factor(s: &mut GaussianStream, n: usize, k: usize) -> FactorPoint {
        FactorPoint::new(s.normal_matrix(n, k, 1.0)).unwrap()
    }

    fn random_skew(s: &mut GaussianStream, k: usize) -> DMatrix<f64> {
        let a = s.normal_matrix(k, k, 1.0);
        &a - a.transpose()
    }

    #[test]
    fn rejects_rank_deficient_factor() {
        let u = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(FactorPoint::new(u), Err(Error::RankDeficient { .. })));
        assert!(FactorPoint::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn sylvester_identity_gram() {
        let mut s = GaussianStream::from_seed(1);
        let eye = DMatrix::identity(3, 3);
        let zero = solve_skew_sylvester(&eye, &DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(zero.to_matrix(), DMatrix::zeros(3, 3));
        let skew = random_skew(&mut s, 3);
        let omega = solve_skew_sylvester(&eye, &skew).unwrap().to_matrix();
        assert!((omega - &skew / 2.0).norm() < 1e-14);
    }

    #[test]
    fn sylvester_residual_random_spd() {
        let mut s = GaussianStream::from_seed(2);
        for _ in 0..20 {
            let b = s.normal_matrix(3, 3, 1.0);
            let gram = b.transpose() * &b + DMatrix::identity(3, 3) * 0.1;
            let skew = random_skew(&mut s, 3);
            let omega = solve_skew_sylvester(&gram, &skew).unwrap().to_matrix();
            let res = (&omega * &gram + &gram * &omega - &skew).norm();
            let scale = gram.norm() * omega.norm() + skew.norm();
            assert!(res <= 1e-10 * scale, "residual {res}");
            assert!((&omega + omega.transpose()).norm() == 0.0);
        }
    }

    #[test]
    fn sylvester_errors() {
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let skew = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(
            solve_skew_sylvester(&singular, &skew),
            Err(Error::GramNotSpd { .. })
        ));
        let sym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            solve_skew_sylvester(&DMatrix::identity(2, 2), &sym),
            Err(Error::NotSkew { .. })
        ));
    }

    #[test]
    fn projection_k1_is_identity() {
        let mut s = GaussianStream::from_seed(3);
        let u = random_factor(&mut s, 4, 1);
        let z = s.normal_matrix(4, 1, 1.0);
        assert_eq!(horizontal_project(&u, &z).unwrap().matrix(), &z);
    }

    #[test]
    fn projection_kills_vertical_input() {
        let mut s = GaussianStream::from_seed(4);
        let u = random_factor(&mut s, 5, 3);
        let z = u.matrix() * random_skew(&mut s, 3);
        let d = horizontal_project(&u, &z).unwrap();
        assert!(d.matrix().norm() <= 1e-10 * z.norm());
    }

    #[test]
    fn projection_is_horizontal_and_idempotent() {
        let mut s = GaussianStream::from_seed(5);
        let u = random_factor(&mut s, 5, 3);
        let z = s.normal_matrix(5, 3, 1.0);
        let d = horizontal_project(&u, &z).unwrap();
        assert!(horizontal_residual(u.matrix(), d.matrix()) <= 1e-10);
        let dd = horizontal_project(&u, d.matrix()).unwrap();
        assert!((dd.matrix() - d.matrix()).norm() <= 1e-12 * d.matrix().norm());
        // vertical part orthogonal to horizontal part
        let vert = &z - d.matrix();
        assert!(vert.dot(d.matrix()).abs() <= 1e-10 * z.norm_squared());
    }

    #[test]
    fn procrustes_basic_cases() {
        let mut s = GaussianStream::from_seed(6);
        let u = random_factor(&mut s, 5, 3);
        assert!(procrustes_distance(&u, &u).unwrap() < 1e-12);
        let q = s.orthogonal(3);
        let uq = FactorPoint::new(u.matrix() * q).unwrap();
        assert!(procrustes_distance(&u, &uq).unwrap() < 1e-10);

        let a = random_factor(&mut s, 4, 1);
        let b = random_factor(&mut s, 4, 1);
        let expected = (a.matrix() - b.matrix())
            .norm()
            .min((a.matrix() + b.matrix()).norm());
        assert!((procrustes_distance(&a, &b).unwrap() - expected).abs() < 1e-12);

        let c = random_factor(&mut s, 4, 2);
        assert!(matches!(
            procrustes_distance(&u, &c),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn basis_dimensions() {
        let mut s = GaussianStream::from_seed(7);
        assert_eq!(horizontal_basis(&random_factor(&mut s, 2, 1)).unwrap().len(), 2);
        assert_eq!(horizontal_basis(&random_factor(&mut s, 3, 2)).unwrap().len(), 5);
        let u = random_factor(&mut s, 5, 3);
        let basis = horizontal_basis(&u).unwrap();
        assert_eq!(basis.len(), 12);
        for (i, a) in basis.iter().enumerate() {
            assert!(horizontal_residual(u.matrix(), a.matrix()) <= 1e-10);
            for (j, b) in basis.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((a.matrix().dot(b.matrix()) - target).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn tangent_constructor_checks_invariant() {
        let mut s = GaussianStream::from_seed(8);
        let u = random_factor(&mut s, 4, 2);
        let vertical = u.matrix() * random_skew(&mut s, 2);
        assert!(HorizontalTangent::new(&u, vertical).is_err());
        let ok = horizontal_project(&u, &s.normal_matrix(4, 2, 1.0)).unwrap();
        assert!(HorizontalTangent::new(&u, ok.into_matrix()).is_ok());
    }
}
