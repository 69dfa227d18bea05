//! Empirical and population risks.
//!
//! Matrix sensing fits a rank-`r` PSD target `X = WΛWᵀ` with a factor
//! `U ∈ R^{N×k}`:
//!
//! ```text
//! f(U) = ¼‖A(UUᵀ − X)‖²        g(U) = E f(U) = ¼‖UUᵀ − X‖_F²
//! ```
//!
//! where `A(Z)_m = ⟨A_m, Z⟩`, `A_m = (B_m + B_mᵀ)/2` and `B_m` has i.i.d.
//! `N(0, 1/M)` entries. Real phase retrieval fits `x* ∈ R^N` from
//! `y_m = ⟨a_m, x*⟩²` with `a_m ~ N(0, I)`:
//!
//! ```text
//! f(x) = (1/2M) Σ (⟨a_m, x⟩² − y_m)²
//! g(x) = ‖xxᵀ − x*x*ᵀ‖_F² + ½(‖x‖² − ‖x*‖²)²
//! ```
//!
//! Points are `N×k` matrices for every model (`k = 1` for phase retrieval).
//! Hessians are exposed as self-adjoint operators `hess_vec(p, d)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::manifold::{self, FactorPoint, HorizontalTangent};
use crate::rng::GaussianStream;

/// Domain on which a model's gradient and Hessian are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    /// Plain `R^{N×k}`.
    Euclidean,
    /// The quotient `R*^{N×k}/O(k)`; only used when `k > 1`.
    Quotient,
}

/// Natural magnitudes of a model, used to scale numerical tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelScales {
    /// Gradient magnitude (`λ_k^{3/2}` or `‖x*‖³`).
    pub grad: f64,
    /// Hessian magnitude (`λ_k` or `‖x*‖²`).
    pub hess: f64,
    /// Length scale of the domain (`√λ_k` or `‖x*‖`).
    pub domain: f64,
}

pub trait RiskModel: Send + Sync {
    /// Shape `(N, k)` of a point.
    fn dims(&self) -> (usize, usize);
    fn geometry(&self) -> Geometry;
    fn scales(&self) -> ModelScales;
    fn label(&self) -> String;

    fn value(&self, p: &DMatrix<f64>) -> Result<f64>;
    fn euclidean_grad(&self, p: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    /// Self-adjoint operator realizing `∇²f(p)[D, D]`.
    fn hess_vec(&self, p: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    fn hess_quadratic(&self, p: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<f64> {
        Ok(self.hess_vec(p, d)?.dot(d))
    }

    fn check_point(&self, p: &DMatrix<f64>) -> Result<()> {
        let (n, k) = self.dims();
        check_shape("point", p, n, k)
    }
}

/// Value, gradient and (optionally) the Hessian quadratic form at a point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DMatrix<f64>,
    pub hess_form: Option<f64>,
}

pub fn evaluate(
    model: &dyn RiskModel,
    p: &DMatrix<f64>,
    direction: Option<&DMatrix<f64>>,
) -> Result<Evaluation> {
    let hess_form = match direction {
        Some(d) => {
            model.check_point(d)?;
            Some(model.hess_quadratic(p, d)?)
        }
        None => None,
    };
    Ok(Evaluation {
        value: model.value(p)?,
        gradient: model.euclidean_grad(p)?,
        hess_form,
    })
}

/// `grad f(U) = P_U(∇f(U))`.
pub fn riemannian_grad<'a>(
    model: &dyn RiskModel,
    u: &'a FactorPoint,
) -> Result<HorizontalTangent<'a>> {
    let g = model.euclidean_grad(u.matrix())?;
    manifold::horizontal_project(u, &g)
}

/// Gradient in the model's own geometry: horizontal for quotient models,
/// Euclidean otherwise.
pub fn model_gradient(model: &dyn RiskModel, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match model.geometry() {
        Geometry::Euclidean => model.euclidean_grad(p),
        Geometry::Quotient => {
            let u = FactorPoint::new(p.clone())?;
            Ok(riemannian_grad(model, &u)?.into_matrix())
        }
    }
}

// ---------------------------------------------------------------------------
// Matrix sensing
// ---------------------------------------------------------------------------

/// PSD target `X = WΛWᵀ` of rank `r`, fitted with `k` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingGroundTruth {
    eigvecs: DMatrix<f64>,
    eigvals: Vec<f64>,
    target_rank: usize,
}

impl SensingGroundTruth {
    pub fn new(eigvecs: DMatrix<f64>, eigvals: Vec<f64>, target_rank: usize) -> Result<Self> {
        let (n, r) = eigvecs.shape();
        if r == 0 || r > n {
            return Err(Error::InvalidTruth(format!("rank {r} not in 1..={n}")));
        }
        if eigvals.len() != r {
            return Err(Error::InvalidTruth(format!(
                "{} eigenvalues for {r} eigenvectors",
                eigvals.len()
            )));
        }
        if eigvals.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidTruth("eigenvalues must be positive".into()));
        }
        if eigvals.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidTruth("eigenvalues must be descending".into()));
        }
        let k = target_rank;
        if k == 0 || k > r || 2 * k < r {
            return Err(Error::InvalidTruth(format!(
                "target rank {k} must satisfy ceil(r/2) <= k <= r with r = {r}"
            )));
        }
        let orth = (eigvecs.transpose() * &eigvecs - DMatrix::identity(r, r)).norm();
        if orth > 1e-10 {
            return Err(Error::InvalidTruth(format!(
                "eigenvectors not orthonormal (‖WᵀW − I‖ = {orth:e})"
            )));
        }
        Ok(Self {
            eigvecs,
            eigvals,
            target_rank,
        })
    }

    /// `W` = first `r` columns of the `N×N` identity.
    pub fn with_identity_columns(n: usize, eigvals: Vec<f64>, target_rank: usize) -> Result<Self> {
        let r = eigvals.len();
        if r > n {
            return Err(Error::InvalidTruth(format!("rank {r} exceeds N = {n}")));
        }
        Self::new(DMatrix::identity(n, r), eigvals, target_rank)
    }

    /// Haar-random `W` drawn from `seed`.
    pub fn random(n: usize, eigvals: Vec<f64>, target_rank: usize, seed: u64) -> Result<Self> {
        let r = eigvals.len();
        if r > n || r == 0 {
            return Err(Error::InvalidTruth(format!("rank {r} not in 1..={n}")));
        }
        let w = GaussianStream::new(seed, "sensing-truth", 0).orthonormal_columns(n, r);
        Self::new(w, eigvals, target_rank)
    }

    pub fn dim(&self) -> usize {
        self.eigvecs.nrows()
    }

    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    pub fn target_rank(&self) -> usize {
        self.target_rank
    }

    pub fn eigvals(&self) -> &[f64] {
        &self.eigvals
    }

    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    /// `λ_k`.
    pub fn lambda_k(&self) -> f64 {
        self.eigvals[self.target_rank - 1]
    }

    /// `κ = sqrt(λ_1 / λ_k)`.
    pub fn kappa(&self) -> f64 {
        (self.eigvals[0] / self.lambda_k()).sqrt()
    }

    /// `λ_{k+1} ≤ λ_k / 12`, vacuously true when `r = k`.
    pub fn well_separated(&self) -> bool {
        match self.eigvals.get(self.target_rank) {
            Some(&next) => next <= self.lambda_k() / 12.0,
            None => true,
        }
    }

    /// `λ_{k+1} = λ_k`: the global minimizers form more than one `O(k)` orbit.
    pub fn has_tied_boundary(&self) -> bool {
        match self.eigvals.get(self.target_rank) {
            Some(&next) => next >= self.lambda_k() * (1.0 - 1e-12),
            None => false,
        }
    }

    /// `X = WΛWᵀ`.
    pub fn target(&self) -> DMatrix<f64> {
        let mut scaled = self.eigvecs.clone();
        for (j, &l) in self.eigvals.iter().enumerate() {
            scaled.column_mut(j).scale_mut(l);
        }
        scaled * self.eigvecs.transpose()
    }

    /// `W_u Λ_u^{1/2}` for the eigenvalue indices in `selection`.
    pub fn factor_for(&self, selection: &[usize]) -> DMatrix<f64> {
        let n = self.dim();
        let mut u = DMatrix::zeros(n, selection.len());
        for (c, &i) in selection.iter().enumerate() {
            u.set_column(c, &(self.eigvecs.column(i) * self.eigvals[i].sqrt()));
        }
        u
    }

    /// Canonical global minimizer `U* = W_k Λ_k^{1/2}`.
    pub fn canonical_minimizer(&self) -> FactorPoint {
        let sel: Vec<usize> = (0..self.target_rank).collect();
        FactorPoint::new(self.factor_for(&sel)).expect("positive eigenvalues give full rank")
    }

    /// `‖U*U*ᵀ‖_F = sqrt(Σ_{i≤k} λ_i²)`.
    pub fn minimizer_gram_norm(&self) -> f64 {
        self.eigvals[..self.target_rank]
            .iter()
            .map(|l| l * l)
            .sum::<f64>()
            .sqrt()
    }

    /// `‖X‖_F`.
    pub fn target_norm(&self) -> f64 {
        self.eigvals.iter().map(|l| l * l).sum::<f64>().sqrt()
    }

    pub fn scales(&self) -> ModelScales {
        let lk = self.lambda_k();
        ModelScales {
            grad: lk.powf(1.5),
            hess: lk,
            domain: lk.sqrt(),
        }
    }

    /// Distance from `u` to the set of global minimizers of the population
    /// risk, modulo `O(k)`.
    ///
    /// With `λ_k > λ_{k+1}` this is the Procrustes distance to `U*`. When
    /// `λ_1 = … = λ_k = λ_{k+1}` the minimizers are `√λ_k V` for any `V` with
    /// orthonormal columns in the tied eigenspace `span(W_T)`, and the nearest
    /// one is `√λ_k W_T A Bᵀ` with `W_Tᵀ U = AΣBᵀ`. Ties that start below the
    /// top eigenvalue are rejected.
    pub fn distance_to_global_minima(&self, u: &DMatrix<f64>) -> Result<f64> {
        check_shape("factor", u, self.dim(), self.target_rank)?;
        if !self.has_tied_boundary() {
            return manifold::procrustes_distance_raw(u, self.canonical_minimizer().matrix());
        }
        let lk = self.lambda_k();
        let tied: Vec<usize> = (0..self.rank())
            .filter(|&i| (self.eigvals[i] - lk).abs() <= 1e-12 * lk)
            .collect();
        if tied[0] != 0 {
            return Err(Error::AmbiguousMinimizers(format!(
                "eigenvalue {lk} is tied across the rank-{} boundary but not with λ_1",
                self.target_rank
            )));
        }
        let w_t = self.eigvecs.select_columns(&tied);
        let nearest = &w_t * manifold::polar_factor(&(w_t.transpose() * u)) * lk.sqrt();
        Ok((u - nearest).norm())
    }
}

/// Gaussian measurement operator for matrix sensing.
#[derive(Debug, Clone)]
pub struct SensingEnsemble {
    raw: Vec<DMatrix<f64>>,
    sym: Vec<DMatrix<f64>>,
    /// Row `m` is `vec(A_m)` (column-major), so `A(Z) = op · vec(Z)`.
    op: DMatrix<f64>,
    measurements: DVector<f64>,
    seed: Option<u64>,
}

impl SensingEnsemble {
    /// Draws `M` matrices `B_m` with i.i.d. `N(0, 1/M)` entries (row-major,
    /// matrix by matrix) from the default stream of `seed`.
    pub fn generate(truth: &SensingGroundTruth, m: usize, seed: u64) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidSampleCount(m));
        }
        let n = truth.dim();
        let std = (1.0 / m as f64).sqrt();
        let mut stream = GaussianStream::from_seed(seed);
        let raw = (0..m).map(|_| stream.normal_matrix(n, n, std)).collect();
        let mut ens = Self::from_raw(raw, &truth.target())?;
        ens.seed = Some(seed);
        Ok(ens)
    }

    /// Builds the ensemble from explicit `B_m`; `y_m = ⟨X, A_m⟩`.
    pub fn from_raw(raw: Vec<DMatrix<f64>>, target: &DMatrix<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidSampleCount(0));
        }
        let n = target.nrows();
        check_shape("target", target, n, n)?;
        for b in &raw {
            check_shape("measurement matrix", b, n, n)?;
        }
        let sym: Vec<DMatrix<f64>> = raw.iter().map(|b| (b + b.transpose()) * 0.5).collect();
        let mut op = DMatrix::zeros(raw.len(), n * n);
        for (m, a) in sym.iter().enumerate() {
            for (idx, v) in a.iter().enumerate() {
                op[(m, idx)] = *v;
            }
        }
        let measurements = &op * DVector::from_column_slice(target.as_slice());
        Ok(Self {
            raw,
            sym,
            op,
            measurements,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.raw[0].nrows()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn raw(&self) -> &[DMatrix<f64>] {
        &self.raw
    }

    pub fn sym(&self) -> &[DMatrix<f64>] {
        &self.sym
    }

    pub fn measurements(&self) -> &DVector<f64> {
        &self.measurements
    }

    /// `A(Z)`.
    pub fn apply(&self, z: &DMatrix<f64>) -> DVector<f64> {
        &self.op * DVector::from_column_slice(z.as_slice())
    }

    /// `A*(y) = Σ y_m A_m`.
    pub fn adjoint(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let v = self.op.tr_mul(y);
        DMatrix::from_column_slice(n, n, v.as_slice())
    }

    /// `A*A(Z)`.
    pub fn normal(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.adjoint(&self.apply(z))
    }

    pub fn to_record(&self) -> EnsembleRecord {
        let n = self.dim();
        EnsembleRecord {
            kind: "sensing".into(),
            seed: self.seed,
            n,
            m: self.len(),
            matrices: self.raw.iter().map(row_major).collect(),
            measurements: self.measurements.iter().copied().collect(),
        }
    }

    /// Rebuilds an ensemble from its record; the stored measurements must
    /// agree with `⟨X, A_m⟩` to 1e-12 relative.
    pub fn from_record(record: &EnsembleRecord, target: &DMatrix<f64>) -> Result<Self> {
        expect_kind(record, "sensing")?;
        let raw = record
            .matrices
            .iter()
            .map(|rows| from_row_major(rows, record.n, record.n))
            .collect::<Result<Vec<_>>>()?;
        let mut ens = Self::from_raw(raw, target)?;
        check_measurements(&ens.measurements, &record.measurements)?;
        ens.seed = record.seed;
        Ok(ens)
    }
}

/// `g(U) = ¼‖UUᵀ − X‖_F²`.
#[derive(Debug, Clone)]
pub struct MsPopulation {
    truth: SensingGroundTruth,
    target: DMatrix<f64>,
}

impl MsPopulation {
    pub fn new(truth: SensingGroundTruth) -> Self {
        let target = truth.target();
        Self { truth, target }
    }

    pub fn truth(&self) -> &SensingGroundTruth {
        &self.truth
    }

    fn residual(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        u * u.transpose() - &self.target
    }
}

fn sensing_geometry(k: usize) -> Geometry {
    if k > 1 {
        Geometry::Quotient
    } else {
        Geometry::Euclidean
    }
}

impl RiskModel for MsPopulation {
    fn dims(&self) -> (usize, usize) {
        (self.truth.dim(), self.truth.target_rank())
    }

    fn geometry(&self) -> Geometry {
        sensing_geometry(self.truth.target_rank())
    }

    fn scales(&self) -> ModelScales {
        self.truth.scales()
    }

    fn label(&self) -> String {
        "ms_population".into()
    }

    fn value(&self, u: &DMatrix<f64>) -> Result<f64> {
        self.check_point(u)?;
        Ok(0.25 * self.residual(u).norm_squared())
    }

    fn euclidean_grad(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_point(u)?;
        Ok(self.residual(u) * u)
    }

    fn hess_vec(&self, u: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_point(u)?;
        self.check_point(d)?;
        let s = u * d.transpose() + d * u.transpose();
        Ok(s * u + self.residual(u) * d)
    }
}

/// `f(U) = ¼‖A(UUᵀ − X)‖²`.
#[derive(Debug, Clone)]
pub struct MsEmpirical {
    truth: SensingGroundTruth,
    ensemble: SensingEnsemble,
    target: DMatrix<f64>,
}

impl MsEmpirical {
    pub fn new(truth: SensingGroundTruth, ensemble: SensingEnsemble) -> Result<Self> {
        if ensemble.dim() != truth.dim() {
            return Err(Error::DimensionMismatch {
                expected: format!("ensemble of {0}x{0} matrices", truth.dim()),
                found: format!("{0}x{0}", ensemble.dim()),
            });
        }
        let target = truth.target();
        Ok(Self {
            truth,
            ensemble,
            target,
        })
    }

    pub fn truth(&self) -> &SensingGroundTruth {
        &self.truth
    }

    pub fn ensemble(&self) -> &SensingEnsemble {
        &self.ensemble
    }

    fn residual(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        u * u.transpose() - &self.target
    }

    /// `¼ Σ (⟨A_m, UUᵀ⟩ − y_m)²`, evaluated from the stored measurements.
    pub fn value_from_measurements(&self, u: &DMatrix<f64>) -> Result<f64> {
        self.check_point(u)?;
        let pred = self.ensemble.apply(&(u * u.transpose()));
        Ok(0.25 * (pred - self.ensemble.measurements()).norm_squared())
    }
}

impl RiskModel for MsEmpirical {
    fn dims(&self) -> (usize, usize) {
        (self.truth.dim(), self.truth.target_rank())
    }

    fn geometry(&self) -> Geometry {
        sensing_geometry(self.truth.target_rank())
    }

    fn scales(&self) -> ModelScales {
        self.truth.scales()
    }

    fn label(&self) -> String {
        format!("ms_empirical_m{}", self.ensemble.len())
    }

    fn value(&self, u: &DMatrix<f64>) -> Result<f64> {
        self.check_point(u)?;
        Ok(0.25 * self.ensemble.apply(&self.residual(u)).norm_squared())
    }

    fn euclidean_grad(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_point(u)?;
        Ok(self.ensemble.normal(&self.residual(u)) * u)
    }

    fn hess_vec(&self, u: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_point(u)?;
        self.check_point(d)?;
        let s = u * d.transpose() + d * u.transpose();
        Ok(self.ensemble.normal(&s) * u + self.ensemble.normal(&self.residual(u)) * d)
    }
}

// ---------------------------------------------------------------------------
// Phase retrieval
// ---------------------------------------------------------------------------

/// Measurements `y_m = ⟨a_m, x*⟩²` with Gaussian `a_m`.
#[derive(Debug, Clone)]
pub struct PhaseProblem {
    truth: DVector<f64>,
    /// Row `m` is `a_mᵀ`.
    vectors: DMatrix<f64>,
    measurements: DVector<f64>,
    seed: Option<u64>,
}

impl PhaseProblem {
    /// Draws `M` vectors with i.i.d. `N(0, 1)` entries from the default stream
    /// of `seed`, vector by vector.
    pub fn generate(truth: &DVector<f64>, m: usize, seed: u64) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidSampleCount(m));
        }
        let mut stream = GaussianStream::from_seed(seed);
        let vectors = stream.normal_matrix(m, truth.len(), 1.0);
        let mut p = Self::from_vectors(truth.clone(), vectors)?;
        p.seed = Some(seed);
        Ok(p)
    }

    pub fn from_vectors(truth: DVector<f64>, vectors: DMatrix<f64>) -> Result<Self> {
        if vectors.nrows() == 0 {
            return Err(Error::InvalidSampleCount(0));
        }
        if vectors.ncols() != truth.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("vectors of length {}", truth.len()),
                found: format!("{}", vectors.ncols()),
            });
        }
        let measurements = (&vectors * &truth).map(|v| v * v);
        Ok(Self {
            truth,
            vectors,
            measurements,
            seed: None,
        })
    }

    pub fn truth(&self) -> &DVector<f64> {
        &self.truth
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn measurements(&self) -> &DVector<f64> {
        &self.measurements
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.truth.len()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn to_record(&self) -> EnsembleRecord {
        EnsembleRecord {
            kind: "phase".into(),
            seed: self.seed,
            n: self.dim(),
            m: self.len(),
            matrices: vec![row_major(&self.vectors)],
            measurements: self.measurements.iter().copied().collect(),
        }
    }

    pub fn from_record(record: &EnsembleRecord, truth: &DVector<f64>) -> Result<Self> {
        expect_kind(record, "phase")?;
        let rows = record.matrices.first().ok_or(Error::InvalidSampleCount(0))?;
        let vectors = from_row_major(rows, record.m, record.n)?;
        let mut p = Self::from_vectors(truth.clone(), vectors)?;
        check_measurements(&p.measurements, &record.measurements)?;
        p.seed = record.seed;
        Ok(p)
    }
}

fn phase_scales(xstar: &DVector<f64>) -> ModelScales {
    let s = xstar.norm();
    ModelScales {
        grad: s.powi(3),
        hess: s * s,
        domain: s,
    }
}

/// Closed-form population risk of phase retrieval.
#[derive(Debug, Clone)]
pub struct PrPopulation {
    xstar: DVector<f64>,
}

impl PrPopulation {
    pub fn new(xstar: DVector<f64>) -> Result<Self> {
        if xstar.norm() == 0.0 {
            return Err(Error::ZeroTruthSignal);
        }
        Ok(Self { xstar })
    }

    pub fn truth(&self) -> &DVector<f64> {
        &self.xstar
    }

    /// Dense `∇²g(x) = 12xxᵀ − 4x*x*ᵀ + (6‖x‖² − 2‖x*‖²) I`.
    pub fn hessian(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let n = self.xstar.len();
        let xs = &self.xstar;
        let xv = x.column(0);
        let diag = 6.0 * xv.norm_squared() - 2.0 * xs.norm_squared();
        Ok(xv * xv.transpose() * 12.0 - xs * xs.transpose() * 4.0
            + DMatrix::identity(n, n) * diag)
    }
}

impl RiskModel for PrPopulation {
    fn dims(&self) -> (usize, usize) {
        (self.xstar.len(), 1)
    }

    fn geometry(&self) -> Geometry {
        Geometry::Euclidean
    }

    fn scales(&self) -> ModelScales {
        phase_scales(&self.xstar)
    }

    fn label(&self) -> String {
        "pr_population".into()
    }

    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.check_point(x)?;
        let xv = x.column(0);
        let xs = &self.xstar;
        let (nx, ns, c) = (xv.norm_squared(), xs.norm_squared(), xv.dot(xs));
        // ‖xxᵀ − x*x*ᵀ‖_F² = ‖x‖⁴ − 2(xᵀx*)² + ‖x*‖⁴
        let gap = nx * nx - 2.0 * c * c + ns * ns;
        Ok(gap + 0.5 * (nx - ns).powi(2))
    }

    fn euclidean_grad(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let xv = x.column(0);
        let xs = &self.xstar;
        let g = xv * (6.0 * xv.norm_squared() - 2.0 * xs.norm_squared())
            - xs * (4.0 * xs.dot(&xv));
        Ok(DMatrix::from_column_slice(xs.len(), 1, g.as_slice()))
    }

    fn hess_vec(&self, x: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        self.check_point(d)?;
        let xv = x.column(0);
        let dv = d.column(0);
        let xs = &self.xstar;
        let h = xv * (12.0 * xv.dot(&dv)) - xs * (4.0 * xs.dot(&dv))
            + dv * (6.0 * xv.norm_squared() - 2.0 * xs.norm_squared());
        Ok(DMatrix::from_column_slice(xs.len(), 1, h.as_slice()))
    }
}

/// `f(x) = (1/2M) Σ (⟨a_m, x⟩² − y_m)²`.
#[derive(Debug, Clone)]
pub struct PrEmpirical {
    problem: PhaseProblem,
}

impl PrEmpirical {
    pub fn new(problem: PhaseProblem) -> Result<Self> {
        if problem.truth().norm() == 0.0 {
            return Err(Error::ZeroTruthSignal);
        }
        Ok(Self { problem })
    }

    pub fn problem(&self) -> &PhaseProblem {
        &self.problem
    }

    fn projections(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.problem.vectors() * x.column(0)
    }
}

impl RiskModel for PrEmpirical {
    fn dims(&self) -> (usize, usize) {
        (self.problem.dim(), 1)
    }

    fn geometry(&self) -> Geometry {
        Geometry::Euclidean
    }

    fn scales(&self) -> ModelScales {
        phase_scales(self.problem.truth())
    }

    fn label(&self) -> String {
        format!("pr_empirical_m{}", self.problem.len())
    }

    fn value(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.check_point(x)?;
        let ax = self.projections(x);
        let m = self.problem.len() as f64;
        let s: f64 = ax
            .iter()
            .zip(self.problem.measurements().iter())
            .map(|(p, y)| (p * p - y).powi(2))
            .sum();
        Ok(s / (2.0 * m))
    }

    fn euclidean_grad(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let ax = self.projections(x);
        let m = self.problem.len() as f64;
        let weights = DVector::from_iterator(
            ax.len(),
            ax.iter()
                .zip(self.problem.measurements().iter())
                .map(|(p, y)| (p * p - y) * p),
        );
        let g = self.problem.vectors().tr_mul(&weights) * (2.0 / m);
        Ok(DMatrix::from_column_slice(g.len(), 1, g.as_slice()))
    }

    fn hess_vec(&self, x: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        self.check_point(d)?;
        let ax = self.projections(x);
        let ad = self.problem.vectors() * d.column(0);
        let m = self.problem.len() as f64;
        let weights = DVector::from_iterator(
            ax.len(),
            ax.iter()
                .zip(ad.iter())
                .zip(self.problem.measurements().iter())
                .map(|((p, q), y)| (3.0 * p * p - y) * q),
        );
        let h = self.problem.vectors().tr_mul(&weights) * (2.0 / m);
        Ok(DMatrix::from_column_slice(h.len(), 1, h.as_slice()))
    }
}

// ---------------------------------------------------------------------------
// Replay records
// ---------------------------------------------------------------------------

/// JSON container for replaying an ensemble: `matrices` holds the `B_m`
/// (sensing) or the single `M×N` matrix of vectors `a_m` (phase), each as a
/// row-major array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub kind: String,
    pub seed: Option<u64>,
    pub n: usize,
    pub m: usize,
    pub matrices: Vec<Vec<f64>>,
    pub measurements: Vec<f64>,
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn from_row_major(data: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: format!("{} entries", rows * cols),
            found: format!("{}", data.len()),
        });
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn expect_kind(record: &EnsembleRecord, kind: &str) -> Result<()> {
    if record.kind != kind {
        return Err(Error::InvalidConfig(format!(
            "expected a {kind} record, found {}",
            record.kind
        )));
    }
    Ok(())
}

fn check_measurements(computed: &DVector<f64>, stored: &[f64]) -> Result<()> {
    if stored.len() != computed.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} measurements", computed.len()),
            found: format!("{}", stored.len()),
        });
    }
    for (c, s) in computed.iter().zip(stored) {
        if (c - s).abs() > 1e-12 * c.abs().max(s.abs()).max(1e-300) {
            return Err(Error::InvalidConfig(
                "stored measurements disagree with the stored matrices".into(),
            ));
        }
    }
    Ok(())
}

/// Vector point as an `N×1` matrix.
pub fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn truth_validation() {
        assert!(SensingGroundTruth::with_identity_columns(4, vec![1.0, 2.0], 2).is_err());
        assert!(SensingGroundTruth::with_identity_columns(4, vec![2.0, 1.0, 0.5], 1).is_err());
        assert!(SensingGroundTruth::with_identity_columns(4, vec![2.0, 0.0], 2).is_err());
        let t = SensingGroundTruth::with_identity_columns(4, vec![4.0, 1.0, 1.0 / 12.0], 2).unwrap();
        assert!(t.well_separated());
        assert!(!t.has_tied_boundary());
        assert_eq!(t.kappa(), 2.0);
        let tied = SensingGroundTruth::with_identity_columns(8, vec![1.0; 3], 2).unwrap();
        assert!(tied.has_tied_boundary());
        assert!(!tied.well_separated());
    }

    #[test]
    fn ms_population_at_minimizer() {
        let t = SensingGroundTruth::random(5, vec![3.0, 1.5], 2, 9).unwrap();
        let pop = MsPopulation::new(t.clone());
        let u = t.canonical_minimizer();
        assert!(pop.value(u.matrix()).unwrap() < 1e-28);
        assert!(pop.euclidean_grad(u.matrix()).unwrap().norm() < 1e-14);
    }

    #[test]
    fn ms_scalar_gradient() {
        // N = k = 1, X = x*² → ∇g = x³ − x*² x
        let t = SensingGroundTruth::with_identity_columns(1, vec![4.0], 1).unwrap();
        let pop = MsPopulation::new(t);
        let g = pop.euclidean_grad(&x(&[1.5])).unwrap()[(0, 0)];
        assert!((g - (1.5f64.powi(3) - 4.0 * 1.5)).abs() < 1e-14);
    }

    #[test]
    fn ms_empirical_zero_operator() {
        let t = SensingGroundTruth::with_identity_columns(3, vec![1.0], 1).unwrap();
        let ens = SensingEnsemble::from_raw(vec![DMatrix::zeros(3, 3)], &t.target()).unwrap();
        let emp = MsEmpirical::new(t, ens).unwrap();
        let p = x(&[0.3, -1.0, 2.0]);
        assert_eq!(emp.value(&p).unwrap(), 0.0);
        assert_eq!(emp.euclidean_grad(&p).unwrap().norm(), 0.0);
    }

    #[test]
    fn ms_empirical_vanishes_at_exact_factor() {
        let t = SensingGroundTruth::random(4, vec![2.0, 1.0], 2, 1).unwrap();
        let ens = SensingEnsemble::generate(&t, 30, 2).unwrap();
        let emp = MsEmpirical::new(t.clone(), ens).unwrap();
        let u = t.canonical_minimizer();
        assert!(emp.value(u.matrix()).unwrap() < 1e-26);
        assert!(emp.euclidean_grad(u.matrix()).unwrap().norm() < 1e-12);
    }

    #[test]
    fn ms_empirical_measurement_path_agrees() {
        let t = SensingGroundTruth::random(4, vec![2.0, 1.0, 0.1], 2, 3).unwrap();
        let ens = SensingEnsemble::generate(&t, 25, 4).unwrap();
        for (a, y) in ens.sym().iter().zip(ens.measurements().iter()) {
            assert_eq!(a, &a.transpose());
            let direct = a.dot(&t.target());
            assert!((direct - y).abs() <= 1e-12 * direct.abs().max(1.0));
        }
        let emp = MsEmpirical::new(t, ens).unwrap();
        let u = GaussianStream::from_seed(5).normal_matrix(4, 2, 1.0);
        let a = emp.value(&u).unwrap();
        let b = emp.value_from_measurements(&u).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn pr_population_closed_forms() {
        let xs = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let pop = PrPopulation::new(xs.clone()).unwrap();
        let zero = DMatrix::zeros(3, 1);
        assert_eq!(pop.euclidean_grad(&zero).unwrap().norm(), 0.0);
        let h0 = pop.hessian(&zero).unwrap();
        let expected = -(&xs * xs.transpose()) * 4.0 - DMatrix::identity(3, 3) * (2.0 * xs.norm_squared());
        assert!((h0 - expected).norm() < 1e-14);
        for s in [1.0, -1.0] {
            assert!(pop.euclidean_grad(&column(&(&xs * s))).unwrap().norm() < 1e-13);
        }
        // N = 1, x* = 1 → g(x) = 1.5 (x² − 1)²
        let one = PrPopulation::new(DVector::from_vec(vec![1.0])).unwrap();
        for v in [-1.7, 0.0, 0.3, 2.0] {
            let g = one.value(&x(&[v])).unwrap();
            assert!((g - 1.5 * (v * v - 1.0f64).powi(2)).abs() < 1e-13);
        }
    }

    #[test]
    fn pr_empirical_closed_forms() {
        let xs = DVector::from_vec(vec![0.4, 1.0, -0.7]);
        let prob = PhaseProblem::generate(&xs, 15, 8).unwrap();
        let emp = PrEmpirical::new(prob.clone()).unwrap();
        let at = column(&xs);
        assert!(emp.value(&at).unwrap() < 1e-28);
        assert!(emp.euclidean_grad(&at).unwrap().norm() < 1e-13);

        // N = 1, x* = 1 → f(x) = (1/2M) Σ a⁴ (x² − 1)²
        let one = DVector::from_vec(vec![1.0]);
        let p1 = PhaseProblem::generate(&one, 12, 3).unwrap();
        let a4: f64 = p1.vectors().iter().map(|a| a.powi(4)).sum();
        let e1 = PrEmpirical::new(p1).unwrap();
        for v in [-1.2, 0.0, 0.5] {
            let f = e1.value(&x(&[v])).unwrap();
            let expected = a4 / 24.0 * (v * v - 1.0f64).powi(2);
            assert!((f - expected).abs() < 1e-12 * expected.max(1.0));
        }
    }

    #[test]
    fn phase_measurements_coordinate_projection() {
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let p = PhaseProblem::generate(&e1, 10, 77).unwrap();
        for m in 0..10 {
            assert_eq!(p.measurements()[m], p.vectors()[(m, 0)].powi(2));
        }
    }

    #[test]
    fn generators_are_deterministic_and_validate() {
        let t = SensingGroundTruth::with_identity_columns(3, vec![1.0], 1).unwrap();
        let a = SensingEnsemble::generate(&t, 5, 42).unwrap();
        let b = SensingEnsemble::generate(&t, 5, 42).unwrap();
        assert_eq!(a.raw(), b.raw());
        assert!(matches!(
            SensingEnsemble::generate(&t, 0, 1),
            Err(Error::InvalidSampleCount(0))
        ));
        let xs = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            PhaseProblem::generate(&xs, 0, 1),
            Err(Error::InvalidSampleCount(0))
        ));
        assert_eq!(
            PhaseProblem::generate(&xs, 4, 9).unwrap().vectors(),
            PhaseProblem::generate(&xs, 4, 9).unwrap().vectors()
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let pop = PrPopulation::new(DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(matches!(
            pop.value(&DMatrix::zeros(3, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            PrPopulation::new(DVector::zeros(2)),
            Err(Error::ZeroTruthSignal)
        ));
    }

    #[test]
    fn records_round_trip() {
        let t = SensingGroundTruth::random(3, vec![1.0, 0.5], 1, 1).unwrap();
        let ens = SensingEnsemble::generate(&t, 4, 5).unwrap();
        let json = serde_json::to_string(&ens.to_record()).unwrap();
        let back: EnsembleRecord = serde_json::from_str(&json).unwrap();
        let rebuilt = SensingEnsemble::from_record(&back, &t.target()).unwrap();
        assert_eq!(rebuilt.raw(), ens.raw());
        assert_eq!(rebuilt.seed(), Some(5));

        let xs = DVector::from_vec(vec![1.0, -1.0]);
        let p = PhaseProblem::generate(&xs, 6, 2).unwrap();
        let json = serde_json::to_string(&p.to_record()).unwrap();
        let back: EnsembleRecord = serde_json::from_str(&json).unwrap();
        let rebuilt = PhaseProblem::from_record(&back, &xs).unwrap();
        assert_eq!(rebuilt.vectors(), p.vectors());
        assert!(PhaseProblem::from_record(&back, &DVector::from_vec(vec![2.0, 0.0])).is_err());
    }

    #[test]
    fn tied_spectrum_distance() {
        let t = SensingGroundTruth::with_identity_columns(5, vec![1.0; 3], 2).unwrap();
        // any two orthonormal directions in span(e1, e2, e3) are minimizers
        let mut u = DMatrix::zeros(5, 2);
        let c = std::f64::consts::FRAC_1_SQRT_2;
        u[(0, 0)] = c;
        u[(2, 0)] = c;
        u[(1, 1)] = 1.0;
        assert!(t.distance_to_global_minima(&u).unwrap() < 1e-14);
        u[(4, 1)] = 0.1;
        assert!((t.distance_to_global_minima(&u).unwrap() - 0.1).abs() < 1e-12);
    }
}
