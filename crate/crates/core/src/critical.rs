//! Critical points: closed forms for the population risks, a damped Newton
//! search for arbitrary models, and the matching of empirical minima to
//! population minima.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::{self, FactorPoint};
use crate::risk::{self, Geometry, RiskModel, SensingGroundTruth};
use crate::rng::GaussianStream;
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum CriticalKind {
    LocalMin,
    StrictSaddle,
    Degenerate,
}

impl CriticalKind {
    pub fn from_lambda_min(lambda_min: f64, tol_eig: f64) -> Self {
        if lambda_min >= tol_eig {
            CriticalKind::LocalMin
        } else if lambda_min <= -tol_eig {
            CriticalKind::StrictSaddle
        } else {
            CriticalKind::Degenerate
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CriticalKind::LocalMin => "local_min",
            CriticalKind::StrictSaddle => "strict_saddle",
            CriticalKind::Degenerate => "degenerate",
        }
    }
}

/// Numerical tolerances derived from a model's scales:
/// `τ_crit = 1e-8 (1 + grad scale)`, `τ_eig = 1e-6 · hess scale`,
/// `τ_dedupe = 1e-4 · domain scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub crit: f64,
    pub eig: f64,
    pub dedupe: f64,
}

impl Tolerances {
    pub fn for_model(model: &dyn RiskModel) -> Self {
        let s = model.scales();
        Self {
            crit: 1e-8 * (1.0 + s.grad),
            eig: 1e-6 * s.hess,
            dedupe: 1e-4 * s.domain,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CriticalPointRecord {
    pub location: DMatrix<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub lambda_min: f64,
    pub kind: CriticalKind,
    /// Eigenvalues with `|λ| < τ_eig` (zero curvature directions).
    pub near_zero_eigenvalues: usize,
    pub basin_seed: DMatrix<f64>,
}

impl CriticalPointRecord {
    /// Entries of the location in row-major order.
    pub fn coords(&self) -> Vec<f64> {
        risk::row_major(&self.location)
    }
}

impl Serialize for CriticalPointRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("CriticalPointRecord", 8)?;
        st.serialize_field("shape", &self.location.shape())?;
        st.serialize_field("location", &risk::row_major(&self.location))?;
        st.serialize_field("value", &self.value)?;
        st.serialize_field("grad_norm", &self.grad_norm)?;
        st.serialize_field("lambda_min", &self.lambda_min)?;
        st.serialize_field("kind", &self.kind)?;
        st.serialize_field("near_zero_eigenvalues", &self.near_zero_eigenvalues)?;
        st.serialize_field("basin_seed", &risk::row_major(&self.basin_seed))?;
        st.end()
    }
}

/// Evaluates gradient norm and curvature at `p` and builds its record.
pub fn classify_point(
    model: &dyn RiskModel,
    p: &DMatrix<f64>,
    basin_seed: &DMatrix<f64>,
) -> Result<CriticalPointRecord> {
    let tol = Tolerances::for_model(model);
    let grad_norm = risk::model_gradient(model, p)?.norm();
    let spec = spectral::min_eig(model, p)?;
    Ok(CriticalPointRecord {
        location: p.clone(),
        value: model.value(p)?,
        grad_norm,
        lambda_min: spec.lambda_min,
        kind: CriticalKind::from_lambda_min(spec.lambda_min, tol.eig),
        near_zero_eigenvalues: spec.near_zero_count(tol.eig),
        basin_seed: basin_seed.clone(),
    })
}

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AnalyticCriticalPoint {
    pub location: DMatrix<f64>,
    pub kind: CriticalKind,
}

/// All `U = W_u Λ_u^{1/2}` over the `C(r, k)` eigenvalue selections.
///
/// A selection is a global minimum when its eigenvalues coincide with the
/// top `k`; every other selection is a strict saddle.
pub fn analytic_critical_points_ms(truth: &SensingGroundTruth) -> Vec<AnalyticCriticalPoint> {
    let k = truth.target_rank();
    let lambdas = truth.eigvals();
    let top = &lambdas[..k];
    (0..truth.rank())
        .combinations(k)
        .map(|sel| {
            let is_top = sel
                .iter()
                .zip(top)
                .all(|(&i, &t)| (lambdas[i] - t).abs() <= 1e-12 * t);
            AnalyticCriticalPoint {
                location: truth.factor_for(&sel),
                kind: if is_top {
                    CriticalKind::LocalMin
                } else {
                    CriticalKind::StrictSaddle
                },
            }
        })
        .collect()
}

/// Orthonormal basis of the orthogonal complement of `v` (Householder
/// reflection mapping `e_1` onto `v/‖v‖`, columns 2..N).
pub fn orthogonal_completion(v: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let n = v.len();
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::ZeroTruthSignal);
    }
    let unit = v / norm;
    // H = I − 2wwᵀ/‖w‖² with w = e_1 − unit maps e_1 to unit
    let mut w = -unit.clone();
    w[0] += 1.0;
    let wn2 = w.norm_squared();
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for j in 1..n {
        let mut col = DVector::zeros(n);
        col[j] = 1.0;
        if wn2 > 0.0 {
            col -= &w * (2.0 * w[j] / wn2);
        }
        out.push(col);
    }
    Ok(out)
}

/// `0`, `±x*`, and `±‖x*‖/√3 · w_i` for an orthonormal basis `{w_i}` of the
/// complement of `x*`.
pub fn analytic_critical_points_pr(xstar: &DVector<f64>) -> Result<Vec<AnalyticCriticalPoint>> {
    let directions = orthogonal_completion(xstar)?;
    let n = xstar.len();
    let radius = xstar.norm() / 3f64.sqrt();
    let mut out = vec![
        AnalyticCriticalPoint {
            location: DMatrix::zeros(n, 1),
            kind: CriticalKind::StrictSaddle,
        },
        AnalyticCriticalPoint {
            location: risk::column(xstar),
            kind: CriticalKind::LocalMin,
        },
        AnalyticCriticalPoint {
            location: -risk::column(xstar),
            kind: CriticalKind::LocalMin,
        },
    ];
    for w in directions {
        for sign in [1.0, -1.0] {
            out.push(AnalyticCriticalPoint {
                location: risk::column(&(&w * (sign * radius))),
                kind: CriticalKind::StrictSaddle,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Damped Newton on the gradient map
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonConfig {
    pub max_iter: usize,
    /// Initial trust radius, in units of the model's domain scale.
    pub trust_radius: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            trust_radius: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub point: DMatrix<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Orthonormal coordinates of the tangent space used by the solver.
fn tangent_basis(model: &dyn RiskModel, p: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    match model.geometry() {
        Geometry::Euclidean => {
            let (n, k) = p.shape();
            Ok((0..n * k)
                .map(|idx| {
                    let mut e = DMatrix::zeros(n, k);
                    e.as_mut_slice()[idx] = 1.0;
                    e
                })
                .collect())
        }
        Geometry::Quotient => {
            let u = FactorPoint::new(p.clone())?;
            Ok(manifold::horizontal_basis(&u)?
                .into_iter()
                .map(|t| t.into_matrix())
                .collect())
        }
    }
}

/// Solves `grad f(p) = 0` from `start` by Levenberg–Marquardt on the
/// gradient map: with `H = VΛVᵀ` the step is `−V (Λ/(Λ² + μ)) Vᵀ g`, capped
/// to the trust radius and accepted only if it lowers `‖grad f‖`.
///
/// Iterates until the gradient reaches round-off level (`1e-14` relative to
/// the gradient scale) or no further decrease is possible, then reports
/// convergence if `‖grad f‖ ≤ τ_crit`. Saddles are found as readily as
/// minima.
pub fn refine(
    model: &dyn RiskModel,
    start: &DMatrix<f64>,
    cfg: &NewtonConfig,
) -> Result<NewtonOutcome> {
    model.check_point(start)?;
    let scales = model.scales();
    let tol = Tolerances::for_model(model);
    let floor = 1e-14 * (1.0 + scales.grad);
    let hess2 = scales.hess * scales.hess;
    let mu_min = 1e-30 * hess2;
    let max_delta = 4.0 * scales.domain;
    let blowup = 1e6 * scales.domain.max(1.0);

    let mut p = start.clone();
    let mut g = risk::model_gradient(model, &p)?;
    let mut gn = g.norm();
    if !gn.is_finite() {
        return Err(Error::NonFiniteEntry("gradient".into()));
    }
    let mut mu = 1e-4 * hess2;
    let mut delta = cfg.trust_radius * scales.domain;
    let mut iterations = 0;

    while iterations < cfg.max_iter && gn > floor {
        iterations += 1;
        let basis = tangent_basis(model, &p)?;
        let images = basis
            .iter()
            .map(|e| model.hess_vec(&p, e))
            .collect::<Result<Vec<_>>>()?;
        let dim = basis.len();
        let h = DMatrix::from_fn(dim, dim, |i, j| images[i].dot(&basis[j]));
        let (lams, vecs) = spectral::sorted_eigen(h)?;
        let gc = DVector::from_iterator(dim, basis.iter().map(|e| e.dot(&g)));
        let c = vecs.tr_mul(&gc);

        let mut accepted = false;
        for _ in 0..40 {
            let s = DVector::from_iterator(
                dim,
                lams.iter().zip(c.iter()).map(|(l, ci)| -l * ci / (l * l + mu)),
            );
            let mut coords = &vecs * s;
            let len = coords.norm();
            let capped = len > delta;
            if capped {
                coords *= delta / len;
            }
            let mut candidate = p.clone();
            for (e, ci) in basis.iter().zip(coords.iter()) {
                candidate += e * *ci;
            }
            let trial = risk::model_gradient(model, &candidate);
            match trial {
                Ok(g_new) if g_new.norm() < gn => {
                    p = candidate;
                    gn = g_new.norm();
                    g = g_new;
                    mu = (mu * 0.1).max(mu_min);
                    if capped {
                        delta = (2.0 * delta).min(max_delta);
                    }
                    accepted = true;
                    break;
                }
                Ok(_) | Err(Error::RankDeficient { .. }) | Err(Error::BasisDimension { .. }) => {
                    mu = mu.max(1e-12 * hess2) * 10.0;
                    delta *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        if !accepted || p.norm() > blowup {
            break;
        }
    }

    if gn <= tol.crit {
        Ok(NewtonOutcome {
            point: p,
            grad_norm: gn,
            iterations,
        })
    } else {
        Err(Error::NoConvergence {
            iterations,
            grad_norm: gn,
        })
    }
}

/// Local minimization from `start`: saddle-free damped Newton
/// (`−V (1/(|Λ| + μ)) Vᵀ g`) accepted on decrease of the risk, followed by
/// [`refine`] to polish the gradient. Fails unless the end point is a
/// local minimum.
pub fn minimize(
    model: &dyn RiskModel,
    start: &DMatrix<f64>,
    cfg: &NewtonConfig,
) -> Result<CriticalPointRecord> {
    model.check_point(start)?;
    let scales = model.scales();
    let tol = Tolerances::for_model(model);
    let mu_min = 1e-12 * scales.hess;
    let max_delta = 4.0 * scales.domain;

    let mut p = start.clone();
    let mut value = model.value(&p)?;
    let mut g = risk::model_gradient(model, &p)?;
    let mut mu = 1e-2 * scales.hess;
    let mut delta = cfg.trust_radius * scales.domain;
    let mut iterations = 0;

    while iterations < cfg.max_iter && g.norm() > tol.crit {
        iterations += 1;
        let basis = tangent_basis(model, &p)?;
        let images = basis
            .iter()
            .map(|e| model.hess_vec(&p, e))
            .collect::<Result<Vec<_>>>()?;
        let dim = basis.len();
        let h = DMatrix::from_fn(dim, dim, |i, j| images[i].dot(&basis[j]));
        let (lams, vecs) = spectral::sorted_eigen(h)?;
        let gc = DVector::from_iterator(dim, basis.iter().map(|e| e.dot(&g)));
        let c = vecs.tr_mul(&gc);

        let mut accepted = false;
        for _ in 0..40 {
            let s = DVector::from_iterator(
                dim,
                lams.iter().zip(c.iter()).map(|(l, ci)| -ci / (l.abs() + mu)),
            );
            let mut coords = &vecs * s;
            let len = coords.norm();
            let capped = len > delta;
            if capped {
                coords *= delta / len;
            }
            let mut candidate = p.clone();
            for (e, ci) in basis.iter().zip(coords.iter()) {
                candidate += e * *ci;
            }
            let trial = model
                .value(&candidate)
                .and_then(|v| Ok((v, risk::model_gradient(model, &candidate)?)));
            match trial {
                Ok((v, g_new)) if v < value || (v <= value && g_new.norm() < g.norm()) => {
                    p = candidate;
                    value = v;
                    g = g_new;
                    mu = (mu * 0.1).max(mu_min);
                    if capped {
                        delta = (2.0 * delta).min(max_delta);
                    }
                    accepted = true;
                    break;
                }
                Ok(_) | Err(Error::RankDeficient { .. }) | Err(Error::BasisDimension { .. }) => {
                    mu = mu.max(mu_min) * 10.0;
                    delta *= 0.5;
                }
                Err(e) => return Err(e),
            }
        }
        if !accepted {
            break;
        }
    }

    let polished = refine(model, &p, cfg)?;
    let record = classify_point(model, &polished.point, start)?;
    if record.kind != CriticalKind::LocalMin {
        return Err(Error::NoConvergence {
            iterations,
            grad_norm: record.grad_norm,
        });
    }
    Ok(record)
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Seeds {
    Explicit(Vec<DMatrix<f64>>),
    /// Uniform grid over `[min, max]^{N·k}` with `points` nodes per axis.
    Grid { min: f64, max: f64, points: usize },
    /// `per_center` Gaussian perturbations of each center, with standard
    /// deviation `radius · domain scale` per entry.
    Perturbed {
        centers: Vec<DMatrix<f64>>,
        radius: f64,
        per_center: usize,
        seed: u64,
    },
}

impl Seeds {
    pub fn materialize(&self, model: &dyn RiskModel) -> Result<Vec<DMatrix<f64>>> {
        let (n, k) = model.dims();
        match self {
            Seeds::Explicit(v) => Ok(v.clone()),
            Seeds::Grid { min, max, points } => {
                if *points < 2 {
                    return Err(Error::InvalidConfig("grid needs at least 2 points".into()));
                }
                let axis: Vec<f64> = (0..*points)
                    .map(|i| min + (max - min) * i as f64 / (*points - 1) as f64)
                    .collect();
                Ok((0..n * k)
                    .map(|_| axis.iter().copied())
                    .multi_cartesian_product()
                    .map(|vals| DMatrix::from_column_slice(n, k, &vals))
                    .collect())
            }
            Seeds::Perturbed {
                centers,
                radius,
                per_center,
                seed,
            } => {
                let scale = radius * model.scales().domain;
                let mut out = Vec::with_capacity(centers.len() * per_center);
                for (ci, c) in centers.iter().enumerate() {
                    let mut stream = GaussianStream::new(*seed, "perturbed-seeds", ci as u64);
                    for _ in 0..*per_center {
                        out.push(c + stream.normal_matrix(n, k, scale));
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub seeds: Seeds,
    pub newton: NewtonConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedFailure {
    pub seed: Vec<f64>,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchOutcome {
    pub records: Vec<CriticalPointRecord>,
    pub failures: Vec<SeedFailure>,
    pub tolerances: Tolerances,
}

/// Runs [`refine`] from every seed (in parallel), classifies the converged
/// points and removes duplicates. Seeds that fail are reported, not fatal.
pub fn find_critical_points(model: &dyn RiskModel, cfg: &SearchConfig) -> Result<SearchOutcome> {
    let seeds = cfg.seeds.materialize(model)?;
    let results: Vec<Result<CriticalPointRecord>> = seeds
        .par_iter()
        .map(|s| {
            let out = refine(model, s, &cfg.newton)?;
            classify_point(model, &out.point, s)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(SeedFailure {
                seed: risk::row_major(seed),
                error: e.to_string(),
            }),
        }
    }
    let tolerances = Tolerances::for_model(model);
    Ok(SearchOutcome {
        records: dedupe(records, model.geometry(), tolerances.dedupe),
        failures,
        tolerances,
    })
}

/// Distance used to identify points: Procrustes on the quotient, Euclidean
/// otherwise (so `x` and `−x` stay distinct for vectors).
pub fn point_distance(geometry: Geometry, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    match geometry {
        Geometry::Euclidean => (a - b).norm(),
        Geometry::Quotient => {
            manifold::procrustes_distance_raw(a, b).unwrap_or_else(|_| (a - b).norm())
        }
    }
}

fn lexicographic(a: &DMatrix<f64>, b: &DMatrix<f64>) -> std::cmp::Ordering {
    risk::row_major(a)
        .iter()
        .zip(risk::row_major(b).iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Keeps one record per cluster of points closer than `tol`; the
/// representative is the one with the smallest gradient norm. Output is
/// sorted lexicographically by location.
pub fn dedupe(
    mut records: Vec<CriticalPointRecord>,
    geometry: Geometry,
    tol: f64,
) -> Vec<CriticalPointRecord> {
    records.sort_by(|a, b| {
        a.grad_norm
            .total_cmp(&b.grad_norm)
            .then_with(|| lexicographic(&a.location, &b.location))
    });
    let mut kept: Vec<CriticalPointRecord> = Vec::new();
    for r in records {
        if kept
            .iter()
            .all(|k| point_distance(geometry, &k.location, &r.location) > tol)
        {
            kept.push(r);
        }
    }
    kept.sort_by(|a, b| lexicographic(&a.location, &b.location));
    kept
}

// ---------------------------------------------------------------------------
// Correspondence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MatchedPair {
    pub population: usize,
    pub empirical: usize,
    pub distance: f64,
    /// `distance ≤ 2ε/η`.
    pub within_bound: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrespondenceReport {
    pub population_minima: Vec<Vec<f64>>,
    pub empirical_minima: Vec<Vec<f64>>,
    pub pairs: Vec<MatchedPair>,
    pub unmatched_population: Vec<usize>,
    /// Empirical minima without a population partner ("spurious").
    pub unmatched_empirical: Vec<usize>,
    /// Index of the nearest population minimum of each empirical minimum.
    pub basin: Vec<Option<usize>>,
    pub epsilon: f64,
    pub eta: f64,
    /// `2ε/η`, i.e. the distance bound with `σ = 1`.
    pub heuristic_bound: f64,
}

impl CorrespondenceReport {
    pub fn is_bijection(&self) -> bool {
        self.unmatched_population.is_empty()
            && self.unmatched_empirical.is_empty()
            && self.population_minima.len() == self.empirical_minima.len()
    }
}

fn argmin(values: impl Iterator<Item = f64>) -> Option<usize> {
    values
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((i, d)),
        })
        .map(|(i, _)| i)
}

/// Mutual-nearest matching of empirical to population minima.
pub fn match_correspondence(
    population: &[DMatrix<f64>],
    empirical: &[DMatrix<f64>],
    geometry: Geometry,
    epsilon: f64,
    eta: f64,
) -> CorrespondenceReport {
    let dist: Vec<Vec<f64>> = empirical
        .iter()
        .map(|e| {
            population
                .iter()
                .map(|p| point_distance(geometry, p, e))
                .collect()
        })
        .collect();
    let nearest_pop: Vec<Option<usize>> = dist.iter().map(|row| argmin(row.iter().copied())).collect();
    let nearest_emp: Vec<Option<usize>> = (0..population.len())
        .map(|p| argmin(dist.iter().map(|row| row[p])))
        .collect();
    let bound = 2.0 * epsilon / eta;

    let mut pairs = Vec::new();
    for (e, np) in nearest_pop.iter().enumerate() {
        if let Some(p) = *np {
            if nearest_emp[p] == Some(e) {
                pairs.push(MatchedPair {
                    population: p,
                    empirical: e,
                    distance: dist[e][p],
                    within_bound: dist[e][p] <= bound,
                });
            }
        }
    }
    let unmatched_empirical = (0..empirical.len())
        .filter(|e| !pairs.iter().any(|pr| pr.empirical == *e))
        .collect();
    let unmatched_population = (0..population.len())
        .filter(|p| !pairs.iter().any(|pr| pr.population == *p))
        .collect();
    CorrespondenceReport {
        population_minima: population.iter().map(risk::row_major).collect(),
        empirical_minima: empirical.iter().map(risk::row_major).collect(),
        pairs,
        unmatched_population,
        unmatched_empirical,
        basin: nearest_pop,
        epsilon,
        eta,
        heuristic_bound: bound,
    }
}
