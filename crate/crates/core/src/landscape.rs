//! Region classification, sampled verification of the region bounds of the
//! population landscapes, Monte-Carlo checks of the three assumptions, and
//! RIP-constant estimation.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::FactorPoint;
use crate::risk::{self, MsPopulation, PrPopulation, RiskModel, SensingEnsemble, SensingGroundTruth};
use crate::rng::GaussianStream;
use crate::spectral;

/// Proposals allowed per requested sample before a sampler is declared
/// starved (acceptance below 0.1%).
const STARVATION_RATIO: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum RegionLabel {
    #[serde(rename = "MS_R1")]
    MsR1,
    #[serde(rename = "MS_R2p")]
    MsR2p,
    #[serde(rename = "MS_R2pp")]
    MsR2pp,
    #[serde(rename = "MS_R3p")]
    MsR3p,
    #[serde(rename = "MS_R3pp")]
    MsR3pp,
    #[serde(rename = "PR_R1")]
    PrR1,
    #[serde(rename = "PR_R2")]
    PrR2,
    #[serde(rename = "PR_R3")]
    PrR3,
    #[serde(rename = "PR_R4")]
    PrR4,
}

impl RegionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::MsR1 => "MS_R1",
            RegionLabel::MsR2p => "MS_R2p",
            RegionLabel::MsR2pp => "MS_R2pp",
            RegionLabel::MsR3p => "MS_R3p",
            RegionLabel::MsR3pp => "MS_R3pp",
            RegionLabel::PrR1 => "PR_R1",
            RegionLabel::PrR2 => "PR_R2",
            RegionLabel::PrR3 => "PR_R3",
            RegionLabel::PrR4 => "PR_R4",
        }
    }
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Witness {
    MatrixSensing {
        sigma_k: f64,
        gram_norm: f64,
        grad_norm: f64,
        distance: f64,
    },
    PhaseRetrieval {
        norm: f64,
        dist_to_minima: f64,
        dist_to_saddles: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionLabelSet {
    pub labels: BTreeSet<RegionLabel>,
    pub witness: Witness,
    /// Set when the truth violates the separation assumptions the regions
    /// were derived under.
    pub advisory: bool,
}

impl RegionLabelSet {
    pub fn contains(&self, label: RegionLabel) -> bool {
        self.labels.contains(&label)
    }
}

/// Thresholds defining the matrix sensing regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MsRegionThresholds {
    /// `0.2 κ⁻¹ √λ_k`
    pub r1_radius: f64,
    /// `½ √λ_k`
    pub sigma: f64,
    /// `(8/7) ‖U*U*ᵀ‖_F`
    pub gram: f64,
    /// `λ_k^{3/2} / 80`
    pub grad: f64,
}

impl MsRegionThresholds {
    pub fn new(truth: &SensingGroundTruth) -> Self {
        let lk = truth.lambda_k();
        Self {
            r1_radius: 0.2 / truth.kappa() * lk.sqrt(),
            sigma: 0.5 * lk.sqrt(),
            gram: 8.0 / 7.0 * truth.minimizer_gram_norm(),
            grad: lk.powf(1.5) / 80.0,
        }
    }
}

fn ms_advisory(truth: &SensingGroundTruth) -> bool {
    let top = &truth.eigvals()[..truth.target_rank()];
    let repeated = top.windows(2).any(|w| w[1] >= w[0] * (1.0 - 1e-12));
    !truth.well_separated() || repeated
}

pub fn classify_region_ms(truth: &SensingGroundTruth, u: &FactorPoint) -> Result<RegionLabelSet> {
    crate::error::check_shape("factor", u.matrix(), truth.dim(), truth.target_rank())?;
    let th = MsRegionThresholds::new(truth);
    let um = u.matrix();
    let sigma_k = u.sigma_min();
    let gram_norm = (um * um.transpose()).norm();
    let pop = MsPopulation::new(truth.clone());
    let grad_norm = risk::riemannian_grad(&pop, u)?.matrix().norm();
    let distance = truth.distance_to_global_minima(um)?;

    let mut labels = BTreeSet::new();
    let small_sigma = sigma_k <= th.sigma;
    let in_ball = gram_norm <= th.gram;
    if distance <= th.r1_radius {
        labels.insert(RegionLabel::MsR1);
    }
    if small_sigma && in_ball {
        labels.insert(if grad_norm <= th.grad {
            RegionLabel::MsR2p
        } else {
            RegionLabel::MsR2pp
        });
    }
    if !small_sigma && distance > th.r1_radius && in_ball {
        labels.insert(RegionLabel::MsR3p);
    }
    if !in_ball {
        labels.insert(RegionLabel::MsR3pp);
    }
    Ok(RegionLabelSet {
        labels,
        witness: Witness::MatrixSensing {
            sigma_k,
            gram_norm,
            grad_norm,
            distance,
        },
        advisory: ms_advisory(truth),
    })
}

/// Distance from `x` to the saddle set `{±‖x*‖/√3 · w : wᵀx* = 0, ‖w‖ = 1}`.
pub fn distance_to_pr_saddles(xstar: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let norm = xstar.norm();
    let unit = xstar / norm;
    let along = x.dot(&unit);
    let perp = (x - &unit * along).norm();
    let radius = norm / 3f64.sqrt();
    if perp == 0.0 {
        (along * along + radius * radius).sqrt()
    } else {
        (along * along + (perp - radius).powi(2)).sqrt()
    }
}

pub fn classify_region_pr(xstar: &DVector<f64>, x: &DVector<f64>) -> Result<RegionLabelSet> {
    let s = xstar.norm();
    if s == 0.0 {
        return Err(Error::ZeroTruthSignal);
    }
    if x.len() != xstar.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}", xstar.len()),
            found: format!("{}", x.len()),
        });
    }
    let norm = x.norm();
    let dist_to_minima = (x - xstar).norm().min((x + xstar).norm());
    let dist_to_saddles = distance_to_pr_saddles(xstar, x);
    let mut labels = BTreeSet::new();
    if norm <= 0.5 * s {
        labels.insert(RegionLabel::PrR1);
    }
    if dist_to_minima <= 0.1 * s {
        labels.insert(RegionLabel::PrR2);
    }
    if dist_to_saddles <= 0.2 * s {
        labels.insert(RegionLabel::PrR3);
    }
    if labels.is_empty() {
        labels.insert(RegionLabel::PrR4);
    }
    Ok(RegionLabelSet {
        labels,
        witness: Witness::PhaseRetrieval {
            norm,
            dist_to_minima,
            dist_to_saddles,
        },
        advisory: false,
    })
}

// ---------------------------------------------------------------------------
// Sampled region bounds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplerConfig {
    pub samples_per_region: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// Property value must be `≥ bound`.
    AtLeast,
    /// Property value must be `≤ bound`.
    AtMost,
    /// Property value must be `> bound`.
    Exceeds,
}

impl Inequality {
    fn margin(self, value: f64, bound: f64) -> f64 {
        match self {
            Inequality::AtLeast | Inequality::Exceeds => value - bound,
            Inequality::AtMost => bound - value,
        }
    }

    fn holds(self, value: f64, bound: f64) -> bool {
        match self {
            Inequality::AtLeast => value >= bound,
            Inequality::AtMost => value <= bound,
            Inequality::Exceeds => value > bound,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionCheck {
    pub region: RegionLabel,
    /// `"lambda_min"` or `"grad_norm"`.
    pub property: &'static str,
    pub inequality: Inequality,
    pub bound: f64,
    pub proposed: usize,
    pub accepted: usize,
    pub violations: usize,
    /// Smallest signed slack over the accepted samples (negative on violation).
    pub worst_margin: f64,
    pub worst_point: Option<Vec<f64>>,
    pub skipped: bool,
}

impl RegionCheck {
    pub fn passed(&self) -> bool {
        self.skipped || self.violations == 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub family: &'static str,
    pub config: SamplerConfig,
    pub advisory: bool,
    pub checks: Vec<RegionCheck>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(RegionCheck::passed)
    }

    pub fn check(&self, region: RegionLabel) -> Option<&RegionCheck> {
        self.checks.iter().find(|c| c.region == region)
    }
}

struct RegionSpec<'a> {
    region: RegionLabel,
    property: &'static str,
    inequality: Inequality,
    bound: f64,
    propose: Box<dyn Fn(&mut GaussianStream) -> Option<DMatrix<f64>> + Sync + 'a>,
    accept: Box<dyn Fn(&DMatrix<f64>) -> Result<bool> + Sync + 'a>,
    measure: Box<dyn Fn(&DMatrix<f64>) -> Result<f64> + Sync + 'a>,
}

fn run_region(spec: &RegionSpec<'_>, cfg: &SamplerConfig, index: u64) -> Result<RegionCheck> {
    let n = cfg.samples_per_region;
    let mut stream = GaussianStream::new(cfg.seed, spec.region.as_str(), index);
    let mut samples = Vec::with_capacity(n);
    let mut proposed = 0;
    while samples.len() < n {
        if proposed >= STARVATION_RATIO * n.max(1) {
            return Err(Error::SamplerStarved {
                region: spec.region.to_string(),
                accepted: samples.len(),
                proposed,
            });
        }
        proposed += 1;
        if let Some(p) = (spec.propose)(&mut stream) {
            if (spec.accept)(&p)? {
                samples.push(p);
            }
        }
    }
    let values = samples
        .par_iter()
        .map(|p| (spec.measure)(p))
        .collect::<Result<Vec<f64>>>()?;
    let mut violations = 0;
    let mut worst: Option<(f64, usize)> = None;
    for (i, &v) in values.iter().enumerate() {
        if !spec.inequality.holds(v, spec.bound) {
            violations += 1;
        }
        let m = spec.inequality.margin(v, spec.bound);
        if worst.is_none_or(|(w, _)| m < w) {
            worst = Some((m, i));
        }
    }
    Ok(RegionCheck {
        region: spec.region,
        property: spec.property,
        inequality: spec.inequality,
        bound: spec.bound,
        proposed,
        accepted: samples.len(),
        violations,
        worst_margin: worst.map_or(f64::INFINITY, |(m, _)| m),
        worst_point: worst.map(|(_, i)| risk::row_major(&samples[i])),
        skipped: false,
    })
}

fn skipped(region: RegionLabel, property: &'static str, inequality: Inequality, bound: f64) -> RegionCheck {
    RegionCheck {
        region,
        property,
        inequality,
        bound,
        proposed: 0,
        accepted: 0,
        violations: 0,
        worst_margin: f64::INFINITY,
        worst_point: None,
        skipped: true,
    }
}

/// Direction drawn uniformly on the sphere of `R^{rows×cols}`.
fn unit_matrix(stream: &mut GaussianStream, rows: usize, cols: usize) -> DMatrix<f64> {
    let g = stream.normal_matrix(rows, cols, 1.0);
    let n = g.norm();
    g / n
}

/// Uniform sample from the Frobenius ball of `radius` in `R^{rows×cols}`.
fn ball_matrix(stream: &mut GaussianStream, rows: usize, cols: usize, radius: f64) -> DMatrix<f64> {
    let dir = unit_matrix(stream, rows, cols);
    let r = radius * stream.uniform().powf(1.0 / (rows * cols) as f64);
    dir * r
}

/// Samples each matrix sensing region and checks its curvature or gradient
/// property under the population risk.
///
/// Proposals: `R1` from the ball around `U*`, `R2′` from neighbourhoods of
/// the analytic saddles (radius uniform in `[0, ρ]`), the other regions from
/// the Frobenius ball enclosing `‖UUᵀ‖_F ≤ (8/7)‖U*U*ᵀ‖_F` (`R3″` from a
/// larger ball).
pub fn verify_region_bounds_ms(truth: &SensingGroundTruth, cfg: &SamplerConfig) -> Result<BoundReport> {
    let (n, k) = (truth.dim(), truth.target_rank());
    let lk = truth.lambda_k();
    let th = MsRegionThresholds::new(truth);
    let pop = MsPopulation::new(truth.clone());
    let ustar = truth.canonical_minimizer().into_matrix();
    let saddles: Vec<DMatrix<f64>> = crate::critical::analytic_critical_points_ms(truth)
        .into_iter()
        .filter(|p| p.kind != crate::critical::CriticalKind::LocalMin)
        .map(|p| p.location)
        .collect();
    // ‖U‖_F² ≤ √k ‖UUᵀ‖_F
    let enclosing = ((k as f64).sqrt() * th.gram).sqrt();
    let saddle_radius = 0.05 * lk.sqrt();

    let member = |label: RegionLabel| {
        let truth = truth.clone();
        move |p: &DMatrix<f64>| -> Result<bool> {
            match FactorPoint::new(p.clone()) {
                Ok(u) => Ok(classify_region_ms(&truth, &u)?.contains(label)),
                Err(Error::RankDeficient { .. }) => Ok(false),
                Err(e) => Err(e),
            }
        }
    };
    let lambda_min = |p: &DMatrix<f64>| -> Result<f64> { Ok(spectral::min_eig_horizontal(&pop, &FactorPoint::new(p.clone())?)?.lambda_min) };
    let grad_norm = |p: &DMatrix<f64>| -> Result<f64> { Ok(risk::model_gradient(&pop, p)?.norm()) };

    let specs = [RegionSpec {
            region: RegionLabel::MsR1,
            property: "lambda_min",
            inequality: Inequality::AtLeast,
            bound: 0.19 * lk,
            propose: Box::new(|s: &mut GaussianStream| Some(&ustar + ball_matrix(s, n, k, th.r1_radius))),
            accept: Box::new(member(RegionLabel::MsR1)),
            measure: Box::new(lambda_min),
        },
        RegionSpec {
            region: RegionLabel::MsR2p,
            property: "lambda_min",
            inequality: Inequality::AtMost,
            bound: -0.06 * lk,
            propose: Box::new(|s: &mut GaussianStream| {
                if saddles.is_empty() {
                    return None;
                }
                let idx = ((s.uniform() * saddles.len() as f64) as usize).min(saddles.len() - 1);
                let r = saddle_radius * s.uniform();
                Some(&saddles[idx] + unit_matrix(s, n, k) * r)
            }),
            accept: Box::new(member(RegionLabel::MsR2p)),
            measure: Box::new(lambda_min),
        },
        RegionSpec {
            region: RegionLabel::MsR2pp,
            property: "grad_norm",
            inequality: Inequality::Exceeds,
            bound: lk.powf(1.5) / 80.0,
            propose: Box::new(|s: &mut GaussianStream| Some(ball_matrix(s, n, k, enclosing))),
            accept: Box::new(member(RegionLabel::MsR2pp)),
            measure: Box::new(grad_norm),
        },
        RegionSpec {
            region: RegionLabel::MsR3p,
            property: "grad_norm",
            inequality: Inequality::Exceeds,
            bound: lk.powf(1.5) / (60.0 * truth.kappa()),
            propose: Box::new(|s: &mut GaussianStream| Some(ball_matrix(s, n, k, enclosing))),
            accept: Box::new(member(RegionLabel::MsR3p)),
            measure: Box::new(grad_norm),
        },
        RegionSpec {
            region: RegionLabel::MsR3pp,
            property: "grad_norm",
            inequality: Inequality::Exceeds,
            bound: 5.0 / 84.0 * (k as f64).powf(0.25) * lk.powf(1.5),
            propose: Box::new(|s: &mut GaussianStream| Some(ball_matrix(s, n, k, 2.0 * enclosing))),
            accept: Box::new(member(RegionLabel::MsR3pp)),
            measure: Box::new(grad_norm),
        }];

    let checks = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            if spec.region == RegionLabel::MsR2p && saddles.is_empty() {
                Ok(skipped(spec.region, spec.property, spec.inequality, spec.bound))
            } else {
                run_region(spec, cfg, i as u64)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport {
        family: "matrix_sensing",
        config: *cfg,
        advisory: ms_advisory(truth),
        checks,
    })
}

/// Samples each phase retrieval region and checks its property under the
/// population risk. `R4` is sampled uniformly in `‖x‖ ≤ 1.5‖x*‖` minus the
/// other regions.
pub fn verify_region_bounds_pr(xstar: &DVector<f64>, cfg: &SamplerConfig) -> Result<BoundReport> {
    let pop = PrPopulation::new(xstar.clone())?;
    let n = xstar.len();
    let s = xstar.norm();
    let s2 = s * s;
    let directions = crate::critical::orthogonal_completion(xstar)?;

    let member = |label: RegionLabel| {
        move |p: &DMatrix<f64>| -> Result<bool> {
            Ok(classify_region_pr(xstar, &p.column(0).into_owned())?.contains(label))
        }
    };
    let lambda_min = |p: &DMatrix<f64>| -> Result<f64> { Ok(spectral::min_eig_euclidean(&pop, p)?.lambda_min) };
    let grad_norm = |p: &DMatrix<f64>| -> Result<f64> { Ok(pop.euclidean_grad(p)?.norm()) };
    let ball = move |st: &mut GaussianStream, r: f64| risk::column(&st.in_ball(n, r));

    let specs = vec![
        RegionSpec {
            region: RegionLabel::PrR1,
            property: "lambda_min",
            inequality: Inequality::AtMost,
            bound: -1.5 * s2,
            propose: Box::new(move |st: &mut GaussianStream| Some(ball(st, 0.5 * s))),
            accept: Box::new(member(RegionLabel::PrR1)),
            measure: Box::new(lambda_min),
        },
        RegionSpec {
            region: RegionLabel::PrR2,
            property: "lambda_min",
            inequality: Inequality::AtLeast,
            bound: 0.22 * s2,
            propose: Box::new(move |st: &mut GaussianStream| {
                let sign = if st.uniform() < 0.5 { 1.0 } else { -1.0 };
                Some(risk::column(xstar) * sign + ball(st, 0.1 * s))
            }),
            accept: Box::new(member(RegionLabel::PrR2)),
            measure: Box::new(lambda_min),
        },
        RegionSpec {
            region: RegionLabel::PrR3,
            property: "lambda_min",
            inequality: Inequality::AtMost,
            bound: -0.78 * s2,
            propose: Box::new(|st: &mut GaussianStream| {
                if directions.is_empty() {
                    return None;
                }
                // random unit w ⟂ x*
                let coeffs = st.unit_vector(directions.len());
                let w = directions
                    .iter()
                    .zip(coeffs.iter())
                    .fold(DVector::zeros(n), |acc, (d, c)| acc + d * *c);
                let sign = if st.uniform() < 0.5 { 1.0 } else { -1.0 };
                let centre = risk::column(&(w * (sign * s / 3f64.sqrt())));
                Some(centre + ball(st, 0.2 * s))
            }),
            accept: Box::new(member(RegionLabel::PrR3)),
            measure: Box::new(lambda_min),
        },
        RegionSpec {
            region: RegionLabel::PrR4,
            property: "grad_norm",
            inequality: Inequality::Exceeds,
            bound: 0.3963 * s2 * s,
            propose: Box::new(move |st: &mut GaussianStream| Some(ball(st, 1.5 * s))),
            accept: Box::new(member(RegionLabel::PrR4)),
            measure: Box::new(grad_norm),
        },
    ];

    let checks = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            if spec.region == RegionLabel::PrR3 && directions.is_empty() {
                Ok(skipped(spec.region, spec.property, spec.inequality, spec.bound))
            } else {
                run_region(spec, cfg, i as u64)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport {
        family: "phase_retrieval",
        config: *cfg,
        advisory: false,
        checks,
    })
}

// ---------------------------------------------------------------------------
// Assumptions
// ---------------------------------------------------------------------------

/// Shape of the ball `B(l)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BallKind {
    /// `‖x‖₂ ≤ l`.
    Vector,
    /// `‖UUᵀ‖_F ≤ l`.
    Factor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionConfig {
    pub epsilon: f64,
    pub eta: f64,
    pub radius: f64,
    pub ball: BallKind,
    pub n_samples: usize,
    pub seed: u64,
}

pub const SUPREMUM_CAVEAT: &str = "Monte-Carlo lower bound of supremum";

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub assumption: &'static str,
    pub passed: bool,
    pub estimate: f64,
    pub threshold: f64,
    pub caveat: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub epsilon: f64,
    pub eta: f64,
    pub ball_radius: f64,
    pub ball: BallKind,
    pub n_samples: usize,
    pub seed: u64,
    pub sup_grad_diff_est: f64,
    pub sup_hess_diff_est: f64,
    /// Samples whose population gradient is at most `ε`.
    pub samples_in_dbar: usize,
    /// Points of `D̄` with `|λ_min(hess g)| < η`.
    pub assumption1_violations: Vec<Vec<f64>>,
    pub verdicts: Vec<Verdict>,
}

impl AssumptionReport {
    pub fn verdict(&self, assumption: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.assumption == assumption)
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

/// Uniform draw from `B(l)`. Factor draws scale a Gaussian direction `G`
/// with `‖GGᵀ‖_F = 1` by `√l · u^{1/(Nk)}`.
pub fn sample_ball(stream: &mut GaussianStream, dims: (usize, usize), ball: BallKind, radius: f64) -> DMatrix<f64> {
    let (n, k) = dims;
    match ball {
        BallKind::Vector => ball_matrix(stream, n, k, radius),
        BallKind::Factor => {
            let g = stream.normal_matrix(n, k, 1.0);
            let gram = (&g * g.transpose()).norm();
            let c = radius.sqrt() * stream.uniform().powf(1.0 / (n * k) as f64);
            g * (c / gram.sqrt())
        }
    }
}

struct SampleStats {
    grad_diff: f64,
    hess_diff: f64,
    in_dbar: bool,
    violation: bool,
}

fn sample_stats(pop: &dyn RiskModel, emp: &dyn RiskModel, p: &DMatrix<f64>, cfg: &AssumptionConfig) -> Result<SampleStats> {
    let gp = risk::model_gradient(pop, p)?;
    let ge = risk::model_gradient(emp, p)?;
    let hp = spectral::model_hessian(pop, p)?;
    let he = spectral::model_hessian(emp, p)?;
    let (diff_eigs, _) = spectral::sorted_eigen(&he - &hp)?;
    let hess_diff = diff_eigs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let in_dbar = gp.norm() <= cfg.epsilon;
    let violation = in_dbar && {
        let (pop_eigs, _) = spectral::sorted_eigen(hp)?;
        pop_eigs[0].abs() < cfg.eta
    };
    Ok(SampleStats {
        grad_diff: (ge - gp).norm(),
        hess_diff,
        in_dbar,
        violation,
    })
}

/// Monte-Carlo estimates of the gradient and Hessian deviations over
/// `B(l)` and a sampled check of the degeneracy condition on `D̄`.
pub fn check_assumptions(pop: &dyn RiskModel, emp: &dyn RiskModel, cfg: &AssumptionConfig) -> Result<AssumptionReport> {
    for (name, v) in [("epsilon", cfg.epsilon), ("eta", cfg.eta), ("radius", cfg.radius)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
        }
    }
    if pop.dims() != emp.dims() || pop.geometry() != emp.geometry() {
        return Err(Error::DimensionMismatch {
            expected: format!("{:?} {:?}", pop.dims(), pop.geometry()),
            found: format!("{:?} {:?}", emp.dims(), emp.geometry()),
        });
    }
    let dims = pop.dims();
    let mut stream = GaussianStream::new(cfg.seed, "assumption-samples", 0);
    let mut points = Vec::with_capacity(cfg.n_samples);
    let mut attempts = 0;
    while points.len() < cfg.n_samples {
        attempts += 1;
        if attempts > STARVATION_RATIO * cfg.n_samples.max(1) {
            return Err(Error::SamplerStarved {
                region: "B(l)".into(),
                accepted: points.len(),
                proposed: attempts,
            });
        }
        let p = sample_ball(&mut stream, dims, cfg.ball, cfg.radius);
        if pop.geometry() == risk::Geometry::Quotient && FactorPoint::new(p.clone()).is_err() {
            continue;
        }
        points.push(p);
    }
    let stats = points
        .par_iter()
        .map(|p| sample_stats(pop, emp, p, cfg))
        .collect::<Result<Vec<_>>>()?;

    let sup_grad = stats.iter().fold(0.0f64, |m, s| m.max(s.grad_diff));
    let sup_hess = stats.iter().fold(0.0f64, |m, s| m.max(s.hess_diff));
    let samples_in_dbar = stats.iter().filter(|s| s.in_dbar).count();
    let violations: Vec<Vec<f64>> = stats
        .iter()
        .zip(&points)
        .filter(|(s, _)| s.violation)
        .map(|(_, p)| risk::row_major(p))
        .collect();
    let verdicts = vec![
        Verdict {
            assumption: "A1",
            passed: violations.is_empty(),
            estimate: violations.len() as f64,
            threshold: 0.0,
            caveat: SUPREMUM_CAVEAT,
        },
        Verdict {
            assumption: "A2",
            passed: sup_grad <= cfg.epsilon / 2.0,
            estimate: sup_grad,
            threshold: cfg.epsilon / 2.0,
            caveat: SUPREMUM_CAVEAT,
        },
        Verdict {
            assumption: "A3",
            passed: sup_hess <= cfg.eta / 2.0,
            estimate: sup_hess,
            threshold: cfg.eta / 2.0,
            caveat: SUPREMUM_CAVEAT,
        },
    ];
    Ok(AssumptionReport {
        epsilon: cfg.epsilon,
        eta: cfg.eta,
        ball_radius: cfg.radius,
        ball: cfg.ball,
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        sup_grad_diff_est: sup_grad,
        sup_hess_diff_est: sup_hess,
        samples_in_dbar,
        assumption1_violations: violations,
        verdicts,
    })
}

/// Default thresholds for phase retrieval: `ε = 0.3963‖x*‖³`, `η = 0.22‖x*‖²`,
/// `l = 1.1‖x*‖`.
pub fn pr_thresholds(xstar: &DVector<f64>) -> (f64, f64, f64) {
    let s = xstar.norm();
    (0.3963 * s.powi(3), 0.22 * s * s, 1.1 * s)
}

/// Default thresholds for matrix sensing: `ε = min{1/80, κ⁻¹/60} λ_k^{3/2}`,
/// `η = 0.06 λ_k`, `l = (8/7)‖U*U*ᵀ‖_F`.
pub fn ms_thresholds(truth: &SensingGroundTruth) -> (f64, f64, f64) {
    let lk = truth.lambda_k();
    let eps = (1.0f64 / 80.0).min(1.0 / (60.0 * truth.kappa())) * lk.powf(1.5);
    (eps, 0.06 * lk, 8.0 / 7.0 * truth.minimizer_gram_norm())
}

// ---------------------------------------------------------------------------
// RIP
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RipThreshold {
    pub epsilon_term: f64,
    pub constant_term: f64,
    pub eta_term: f64,
    pub value: f64,
}

/// `δ_{r+k}` bound under which the gradient and Hessian proximity hold:
/// the minimum of an `ε` term, `1/36` and an `η` term.
pub fn threshold_from_lemma(truth: &SensingGroundTruth, epsilon: f64, eta: f64) -> RipThreshold {
    let g = truth.minimizer_gram_norm();
    let x = truth.target_norm();
    let k = truth.target_rank() as f64;
    let c: f64 = 8.0 / 7.0;
    let epsilon_term = epsilon / (2.0 * c.sqrt() * k.powf(0.25) * (c * g + x) * g.sqrt());
    let constant_term = 1.0 / 36.0;
    let eta_term = eta / (2.0 * (16.0 / 7.0 * k.sqrt() * g + c * g + x));
    RipThreshold {
        epsilon_term,
        constant_term,
        eta_term,
        value: epsilon_term.min(constant_term).min(eta_term),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RipReport {
    pub rank_bound: usize,
    pub n_probes: usize,
    pub seed: u64,
    pub delta_est: f64,
    pub threshold_from_lemma: Option<RipThreshold>,
}

/// Largest relative deviation `|‖A(Z)‖² − ‖Z‖²| / ‖Z‖²` over random
/// symmetric probes `Z = GGᵀ − HHᵀ` of rank at most `rank_bound`; the split
/// between the positive and negative parts cycles over the probes.
pub fn estimate_rip(ensemble: &SensingEnsemble, rank_bound: usize, n_probes: usize, seed: u64) -> Result<RipReport> {
    let n = ensemble.dim();
    if rank_bound == 0 || rank_bound > n {
        return Err(Error::InvalidRank { rank: rank_bound, n });
    }
    let deviations = (0..n_probes)
        .into_par_iter()
        .map(|i| {
            let mut s = GaussianStream::new(seed, "rip-probe", i as u64);
            let pos = i % (rank_bound + 1);
            let g = s.normal_matrix(n, pos, 1.0);
            let h = s.normal_matrix(n, rank_bound - pos, 1.0);
            let z = &g * g.transpose() - &h * h.transpose();
            let z = &z / z.norm();
            (ensemble.apply(&z).norm_squared() - 1.0).abs()
        })
        .collect::<Vec<f64>>();
    Ok(RipReport {
        rank_bound,
        n_probes,
        seed,
        delta_est: deviations.into_iter().fold(0.0, f64::max),
        threshold_from_lemma: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> SensingGroundTruth {
        SensingGroundTruth::random(6, vec![1.5, 1.0, 1.0 / 15.0], 2, 4).unwrap()
    }

    #[test]
    fn ms_minimizer_is_r1() {
        let t = truth();
        let set = classify_region_ms(&t, &t.canonical_minimizer()).unwrap();
        assert_eq!(set.labels, BTreeSet::from([RegionLabel::MsR1]));
        assert!(!set.advisory);
    }

    #[test]
    fn ms_scaled_minimizer_is_r3pp() {
        let t = truth();
        let u = FactorPoint::new(t.canonical_minimizer().matrix() * 2.0).unwrap();
        assert!(classify_region_ms(&t, &u).unwrap().contains(RegionLabel::MsR3pp));
    }

    #[test]
    fn ms_saddle_is_r2p() {
        let t = truth();
        let u = FactorPoint::new(t.factor_for(&[0, 2])).unwrap();
        let set = classify_region_ms(&t, &u).unwrap();
        assert!(set.contains(RegionLabel::MsR2p));
        if let Witness::MatrixSensing { sigma_k, grad_norm, .. } = set.witness {
            assert!((sigma_k - (1.0f64 / 15.0).sqrt()).abs() < 1e-12);
            assert!(grad_norm < 1e-12);
        } else {
            panic!("wrong witness");
        }
    }

    #[test]
    fn ms_advisory_on_poor_separation() {
        let t = SensingGroundTruth::random(5, vec![1.0, 0.5, 0.2], 2, 0).unwrap();
        assert!(classify_region_ms(&t, &t.canonical_minimizer()).unwrap().advisory);
    }

    #[test]
    fn pr_examples() {
        let xs = DVector::from_vec(vec![1.0, 2.0, -0.5]);
        let zero = classify_region_pr(&xs, &DVector::zeros(3)).unwrap();
        assert!(zero.contains(RegionLabel::PrR1));
        let at = classify_region_pr(&xs, &xs).unwrap();
        assert_eq!(at.labels, BTreeSet::from([RegionLabel::PrR2]));
        let w = crate::critical::orthogonal_completion(&xs).unwrap()[0].clone();
        let saddle = &w * (xs.norm() / 3f64.sqrt());
        let set = classify_region_pr(&xs, &saddle).unwrap();
        assert_eq!(set.labels, BTreeSet::from([RegionLabel::PrR3]));
        assert!(matches!(classify_region_pr(&DVector::zeros(3), &xs), Err(Error::ZeroTruthSignal)));
    }

    #[test]
    fn saddle_distance_on_axis() {
        let xs = DVector::from_vec(vec![2.0, 0.0]);
        let d = distance_to_pr_saddles(&xs, &DVector::from_vec(vec![0.5, 0.0]));
        assert!((d - (0.25f64 + 4.0 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identical_models_have_zero_deviation() {
        let xs = DVector::from_vec(vec![1.0, -1.0]);
        let pop = PrPopulation::new(xs.clone()).unwrap();
        let (epsilon, eta, radius) = pr_thresholds(&xs);
        let cfg = AssumptionConfig {
            epsilon,
            eta,
            radius,
            ball: BallKind::Vector,
            n_samples: 200,
            seed: 3,
        };
        let rep = check_assumptions(&pop, &pop, &cfg).unwrap();
        assert_eq!(rep.sup_grad_diff_est, 0.0);
        assert_eq!(rep.sup_hess_diff_est, 0.0);
        assert!(rep.all_passed());
        assert!(rep.verdicts.iter().all(|v| v.caveat == SUPREMUM_CAVEAT));
    }

    #[test]
    fn assumption_config_rejects_nonpositive() {
        let xs = DVector::from_vec(vec![1.0, -1.0]);
        let pop = PrPopulation::new(xs).unwrap();
        let cfg = AssumptionConfig {
            epsilon: 0.0,
            eta: 1.0,
            radius: 1.0,
            ball: BallKind::Vector,
            n_samples: 10,
            seed: 0,
        };
        assert!(matches!(check_assumptions(&pop, &pop, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn factor_ball_samples_stay_inside() {
        let mut s = GaussianStream::new(1, "t", 0);
        for _ in 0..100 {
            let u = sample_ball(&mut s, (5, 2), BallKind::Factor, 2.5);
            assert!((&u * u.transpose()).norm() <= 2.5 + 1e-12);
        }
    }

    #[test]
    fn rip_single_matrix_by_hand() {
        // one measurement A_1 = Z/‖Z‖ gives ‖A(Z)‖² = ‖Z‖² for that Z
        let z = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, -3.0]);
        let zn: DMatrix<f64> = &z / z.norm();
        let target = DMatrix::identity(2, 2);
        let ens = SensingEnsemble::from_raw(vec![zn.clone()], &target).unwrap();
        assert!((ens.apply(&zn).norm_squared() - 1.0).abs() < 1e-14);
        let rep = estimate_rip(&ens, 2, 50, 0).unwrap();
        assert!(rep.delta_est >= 0.0 && rep.delta_est <= 1.0 + 1e-12);
        assert!(matches!(estimate_rip(&ens, 3, 1, 0), Err(Error::InvalidRank { .. })));
    }

    #[test]
    fn lemma_threshold_contains_constant() {
        let t = truth();
        let th = threshold_from_lemma(&t, 1e3, 1e3);
        assert_eq!(th.value, 1.0 / 36.0);
        let th = threshold_from_lemma(&t, 1e-3, 1e3);
        assert_eq!(th.value, th.epsilon_term);
    }
}
