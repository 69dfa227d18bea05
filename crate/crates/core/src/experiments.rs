//! Experiment configuration, seeded runs and CSV/JSON output.
//!
//! Every output file starts with its provenance: artifact version, master
//! seed and the SHA-256 of the effective configuration (sorted `key=value`
//! lines). CSV files carry it as `#` comment lines above the header; JSON
//! files as top-level fields. Floats are written with 17 significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::critical::{self, CorrespondenceReport, CriticalKind, CriticalPointRecord, NewtonConfig, SearchConfig, Seeds};
use crate::error::{Error, Result};
use crate::landscape::{self, AssumptionConfig, BallKind, SamplerConfig};
use crate::risk::{self, Geometry, MsEmpirical, MsPopulation, PhaseProblem, PrEmpirical, PrPopulation, RiskModel, SensingEnsemble, SensingGroundTruth};
use crate::rng::derive_seed;
use crate::ARTIFACT_VERSION;

pub const SEED_ENV: &str = "LANDSCAPE_LAB_SEED";
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Pr1d,
    Pr2d,
    Ms2dRank1,
    MsRank2Dist,
    Assumptions,
    RegionsMs,
    RegionsPr,
    Rip,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Pr1d,
        Experiment::Pr2d,
        Experiment::Ms2dRank1,
        Experiment::MsRank2Dist,
        Experiment::Assumptions,
        Experiment::RegionsMs,
        Experiment::RegionsPr,
        Experiment::Rip,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Pr1d => "pr1d",
            Experiment::Pr2d => "pr2d",
            Experiment::Ms2dRank1 => "ms2d_rank1",
            Experiment::MsRank2Dist => "ms_rank2_dist",
            Experiment::Assumptions => "assumptions",
            Experiment::RegionsMs => "regions_ms",
            Experiment::RegionsPr => "regions_pr",
            Experiment::Rip => "rip",
        }
    }

    pub fn is_verification(self) -> bool {
        matches!(self, Experiment::Assumptions | Experiment::RegionsMs | Experiment::RegionsPr | Experiment::Rip)
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Pr,
    Ms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        (0..self.points)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    /// `min:max:points`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidConfig(format!("grid must be min:max:points, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let grid = GridSpec {
            min: parts[0].trim().parse().map_err(|_| bad())?,
            max: parts[1].trim().parse().map_err(|_| bad())?,
            points: parts[2].trim().parse().map_err(|_| bad())?,
        };
        if grid.points < 2 {
            return Err(Error::InvalidConfig("grid needs at least 2 points".into()));
        }
        if !(grid.min < grid.max) {
            return Err(Error::InvalidConfig(format!("grid min {} must be below max {}", grid.min, grid.max)));
        }
        Ok(grid)
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.min, self.max, self.points)
    }
}

pub const CONFIG_KEYS: [&str; 13] = [
    "n", "k", "r", "m", "trials", "seed", "grid", "samples", "format", "out", "family", "eigvals", "xstar",
];

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub m: Vec<usize>,
    pub trials: usize,
    pub master_seed: u64,
    pub grid: GridSpec,
    /// Samples per region, Monte-Carlo samples, or RIP probes.
    pub samples: usize,
    pub family: Family,
    /// Eigenvalues of the matrix sensing target (descending).
    pub eigvals: Vec<f64>,
    /// Phase retrieval signal, or the rank-1 sensing factor.
    pub xstar: Vec<f64>,
    pub format: OutputFormat,
    pub out: PathBuf,
}

/// Reads a flat `key = value` file; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", no + 1)))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {s:?}")))
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn alternating_signal(n: usize) -> Vec<f64> {
    (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()
}

impl ExperimentConfig {
    /// Defaults of `experiment`, overridden by `file` entries, then by
    /// `flags`. The master seed falls back to `env_seed` when neither sets
    /// it.
    pub fn resolve(
        experiment: Experiment,
        file: &BTreeMap<String, String>,
        flags: &BTreeMap<String, String>,
        env_seed: Option<&str>,
    ) -> Result<Self> {
        let mut kv = file.clone();
        kv.extend(flags.iter().map(|(k, v)| (k.clone(), v.clone())));
        if let Some(bad) = kv.keys().find(|k| !CONFIG_KEYS.contains(&k.as_str())) {
            return Err(Error::InvalidConfig(format!("unknown key {bad:?}")));
        }
        let get = |key: &str| kv.get(key).map(String::as_str);

        let family = match (experiment, get("family")) {
            (Experiment::Pr1d | Experiment::Pr2d | Experiment::RegionsPr, _) => Family::Pr,
            (Experiment::Ms2dRank1 | Experiment::MsRank2Dist | Experiment::RegionsMs | Experiment::Rip, _) => Family::Ms,
            (Experiment::Assumptions, None | Some("pr")) => Family::Pr,
            (Experiment::Assumptions, Some("ms")) => Family::Ms,
            (_, Some(other)) => return Err(Error::InvalidConfig(format!("family must be pr or ms, got {other:?}"))),
        };

        let xstar_given: Option<Vec<f64>> = get("xstar").map(|v| parse_list("xstar", v)).transpose()?;
        let (dn, dk, dr) = match experiment {
            Experiment::Pr1d => (1, 1, 1),
            Experiment::Pr2d | Experiment::Ms2dRank1 => (2, 1, 1),
            Experiment::MsRank2Dist | Experiment::RegionsMs => (8, 2, 3),
            Experiment::RegionsPr => (3, 1, 1),
            Experiment::Rip => (4, 2, 3),
            Experiment::Assumptions => match family {
                Family::Pr => (2, 1, 1),
                Family::Ms => (4, 2, 3),
            },
        };
        let n = match (get("n"), &xstar_given) {
            (Some(v), _) => parse_one("n", v)?,
            (None, Some(x)) => x.len(),
            (None, None) => dn,
        };
        let forced_pr = experiment == Experiment::Pr1d && n != 1;
        let forced_2d = matches!(experiment, Experiment::Pr2d | Experiment::Ms2dRank1) && n != 2;
        if forced_pr || forced_2d {
            return Err(Error::InvalidConfig(format!("{} requires n = {dn}", experiment.as_str())));
        }
        let rank1 = family == Family::Pr || experiment == Experiment::Ms2dRank1;
        let k: usize = get("k").map(|v| parse_one("k", v)).transpose()?.unwrap_or(dk);
        let r: usize = get("r").map(|v| parse_one("r", v)).transpose()?.unwrap_or(dr);
        if rank1 && (k != 1 || r != 1) {
            return Err(Error::InvalidConfig(format!("{} is rank one (k = r = 1)", experiment.as_str())));
        }
        if n == 0 || k == 0 || r == 0 || k > r || r > n {
            return Err(Error::InvalidConfig(format!("need 1 ≤ k ≤ r ≤ n, got n={n} k={k} r={r}")));
        }

        let default_m = match experiment {
            Experiment::Pr1d => vec![30],
            Experiment::Pr2d | Experiment::Ms2dRank1 => vec![3, 10],
            Experiment::MsRank2Dist => vec![50, 100, 200, 400],
            Experiment::Assumptions => vec![50, 200, 800],
            Experiment::Rip => vec![2000],
            Experiment::RegionsMs | Experiment::RegionsPr => vec![],
        };
        let m = get("m").map(|v| parse_list("m", v)).transpose()?.unwrap_or(default_m);
        if m.contains(&0) {
            return Err(Error::InvalidConfig("M must be at least 1".into()));
        }
        let trials: usize = get("trials").map(|v| parse_one("trials", v)).transpose()?.unwrap_or(match experiment {
            Experiment::MsRank2Dist => 20,
            _ => 1,
        });
        if trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        let master_seed: u64 = match get("seed").or(env_seed) {
            Some(v) => parse_one("seed", v)?,
            None => DEFAULT_SEED,
        };
        let grid: GridSpec = get("grid").map(str::parse).transpose()?.unwrap_or(match experiment {
            Experiment::Pr1d => GridSpec { min: -2.0, max: 2.0, points: 401 },
            _ => GridSpec { min: -2.0, max: 2.0, points: 81 },
        });
        let samples: usize = get("samples").map(|v| parse_one("samples", v)).transpose()?.unwrap_or(match experiment {
            Experiment::RegionsMs | Experiment::RegionsPr => 500,
            _ => 2000,
        });
        if samples == 0 {
            return Err(Error::InvalidConfig("samples must be at least 1".into()));
        }
        let format = match get("format") {
            None if experiment.is_verification() => OutputFormat::Json,
            None | Some("csv") => OutputFormat::Csv,
            Some("json") => OutputFormat::Json,
            Some(other) => return Err(Error::InvalidConfig(format!("format must be csv or json, got {other:?}"))),
        };
        if experiment.is_verification() && format == OutputFormat::Csv {
            return Err(Error::InvalidConfig("verification suites write JSON only".into()));
        }
        let xstar = xstar_given.unwrap_or_else(|| alternating_signal(n));
        if xstar.len() != n {
            return Err(Error::InvalidConfig(format!("xstar has {} entries, n = {n}", xstar.len())));
        }
        let eigvals: Vec<f64> = match get("eigvals") {
            Some(v) => parse_list("eigvals", v)?,
            None if experiment == Experiment::MsRank2Dist => vec![1.0; r],
            None => (0..r).map(|i| if i < k { 1.0 } else { 1.0 / 12.0 }).collect(),
        };
        if eigvals.len() != r {
            return Err(Error::InvalidConfig(format!("eigvals has {} entries, r = {r}", eigvals.len())));
        }
        let out = PathBuf::from(get("out").unwrap_or("results"));

        Ok(Self {
            experiment,
            n,
            k,
            r,
            m,
            trials,
            master_seed,
            grid,
            samples,
            family,
            eigvals,
            xstar,
            format,
            out,
        })
    }

    /// Defaults only (seed from the argument).
    pub fn defaults(experiment: Experiment, seed: u64) -> Result<Self> {
        let flags = BTreeMap::from([("seed".to_string(), seed.to_string())]);
        Self::resolve(experiment, &BTreeMap::new(), &flags, None)
    }

    /// Effective configuration as sorted `key=value` entries. The output
    /// directory is excluded: it does not affect results.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("experiment", self.experiment.as_str().to_string()),
            ("n", self.n.to_string()),
            ("k", self.k.to_string()),
            ("r", self.r.to_string()),
            ("m", join(&self.m)),
            ("trials", self.trials.to_string()),
            ("seed", self.master_seed.to_string()),
            ("grid", self.grid.to_string()),
            ("samples", self.samples.to_string()),
            ("family", format!("{:?}", self.family).to_lowercase()),
            ("eigvals", join(&self.eigvals)),
            ("xstar", join(&self.xstar)),
            ("format", format!("{:?}", self.format).to_lowercase()),
        ])
    }

    /// Hex SHA-256 of the `key=value\n` lines of [`Self::entries`].
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn xstar_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.xstar.clone())
    }

    /// Matrix sensing truth: identity eigenvectors for `ms_rank2_dist`,
    /// `x*x*ᵀ` for `ms2d_rank1`, seeded random eigenvectors otherwise.
    pub fn sensing_truth(&self) -> Result<SensingGroundTruth> {
        match self.experiment {
            Experiment::MsRank2Dist => SensingGroundTruth::with_identity_columns(self.n, self.eigvals.clone(), self.k),
            Experiment::Ms2dRank1 => {
                let x = self.xstar_vector();
                let norm = x.norm();
                if norm == 0.0 {
                    return Err(Error::ZeroTruthSignal);
                }
                SensingGroundTruth::new(risk::column(&(x / norm)), vec![norm * norm], 1)
            }
            _ => SensingGroundTruth::random(self.n, self.eigvals.clone(), self.k, derive_seed(self.master_seed, "truth", 0)),
        }
    }
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_preamble(cfg: &ExperimentConfig, extra: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# version={ARTIFACT_VERSION}");
    let _ = writeln!(s, "# experiment={}", cfg.experiment.as_str());
    let _ = writeln!(s, "# master_seed={}", cfg.master_seed);
    let _ = writeln!(s, "# config_hash={}", cfg.config_hash());
    for line in extra {
        let _ = writeln!(s, "# {line}");
    }
    s
}

#[derive(Serialize)]
struct JsonEnvelope<'a, T: Serialize> {
    version: &'static str,
    experiment: &'static str,
    master_seed: u64,
    config_hash: String,
    config: BTreeMap<&'static str, String>,
    #[serde(flatten)]
    body: &'a T,
}

pub fn to_json<T: Serialize>(cfg: &ExperimentConfig, body: &T) -> Result<String> {
    let env = JsonEnvelope {
        version: ARTIFACT_VERSION,
        experiment: cfg.experiment.as_str(),
        master_seed: cfg.master_seed,
        config_hash: cfg.config_hash(),
        config: cfg.entries(),
        body,
    };
    let mut s = serde_json::to_string_pretty(&env)?;
    s.push('\n');
    Ok(s)
}

/// A file produced by a run, before it is written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFile {
    pub name: String,
    pub contents: String,
}

// ---------------------------------------------------------------------------
// pr1d
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pr1dRow {
    pub x: f64,
    pub g: f64,
    pub f: f64,
    pub dg: f64,
    pub df: f64,
    pub d2g: f64,
    pub d2f: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Pr1dTable {
    pub xstar: f64,
    pub m: usize,
    pub problem_seed: u64,
    pub epsilon: f64,
    /// Maximal runs of grid points with `|g′(x)| ≤ ε`.
    pub small_gradient_intervals: Vec<(f64, f64)>,
    pub rows: Vec<Pr1dRow>,
}

fn scalar_eval(model: &dyn RiskModel, x: f64) -> Result<(f64, f64, f64)> {
    let p = DMatrix::from_element(1, 1, x);
    let one = DMatrix::from_element(1, 1, 1.0);
    Ok((
        model.value(&p)?,
        model.euclidean_grad(&p)?[(0, 0)],
        model.hess_vec(&p, &one)?[(0, 0)],
    ))
}

/// Population and empirical phase retrieval risk with `N = 1` over the grid.
pub fn run_pr1d(cfg: &ExperimentConfig) -> Result<Pr1dTable> {
    let xstar = cfg.xstar_vector();
    let m = *cfg.m.first().ok_or_else(|| Error::InvalidConfig("pr1d needs one M".into()))?;
    let problem_seed = derive_seed(cfg.master_seed, "pr1d", m as u64);
    let pop = PrPopulation::new(xstar.clone())?;
    let emp = PrEmpirical::new(PhaseProblem::generate(&xstar, m, problem_seed)?)?;
    let (epsilon, _, _) = landscape::pr_thresholds(&xstar);
    let rows = cfg
        .grid
        .values()
        .into_iter()
        .map(|x| {
            let (g, dg, d2g) = scalar_eval(&pop, x)?;
            let (f, df, d2f) = scalar_eval(&emp, x)?;
            Ok(Pr1dRow { x, g, f, dg, df, d2g, d2f })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut intervals = Vec::new();
    let mut open: Option<f64> = None;
    for (i, row) in rows.iter().enumerate() {
        let small = row.dg.abs() <= epsilon;
        match (small, open) {
            (true, None) => open = Some(row.x),
            (false, Some(start)) => {
                intervals.push((start, rows[i - 1].x));
                open = None;
            }
            _ => {}
        }
    }
    if let (Some(start), Some(last)) = (open, rows.last()) {
        intervals.push((start, last.x));
    }
    Ok(Pr1dTable {
        xstar: xstar[0],
        m,
        problem_seed,
        epsilon,
        small_gradient_intervals: intervals,
        rows,
    })
}

pub fn pr1d_files(cfg: &ExperimentConfig, t: &Pr1dTable) -> Result<Vec<OutputFile>> {
    let contents = match cfg.format {
        OutputFormat::Json => to_json(cfg, t)?,
        OutputFormat::Csv => {
            let mut extra = vec![format!("epsilon={}", fmt_float(t.epsilon))];
            for (a, b) in &t.small_gradient_intervals {
                extra.push(format!("small_gradient_interval={}:{}", fmt_float(*a), fmt_float(*b)));
            }
            let mut s = csv_preamble(cfg, &extra);
            s.push_str("x,g,f,dg,df,d2g,d2f\n");
            for r in &t.rows {
                let vals = [r.x, r.g, r.f, r.dg, r.df, r.d2g, r.d2f];
                s.push_str(&vals.iter().map(|v| fmt_float(*v)).collect::<Vec<_>>().join(","));
                s.push('\n');
            }
            s
        }
    };
    Ok(vec![OutputFile {
        name: format!("pr1d.{}", ext(cfg.format)),
        contents,
    }])
}

fn ext(f: OutputFormat) -> &'static str {
    match f {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    }
}

// ---------------------------------------------------------------------------
// 2D landscapes
// ---------------------------------------------------------------------------

/// Grid spacing 0.1 over `[−2, 2]²`.
pub const SEED_GRID: Seeds = Seeds::Grid {
    min: -2.0,
    max: 2.0,
    points: 41,
};

#[derive(Debug, Clone, Serialize)]
pub struct Landscape2d {
    /// `"population"` or `"m<M>"`.
    pub label: String,
    pub m: Option<usize>,
    pub problem_seed: Option<u64>,
    /// `(x1, x2, value)` over the contour grid.
    pub grid: Vec<[f64; 3]>,
    pub points: Vec<CriticalPointRecord>,
    pub failed_seeds: usize,
    /// Empirical landscapes only: matching of local minima to the
    /// population's.
    pub correspondence: Option<CorrespondenceReport>,
}

impl Landscape2d {
    pub fn minima(&self) -> Vec<DMatrix<f64>> {
        self.points
            .iter()
            .filter(|p| p.kind == CriticalKind::LocalMin)
            .map(|p| p.location.clone())
            .collect()
    }

    pub fn count(&self, kind: CriticalKind) -> usize {
        self.points.iter().filter(|p| p.kind == kind).count()
    }
}

fn landscape_of(cfg: &ExperimentConfig, model: &dyn RiskModel, label: String, m: Option<usize>, problem_seed: Option<u64>) -> Result<Landscape2d> {
    let axis = cfg.grid.values();
    let mut grid = Vec::with_capacity(axis.len() * axis.len());
    for &x1 in &axis {
        for &x2 in &axis {
            let v = model.value(&DMatrix::from_column_slice(2, 1, &[x1, x2]))?;
            grid.push([x1, x2, v]);
        }
    }
    let search = critical::find_critical_points(
        model,
        &SearchConfig {
            seeds: SEED_GRID,
            newton: NewtonConfig::default(),
        },
    )?;
    Ok(Landscape2d {
        label,
        m,
        problem_seed,
        grid,
        points: search.records,
        failed_seeds: search.failures.len(),
        correspondence: None,
    })
}

/// Population landscape followed by one empirical realization per `M`
/// (pr2d: phase retrieval; ms2d_rank1: rank-one matrix sensing).
pub fn run_2d_landscape(cfg: &ExperimentConfig) -> Result<Vec<Landscape2d>> {
    let tag = cfg.experiment.as_str();
    let (pop, eps, eta): (Box<dyn RiskModel>, f64, f64) = match cfg.experiment {
        Experiment::Pr2d => {
            let (e, h, _) = landscape::pr_thresholds(&cfg.xstar_vector());
            (Box::new(PrPopulation::new(cfg.xstar_vector())?), e, h)
        }
        Experiment::Ms2dRank1 => {
            let truth = cfg.sensing_truth()?;
            let (e, h, _) = landscape::ms_thresholds(&truth);
            (Box::new(MsPopulation::new(truth)), e, h)
        }
        other => return Err(Error::InvalidConfig(format!("{} is not a 2D landscape", other.as_str()))),
    };
    let population = landscape_of(cfg, pop.as_ref(), "population".into(), None, None)?;
    let pop_minima = population.minima();
    let mut out = vec![population];
    for &m in &cfg.m {
        let seed = derive_seed(cfg.master_seed, tag, m as u64);
        let emp: Box<dyn RiskModel> = match cfg.experiment {
            Experiment::Pr2d => Box::new(PrEmpirical::new(PhaseProblem::generate(&cfg.xstar_vector(), m, seed)?)?),
            _ => {
                let truth = cfg.sensing_truth()?;
                let ens = SensingEnsemble::generate(&truth, m, seed)?;
                Box::new(MsEmpirical::new(truth, ens)?)
            }
        };
        let mut l = landscape_of(cfg, emp.as_ref(), format!("m{m}"), Some(m), Some(seed))?;
        l.correspondence = Some(critical::match_correspondence(
            &pop_minima,
            &l.minima(),
            Geometry::Euclidean,
            eps,
            eta,
        ));
        out.push(l);
    }
    Ok(out)
}

pub fn landscape_files(cfg: &ExperimentConfig, ls: &[Landscape2d]) -> Result<Vec<OutputFile>> {
    let tag = cfg.experiment.as_str();
    if cfg.format == OutputFormat::Json {
        #[derive(Serialize)]
        struct Body<'a> {
            landscapes: &'a [Landscape2d],
        }
        return Ok(vec![OutputFile {
            name: format!("{tag}.json"),
            contents: to_json(cfg, &Body { landscapes: ls })?,
        }]);
    }
    let mut files = Vec::new();
    for l in ls {
        let mut extra = vec![format!("landscape={}", l.label)];
        if let Some(seed) = l.problem_seed {
            extra.push(format!("problem_seed={seed}"));
        }
        let mut grid = csv_preamble(cfg, &extra);
        grid.push_str("x1,x2,value\n");
        for [a, b, v] in &l.grid {
            let _ = writeln!(grid, "{},{},{}", fmt_float(*a), fmt_float(*b), fmt_float(*v));
        }
        files.push(OutputFile {
            name: format!("{tag}_{}_grid.csv", l.label),
            contents: grid,
        });

        extra.push(format!("failed_seeds={}", l.failed_seeds));
        if let Some(c) = &l.correspondence {
            extra.push(format!(
                "correspondence pairs={} unmatched_population={} spurious={} heuristic_bound={}",
                c.pairs.len(),
                c.unmatched_population.len(),
                c.unmatched_empirical.len(),
                fmt_float(c.heuristic_bound)
            ));
        }
        let mut pts = csv_preamble(cfg, &extra);
        pts.push_str("x1,x2,grad_norm,lambda_min,kind\n");
        for p in &l.points {
            let c = p.coords();
            let _ = writeln!(
                pts,
                "{},{},{},{},{}",
                fmt_float(c[0]),
                fmt_float(c[1]),
                fmt_float(p.grad_norm),
                fmt_float(p.lambda_min),
                p.kind.as_str()
            );
        }
        files.push(OutputFile {
            name: format!("{tag}_{}_points.csv", l.label),
            contents: pts,
        });
    }
    Ok(files)
}

// ---------------------------------------------------------------------------
// Rank-2 distance sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub distance: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceRow {
    pub m: usize,
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub mean_dist: f64,
    pub std_dist: f64,
    pub trials: Vec<TrialOutcome>,
}

/// One trial: fresh ensemble, local minimization of the empirical risk from
/// the canonical population minimizer, distance to the population minima.
pub fn distance_trial(truth: &SensingGroundTruth, m: usize, seed: u64) -> Result<f64> {
    let ens = SensingEnsemble::generate(truth, m, seed)?;
    let emp = MsEmpirical::new(truth.clone(), ens)?;
    let start = truth.canonical_minimizer().into_matrix();
    let rec = critical::minimize(&emp, &start, &NewtonConfig::default())?;
    truth.distance_to_global_minima(&rec.location)
}

pub fn trial_seed(master: u64, m: usize, trial: usize) -> u64 {
    derive_seed(master, &format!("ms_rank2_dist/m{m}"), trial as u64)
}

pub fn run_ms_rank2_distance(cfg: &ExperimentConfig) -> Result<Vec<DistanceRow>> {
    let truth = cfg.sensing_truth()?;
    cfg.m
        .iter()
        .map(|&m| {
            let trials: Vec<TrialOutcome> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = trial_seed(cfg.master_seed, m, t);
                    match distance_trial(&truth, m, seed) {
                        Ok(d) => TrialOutcome { trial: t, seed, distance: Some(d), error: None },
                        Err(e) => TrialOutcome { trial: t, seed, distance: None, error: Some(e.to_string()) },
                    }
                })
                .collect();
            let ds: Vec<f64> = trials.iter().filter_map(|t| t.distance).collect();
            if ds.iter().any(|d| !d.is_finite()) {
                return Err(Error::NonFiniteEntry("trial distance".into()));
            }
            let n = ds.len();
            let mean = if n > 0 { ds.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let std = if n > 1 {
                (ds.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            Ok(DistanceRow {
                m,
                trials_ok: n,
                trials_failed: cfg.trials - n,
                mean_dist: mean,
                std_dist: std,
                trials,
            })
        })
        .collect()
}

pub fn distance_files(cfg: &ExperimentConfig, rows: &[DistanceRow]) -> Result<Vec<OutputFile>> {
    let contents = match cfg.format {
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Body<'a> {
                rows: &'a [DistanceRow],
            }
            to_json(cfg, &Body { rows })?
        }
        OutputFormat::Csv => {
            let failed: usize = rows.iter().map(|r| r.trials_failed).sum();
            let mut s = csv_preamble(cfg, &[format!("trials_failed={failed}")]);
            s.push_str("M,trials_ok,mean_dist,std_dist\n");
            for r in rows {
                let _ = writeln!(s, "{},{},{},{}", r.m, r.trials_ok, fmt_float(r.mean_dist), fmt_float(r.std_dist));
            }
            s
        }
    };
    Ok(vec![OutputFile {
        name: format!("ms_rank2_dist.{}", ext(cfg.format)),
        contents,
    }])
}

// ---------------------------------------------------------------------------
// Verification suites
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RipOutcome {
    pub m: usize,
    pub ensemble_seed: u64,
    pub passed: bool,
    pub report: landscape::RipReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionOutcome {
    pub m: usize,
    pub problem_seed: u64,
    pub report: landscape::AssumptionReport,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "suite", content = "reports", rename_all = "snake_case")]
pub enum SuiteReports {
    RegionsPr(landscape::BoundReport),
    RegionsMs(landscape::BoundReport),
    Assumptions(Vec<AssumptionOutcome>),
    Rip(Vec<RipOutcome>),
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationOutcome {
    pub passed: bool,
    #[serde(flatten)]
    pub reports: SuiteReports,
}

/// Runs a verification suite; `passed` is true iff every verdict passes.
pub fn run_verification(cfg: &ExperimentConfig) -> Result<VerificationOutcome> {
    let sampler = SamplerConfig {
        samples_per_region: cfg.samples,
        seed: derive_seed(cfg.master_seed, cfg.experiment.as_str(), 0),
    };
    let reports = match cfg.experiment {
        Experiment::RegionsPr => SuiteReports::RegionsPr(landscape::verify_region_bounds_pr(&cfg.xstar_vector(), &sampler)?),
        Experiment::RegionsMs => SuiteReports::RegionsMs(landscape::verify_region_bounds_ms(&cfg.sensing_truth()?, &sampler)?),
        Experiment::Assumptions => {
            let mut outcomes = Vec::new();
            for &m in &cfg.m {
                let seed = derive_seed(cfg.master_seed, "assumptions", m as u64);
                let sample_seed = derive_seed(cfg.master_seed, "assumption-samples", m as u64);
                let report = match cfg.family {
                    Family::Pr => {
                        let xs = cfg.xstar_vector();
                        let (epsilon, eta, radius) = landscape::pr_thresholds(&xs);
                        let pop = PrPopulation::new(xs.clone())?;
                        let emp = PrEmpirical::new(PhaseProblem::generate(&xs, m, seed)?)?;
                        let ac = AssumptionConfig { epsilon, eta, radius, ball: BallKind::Vector, n_samples: cfg.samples, seed: sample_seed };
                        landscape::check_assumptions(&pop, &emp, &ac)?
                    }
                    Family::Ms => {
                        let truth = cfg.sensing_truth()?;
                        let (epsilon, eta, radius) = landscape::ms_thresholds(&truth);
                        let pop = MsPopulation::new(truth.clone());
                        let emp = MsEmpirical::new(truth.clone(), SensingEnsemble::generate(&truth, m, seed)?)?;
                        let ac = AssumptionConfig { epsilon, eta, radius, ball: BallKind::Factor, n_samples: cfg.samples, seed: sample_seed };
                        landscape::check_assumptions(&pop, &emp, &ac)?
                    }
                };
                outcomes.push(AssumptionOutcome { m, problem_seed: seed, report });
            }
            SuiteReports::Assumptions(outcomes)
        }
        Experiment::Rip => {
            let truth = cfg.sensing_truth()?;
            let (epsilon, eta, _) = landscape::ms_thresholds(&truth);
            let threshold = landscape::threshold_from_lemma(&truth, epsilon, eta);
            // rank-(r+k) symmetric N×N matrices are rank ≤ N
            let rank = (cfg.r + cfg.k).min(cfg.n);
            let mut outcomes = Vec::new();
            for &m in &cfg.m {
                let seed = derive_seed(cfg.master_seed, "rip", m as u64);
                let ens = SensingEnsemble::generate(&truth, m, seed)?;
                let mut report = landscape::estimate_rip(&ens, rank, cfg.samples, derive_seed(cfg.master_seed, "rip-probes", m as u64))?;
                report.threshold_from_lemma = Some(threshold);
                outcomes.push(RipOutcome {
                    m,
                    ensemble_seed: seed,
                    passed: report.delta_est <= threshold.value,
                    report,
                });
            }
            SuiteReports::Rip(outcomes)
        }
        other => return Err(Error::InvalidConfig(format!("{} is not a verification suite", other.as_str()))),
    };
    let passed = match &reports {
        SuiteReports::RegionsPr(r) | SuiteReports::RegionsMs(r) => r.passed(),
        SuiteReports::Assumptions(v) => v.iter().all(|o| o.report.all_passed()),
        SuiteReports::Rip(v) => v.iter().all(|o| o.passed),
    };
    Ok(VerificationOutcome { passed, reports })
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    /// `Some(false)` when a verification suite reported a failing verdict.
    pub verification_passed: Option<bool>,
}

/// Runs the configured experiment and returns its files (not yet written).
pub fn produce(cfg: &ExperimentConfig) -> Result<(Vec<OutputFile>, Option<bool>)> {
    match cfg.experiment {
        Experiment::Pr1d => Ok((pr1d_files(cfg, &run_pr1d(cfg)?)?, None)),
        Experiment::Pr2d | Experiment::Ms2dRank1 => Ok((landscape_files(cfg, &run_2d_landscape(cfg)?)?, None)),
        Experiment::MsRank2Dist => Ok((distance_files(cfg, &run_ms_rank2_distance(cfg)?)?, None)),
        _ => {
            let outcome = run_verification(cfg)?;
            let file = OutputFile {
                name: format!("{}.json", cfg.experiment.as_str()),
                contents: to_json(cfg, &outcome)?,
            };
            Ok((vec![file], Some(outcome.passed)))
        }
    }
}

pub fn write_files(dir: &Path, files: &[OutputFile]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    files
        .iter()
        .map(|f| {
            let path = dir.join(&f.name);
            std::fs::write(&path, &f.contents)?;
            Ok(path)
        })
        .collect()
}

pub fn execute(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let (files, verification_passed) = produce(cfg)?;
    Ok(RunSummary {
        files: write_files(&cfg.out, &files)?,
        verification_passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn grid_parsing() {
        let g: GridSpec = "-2:2:41".parse().unwrap();
        assert_eq!(g, GridSpec { min: -2.0, max: 2.0, points: 41 });
        assert_eq!(g.values()[20], 0.0);
        assert!("0:1:1".parse::<GridSpec>().is_err());
        assert!("1:0:5".parse::<GridSpec>().is_err());
        assert!("0:1".parse::<GridSpec>().is_err());
    }

    #[test]
    fn config_file_and_flag_precedence() {
        let file = parse_config_file("# comment\nm = 5, 7\ntrials=3\nseed = 9 # inline\n").unwrap();
        let cfg = ExperimentConfig::resolve(Experiment::MsRank2Dist, &file, &flags(&[("trials", "4")]), Some("77")).unwrap();
        assert_eq!(cfg.m, vec![5, 7]);
        assert_eq!(cfg.trials, 4);
        assert_eq!(cfg.master_seed, 9);
        let cfg = ExperimentConfig::resolve(Experiment::MsRank2Dist, &BTreeMap::new(), &BTreeMap::new(), Some("77")).unwrap();
        assert_eq!(cfg.master_seed, 77);
        assert_eq!((cfg.n, cfg.k, cfg.r), (8, 2, 3));
        assert_eq!(cfg.eigvals, vec![1.0; 3]);
    }

    #[test]
    fn invalid_configs() {
        let none = BTreeMap::new();
        for (exp, pairs) in [
            (Experiment::Pr1d, vec![("n", "2")]),
            (Experiment::MsRank2Dist, vec![("trials", "0")]),
            (Experiment::MsRank2Dist, vec![("m", "0")]),
            (Experiment::Pr2d, vec![("grid", "0:1:1")]),
            (Experiment::Pr2d, vec![("bogus", "1")]),
            (Experiment::RegionsPr, vec![("format", "csv")]),
            (Experiment::RegionsMs, vec![("eigvals", "1,1")]),
        ] {
            let err = ExperimentConfig::resolve(exp, &none, &flags(&pairs), None).unwrap_err();
            assert_eq!(err.exit_code(), 3, "{exp:?} {pairs:?}");
        }
    }

    #[test]
    fn hash_depends_on_effective_config_only() {
        let a = ExperimentConfig::defaults(Experiment::Pr2d, 5).unwrap();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.config_hash(), b.config_hash());
        let c = ExperimentConfig::defaults(Experiment::Pr2d, 6).unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn pr1d_rows_match_closed_form() {
        let cfg = ExperimentConfig::resolve(Experiment::Pr1d, &BTreeMap::new(), &flags(&[("grid", "-1:1:3")]), None).unwrap();
        let t = run_pr1d(&cfg).unwrap();
        let at = |x: f64| t.rows.iter().find(|r| r.x == x).unwrap();
        let one = at(1.0);
        assert_eq!((one.g, one.dg), (0.0, 0.0));
        assert!((one.d2g - 12.0).abs() < 1e-12);
        let zero = at(0.0);
        assert!((zero.g - 1.5).abs() < 1e-12 && zero.dg == 0.0 && (zero.d2g + 6.0).abs() < 1e-12);
    }

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(fmt_float(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_float(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
