use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use landscape_lab::experiments::{self, Experiment, ExperimentConfig, SEED_ENV};
use landscape_lab::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ExperimentArg {
    Pr1d,
    Pr2d,
    Ms2dRank1,
    MsRank2Dist,
    Assumptions,
    RegionsMs,
    RegionsPr,
    Rip,
}

impl From<ExperimentArg> for Experiment {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::Pr1d => Experiment::Pr1d,
            ExperimentArg::Pr2d => Experiment::Pr2d,
            ExperimentArg::Ms2dRank1 => Experiment::Ms2dRank1,
            ExperimentArg::MsRank2Dist => Experiment::MsRank2Dist,
            ExperimentArg::Assumptions => Experiment::Assumptions,
            ExperimentArg::RegionsMs => Experiment::RegionsMs,
            ExperimentArg::RegionsPr => Experiment::RegionsPr,
            ExperimentArg::Rip => Experiment::Rip,
        }
    }
}

/// Empirical vs population risk landscapes: experiments and verification
/// suites.
///
/// Exit codes: 0 success, 2 verification failure, 3 invalid configuration,
/// 4 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "landscape-lab", version)]
struct Cli {
    experiment: ExperimentArg,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    /// Sample count, or a comma-separated list.
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed (falls back to LANDSCAPE_LAB_SEED).
    #[arg(long)]
    seed: Option<u64>,
    /// min:max:points
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Samples per region, Monte-Carlo samples, or RIP probes.
    #[arg(long)]
    samples: Option<usize>,
    /// pr or ms (assumptions suite).
    #[arg(long)]
    family: Option<String>,
    /// Comma-separated eigenvalues of the sensing target.
    #[arg(long, allow_hyphen_values = true)]
    eigvals: Option<String>,
    /// Comma-separated phase retrieval signal.
    #[arg(long, allow_hyphen_values = true)]
    xstar: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json
    #[arg(long)]
    format: Option<String>,
    /// Flat key=value configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Cli {
    fn flags(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put("n", self.n.map(|v| v.to_string()));
        put("k", self.k.map(|v| v.to_string()));
        put("r", self.r.map(|v| v.to_string()));
        put("m", self.m.clone());
        put("trials", self.trials.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("grid", self.grid.clone());
        put("samples", self.samples.map(|v| v.to_string()));
        put("family", self.family.clone());
        put("eigvals", self.eigvals.clone());
        put("xstar", self.xstar.clone());
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("format", self.format.clone());
        m
    }
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let file = match &cli.config {
        Some(path) => experiments::parse_config_file(&std::fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = ExperimentConfig::resolve(cli.experiment.into(), &file, &cli.flags(), env_seed.as_deref())?;
    let summary = experiments::execute(&cfg)?;
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
    match summary.verification_passed {
        Some(true) => println!("{}: PASS", cfg.experiment.as_str()),
        Some(false) => println!("{}: FAIL", cfg.experiment.as_str()),
        None => {}
    }
    Ok(summary.verification_passed != Some(false))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
