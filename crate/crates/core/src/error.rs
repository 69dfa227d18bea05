use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("factor is rank deficient (smallest singular value {sigma_min:e})")]
    RankDeficient { sigma_min: f64 },

    #[error("Gram matrix is not symmetric positive definite (eigenvalues in [{min_eig:e}, {max_eig:e}])")]
    GramNotSpd { min_eig: f64, max_eig: f64 },

    #[error("right-hand side is not skew-symmetric (relative asymmetry {asymmetry:e})")]
    NotSkew { asymmetry: f64 },

    #[error("horizontal basis has {found} elements, expected {expected}")]
    BasisDimension { expected: usize, found: usize },

    #[error("sample count must be at least 1, got {0}")]
    InvalidSampleCount(usize),

    #[error("ground-truth signal has zero norm")]
    ZeroTruthSignal,

    #[error("invalid ground truth: {0}")]
    InvalidTruth(String),

    #[error("rank bound {rank} is not in 1..={n}")]
    InvalidRank { rank: usize, n: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sampler starved in region {region}: accepted {accepted} of {proposed} proposals")]
    SamplerStarved {
        region: String,
        accepted: usize,
        proposed: usize,
    },

    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFiniteEntry(String),

    #[error("global minimizers are not a single orbit: {0}")]
    AmbiguousMinimizers(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_shape(
    what: &str,
    m: &nalgebra::DMatrix<f64>,
    rows: usize,
    cols: usize,
) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            expected: format!("{what} {rows}x{cols}"),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(())
}

impl Error {
    /// Process exit code: 3 for invalid configuration or inputs, 4 for
    /// numerical failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DimensionMismatch { .. }
            | Error::InvalidSampleCount(_)
            | Error::ZeroTruthSignal
            | Error::InvalidTruth(_)
            | Error::InvalidRank { .. }
            | Error::InvalidConfig(_)
            | Error::AmbiguousMinimizers(_) => 3,
            Error::RankDeficient { .. }
            | Error::GramNotSpd { .. }
            | Error::NotSkew { .. }
            | Error::BasisDimension { .. }
            | Error::SamplerStarved { .. }
            | Error::NoConvergence { .. }
            | Error::NonFiniteEntry(_) => 4,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }
}
