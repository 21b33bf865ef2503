use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state at distance {distance:e} from primary {primary} is inside the singularity guard")]
    Singularity { primary: u8, distance: f64 },

    #[error("propagation failed at t = {time}: {reason}")]
    Propagation { time: f64, reason: String },

    #[error("invalid system parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("malformed file {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("initial guess is not an x-z plane crossing: {0}")]
    NotCrossingForm(String),

    #[error("no x-z plane crossing found before t = {0}")]
    NoCrossing(f64),

    #[error("differential correction stalled after {iterations} iterations (residual {residual:e})")]
    CorrectorStall { iterations: usize, residual: f64 },

    #[error("monodromy matrix has no real eigenvalue above one")]
    NoUnstableEigenvalue,

    #[error("periodic Riccati recursion did not converge in {periods} periods (last change {change:e})")]
    RiccatiNonConvergence { periods: usize, change: f64 },

    #[error("cost-to-go matrix at knot {0} is not positive definite")]
    NotPositiveDefinite(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("conic solver failure: {0}")]
    Solver(String),

    #[error("mission aborted in cycle {cycle}: {reason}")]
    MissionFailure { cycle: usize, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for bad input, 3 for a solver or mission
    /// failure, 4 for numerical trouble in the dynamics or linear algebra.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParams(_)
            | Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::NotCrossingForm(_)
            | Error::Dimension(_) => 2,
            Error::Bracketing(_)
            | Error::NoCrossing(_)
            | Error::CorrectorStall { .. }
            | Error::NoUnstableEigenvalue
            | Error::RiccatiNonConvergence { .. }
            | Error::Solver(_)
            | Error::MissionFailure { .. } => 3,
            Error::Singularity { .. }
            | Error::Propagation { .. }
            | Error::NotPositiveDefinite(_)
            | Error::Numerical(_) => 4,
        }
    }
}
