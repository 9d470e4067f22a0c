use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced by the solver, the analysis pipeline and the sampling lab.
///
/// Variants split into two families: input validation (bad shapes, bad
/// configuration, spectral parameters outside the admissible domain) and
/// numerical failure (non-convergence, ill-conditioning). [`Error::is_numerical`]
/// tells them apart; the CLI maps them to exit codes 2 and 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid variance profile: {0}")]
    InvalidProfile(String),

    #[error("block {axis} {index} maps to zero indices (fraction {fraction} of {dim})")]
    DegenerateBlock {
        axis: &'static str,
        index: usize,
        fraction: f64,
        dim: usize,
    },

    #[error("spectral parameter outside the domain: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(
        "solver did not converge after {iterations} iterations (best residual {best_residual:.3e})"
    )]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
    },

    #[error("density curves mix spectral parameters with different imaginary parts")]
    MixedEta,

    #[error("energy grid does not cover [{lo}, {hi}]")]
    GridCoverage { lo: f64, hi: f64 },

    #[error("exponent fit failed: {0}")]
    Fit(String),

    #[error("Perron eigenvector undefined: {0}")]
    UndefinedPerron(String),

    #[error("operator is ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("eigenvector normalization failed: {0}")]
    Normalization(String),

    #[error("eigensolver failure: {0}")]
    Eigensolve(String),

    #[error("no eigenvalues above the cutoff {0}")]
    EmptySpectrum(f64),

    #[error("cusp not found: {0}")]
    CuspNotFound(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// `true` for failures of the numerics (as opposed to invalid input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Fit(_)
                | Error::UndefinedPerron(_)
                | Error::IllConditioned(_)
                | Error::Normalization(_)
                | Error::Eigensolve(_)
                | Error::EmptySpectrum(_)
                | Error::CuspNotFound(_)
        )
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
