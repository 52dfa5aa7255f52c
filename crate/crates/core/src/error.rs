use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("eigenvalue iteration failed to converge")]
    Eigen,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("communication graph is not strongly connected")]
    NotStronglyConnected,

    #[error("(C, A) is not observable")]
    NotObservable,

    #[error("spectral norm condition violated: ||G||_2 = {0} >= 1")]
    SpectralNorm(f64),

    #[error("no stability margin: ||A - KCA||_2 = {0} >= 1")]
    NoStabilityMargin(f64),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("scenario parse error: {0}")]
    Parse(String),
}
