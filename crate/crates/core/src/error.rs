use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("svd did not converge after {sweeps} sweeps (frobenius norm {norm:.6e}, off-diagonal {off:.6e})")]
    SvdNoConvergence { sweeps: usize, norm: f64, off: f64 },

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("matrix is not hermitian positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("degenerate retraction step at entry ({row}, {col})")]
    DegenerateStep { row: usize, col: usize },

    #[error("line search failed at the initial point after reseeding (seed {seed})")]
    LineSearch { seed: u64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("stale forward cache: model revision {cached} != {current}")]
    StaleCache { cached: u64, current: u64 },

    #[error("too many failed samples: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::SvdNoConvergence { .. } => "svd",
            Error::RankDeficient(_) => "rank",
            Error::NotPositiveDefinite(_) => "not-hpd",
            Error::DegenerateStep { .. } => "degenerate-step",
            Error::LineSearch { .. } => "line-search",
            Error::Invalid(_) => "invalid",
            Error::Format { .. } => "format",
            Error::NonFiniteLoss { .. } => "non-finite",
            Error::StaleCache { .. } => "stale-cache",
            Error::TooManyFailures { .. } => "failures",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}
