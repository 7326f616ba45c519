use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mode index {0} (expected 1, 2 or 3)")]
    InvalidMode(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("kruskal diagnostic size cap exceeded: rank {rank}, cap {cap}")]
    SizeCap { rank: usize, cap: usize },

    #[error("degenerate projection on branch {branch}: extent {extent:e}")]
    DegenerateProjection { branch: usize, extent: f64 },

    #[error("branch {branch} has non-positive projection maximum {max:e}; knots would decrease")]
    NonPositiveMaximum { branch: usize, max: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("zero-norm reference in {0}")]
    ZeroReference(&'static str),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        Error::Malformed(msg.into())
    }
}
