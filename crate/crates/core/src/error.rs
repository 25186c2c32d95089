use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },

    #[error("matrix entry at ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NonSymmetric(f64),

    #[error("Jacobi eigensolver did not converge within {0} sweeps")]
    NonConvergence(usize),

    #[error("matrix norm is zero or below tolerance")]
    ZeroMatrix,

    #[error("row {0} has zero norm")]
    ZeroRow(usize),

    #[error("Newton iteration diverged at step {step} (norm {norm:.3e})")]
    Divergence { step: usize, norm: f64 },

    #[error("bad group size {group_size} for a matrix with {cols} columns")]
    BadGroupSize { group_size: usize, cols: usize },

    #[error("cache does not match the requested backward pass: {0}")]
    CacheMismatch(String),

    #[error("layer cache is stale (cached step {cached}, layer step {current})")]
    StaleCache { cached: u64, current: u64 },

    #[error("bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("IDX file truncated: needed {needed} bytes, found {found}")]
    TruncatedFile { needed: usize, found: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
