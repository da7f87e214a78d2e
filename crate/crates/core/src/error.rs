use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("index ({row}, {col}) out of bounds for a {nrows}x{ncols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },

    #[error("duplicate observation at ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },

    #[error("invalid factorization: {0}")]
    InvalidFactorization(&'static str),

    #[error("iterate is infeasible: nuclear norm {nuclear_norm} exceeds radius {delta}")]
    Infeasible { nuclear_norm: f64, delta: f64 },

    #[error("rank-drop step needs rank >= 2, iterate has rank {0}")]
    RankTooLow(usize),

    #[error("degenerate rank-drop step size: {0}")]
    DegenerateStep(f64),

    #[error("need at least {required} observations, found {found}")]
    TooFewEntries { required: usize, found: usize },

    #[error("training values have zero variance")]
    ZeroVariance,

    #[error("empty evaluation set")]
    EmptySet,

    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),

    #[error("{0} did not converge")]
    NoConvergence(&'static str),

    #[error("atomic decomposition drifted from the factored iterate (spectral error {0:e})")]
    DecompositionMismatch(f64),
}
