use thiserror::Error;

/// Everything that can go wrong in the decomposition pipeline.
#[derive(Debug, Error)]
pub enum CpdError {
    #[error("mode {mode} is out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),

    #[error("invalid mode split: {0}")]
    InvalidSplit(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0} is zero")]
    ZeroInput(&'static str),

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("exact Kruskal rank is limited to at most 12 columns (got {0}); use a mode-rank estimate")]
    TooManyColumns(usize),

    #[error("matrix is rank deficient (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("singular spectrum is degenerate: sigma_{index} = {value:.3e} is below the cutoff")]
    DegenerateSpectrum { index: usize, value: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("error bound violated: final error {final_err:.6e} exceeds bound {bound:.6e}")]
    BoundViolation { final_err: f64, bound: f64 },

    #[error("no 3-way solver registered under {0:?}")]
    SolverNotRegistered(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = CpdError> = std::result::Result<T, E>;
