use thiserror::Error;

/// Errors shared across the toolkit. Each variant maps to a documented
/// failure mode of the numerics; the CLI translates them into exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("resonant cluster has {size} members (> 3): degenerate parameter choice {indices:?}")]
    ClusterTooLarge { size: usize, indices: Vec<i64> },

    #[error("triple ({0}, {1}, {2}) is not on the zero-sum set")]
    NotOnGamma(i64, i64, i64),

    #[error("grid of {got} points is too coarse for truncation {n_modes} (need >= {needed})")]
    GridTooCoarse {
        n_modes: usize,
        needed: usize,
        got: usize,
    },

    #[error("Gram matrix condition number {cond:.3e} exceeds cap {cap:.3e}: horizon too short for the minimal frequency gap")]
    IllConditioned { cond: f64, cap: f64 },

    #[error("cluster moment system is numerically singular (degenerate gain profile)")]
    ClusterSingular,

    #[error("feedback operator matrix is not positive definite (min eigenvalue {min_eig:.3e}); increase the quadrature resolution or check the gain support")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("linear solve failed on the feedback operator")]
    SolveFailure,

    #[error("solution blew up at t = {t:.6}: max |coefficient| = {max_coeff:.3e}")]
    BlowUp { t: f64, max_coeff: f64 },

    #[error("decay fit degenerate: trajectory norms underflowed")]
    DegenerateFit,

    #[error("observation integral underflowed (gain profile has empty support?)")]
    ZeroDenominator,

    #[error("Picard iteration is not contracting: iterate distance grew {grew} consecutive times (last distances {history:?}); data outside the local smallness regime")]
    NoContraction { grew: usize, history: Vec<f64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
