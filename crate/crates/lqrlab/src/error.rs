//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or vector has the wrong shape. `field` names the offending input.
    #[error("dimension mismatch in `{field}`: expected {expected}, got {got}")]
    Dimension {
        field: &'static str,
        expected: String,
        got: String,
    },

    #[error("`{field}` is not symmetric (max asymmetry {asym:.3e} > {tol:.3e})")]
    NotSymmetric {
        field: &'static str,
        asym: f64,
        tol: f64,
    },

    #[error("`{field}` is not positive definite (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { field: &'static str, min_eig: f64 },

    /// Fixed-point iteration for the Riccati equation failed to converge.
    /// Signals a non-stabilizable pair when raised from the DARE solver.
    #[error("Riccati fixed-point iteration did not converge within {max_iter} steps (residual {residual:.3e})")]
    DareDivergence { max_iter: usize, residual: f64 },

    #[error("linear solve against an ill-conditioned matrix (cond {cond:.3e} > {threshold:.3e})")]
    IllConditioned { cond: f64, threshold: f64 },

    /// Error raised while running a backward pass, with the stage attached.
    #[error("backward pass failed at stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("horizon must be at least {min}, got {got}")]
    Horizon { min: usize, got: usize },

    /// A stage outside the windowed MPC regime was handed to the windowed
    /// gain builder; the caller must use the exact-tail path instead.
    #[error("stage {t} is outside the windowed regime (valid 1..={last_windowed}); use the exact-tail path")]
    WindowedRegime { t: usize, last_windowed: usize },

    #[error("prediction d({i}|{t}) is outside the stored window")]
    PredictionMissing { t: usize, i: usize },

    #[error("problem size {got} exceeds the configured cap {cap}")]
    SizeCap { got: usize, cap: usize },

    #[error("rollout did not retain per-step gains; rerun with gain retention enabled")]
    GainsNotRetained,

    #[error("mismatched instance: {0}")]
    InstanceMismatch(String),

    #[error("degenerate stability constants: {0}")]
    DegenerateConstants(String),

    #[error("negative coefficient at ({row},{col}): {value:.3e}")]
    NegativeCoefficient { row: usize, col: usize, value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {path} line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wrap an error with the stage index of a backward pass.
    pub fn at_stage(self, stage: usize) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
