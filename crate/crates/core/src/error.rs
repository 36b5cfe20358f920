use thiserror::Error;

/// Errors produced by the cogrowth library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("component {index} of u is zero")]
    ZeroComponent { index: usize },

    #[error("index {index} is out of range for rank {rank}")]
    IndexOutOfRange { index: usize, rank: usize },

    #[error("degenerate determinant D(u) = {determinant:e}")]
    DegenerateDeterminant { determinant: f64 },

    #[error("unknown letter {letter:?} for rank {rank}")]
    UnknownLetter { letter: char, rank: usize },

    #[error("resource cap exceeded: {what} needs more than {cap} entries")]
    ResourceCap { what: &'static str, cap: usize },

    #[error("no value for neighbour {word} of an evaluated vertex")]
    MissingNeighbor { word: String },

    #[error("first-passage iteration does not converge at t = {t} (below the spectral radius)")]
    NoConvergence { t: f64 },

    #[error("power iteration stagnated at depth {depth} after {iterations} iterations (last estimate {estimate})")]
    Stagnation {
        depth: usize,
        iterations: usize,
        estimate: f64,
    },

    #[error("numerical consistency check failed: {0}")]
    Consistency(String),

    #[error("subgroup exponent {delta_sub} exceeds the free-group exponent {delta_free}")]
    ExponentOutOfRange { delta_sub: f64, delta_free: f64 },

    #[error("no returns in {trials} walks of {steps} steps; spectral radius is at most {rho_upper}")]
    NoReturns {
        trials: u64,
        steps: usize,
        rho_upper: f64,
    },

    #[error("malformed subgroup specification: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
