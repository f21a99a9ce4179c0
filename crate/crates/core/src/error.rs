use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid region: {}", .0.join("; "))]
    InvalidRegion(Vec<String>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero state")]
    ZeroState,

    #[error("log of zero on route {0}")]
    LogOfZero(usize),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("rho not interior")]
    RhoNotInterior,

    #[error("outside domain box: state {state:?}, box {cap:?}")]
    OutsideDomainBox { state: Vec<u32>, cap: Vec<u32> },

    #[error("undefined at zero")]
    UndefinedAtZero,

    #[error("alpha must be > 1, got {0}")]
    InvalidAlpha(f64),

    #[error("invalid potential table: {0}")]
    InvalidTable(String),

    #[error("divergence suspected (shell ratio {ratio:.6} at shell {shell})")]
    DivergenceSuspected { shell: usize, ratio: f64 },

    #[error("truncation insufficient: tail bound {tail_bound:e} exceeds {tail_tol:e} at shell {max_shell}")]
    TruncationInsufficient {
        max_shell: usize,
        tail_bound: f64,
        tail_tol: f64,
    },

    #[error("invalid traffic: {0}")]
    InvalidTraffic(String),

    #[error("state explosion: population {population} exceeded guard at time {time:.3}")]
    StateExplosion { population: u64, time: f64 },

    #[error("policy undefined at {state:?}: {reason}")]
    PolicyUndefined { state: Vec<u32>, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("variants differ in rho: {0:?} vs {1:?}")]
    VariantsDifferInRho(Vec<f64>, Vec<f64>),

    #[error("|n| = {0} is not a power of two")]
    NotPowerOfTwo(u64),

    #[error("no interior slack")]
    NoInteriorSlack,
}

impl Error {
    /// Numerical failures (divergence, non-convergence, instability) map to
    /// exit code 2, everything else is a validation failure.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::DivergenceSuspected { .. }
                | Error::TruncationInsufficient { .. }
                | Error::StateExplosion { .. }
                | Error::NoInteriorSlack
        )
    }
}
