use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("bond {bond} is not stoquastic: entry ({row},{col}) = {value} > 0")]
    NonStoquastic {
        bond: usize,
        row: usize,
        col: usize,
        value: f64,
    },

    #[error(
        "coupling K^zz({j},{k}) = {value} exceeds the decay bound {bound} (distance {distance})"
    )]
    DecayViolation {
        j: usize,
        k: usize,
        value: f64,
        bound: f64,
        distance: usize,
    },

    #[error("bond {bond} has operator norm {norm} > 1")]
    NormViolation { bond: usize, norm: f64 },

    #[error("transverse field on site {site} is {value}, must be > 0")]
    NonPositiveGamma { site: usize, value: f64 },

    #[error("{what}[{index}] = {value} is outside {range}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        value: f64,
        range: &'static str,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("beta*gamma/L = 0: the imaginary-time coupling is infinite")]
    DegenerateTemperature,

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("worldline {worldline} has {jumps} jumps, above the restriction cap {cap}")]
    InitialStateOutsideRestriction {
        worldline: usize,
        jumps: usize,
        cap: usize,
    },

    #[error("chain found no positive-weight moves")]
    NonErgodic,

    #[error("zero denominator in off-diagonal estimator at slice boundary {boundary}")]
    ZeroDenominator { boundary: usize },

    #[error("delta = {0} is outside (0, 1/21]")]
    InvalidDelta(f64),

    #[error("{what} of size {size} exceeds the cap {cap}")]
    TooLarge {
        what: &'static str,
        size: u64,
        cap: u64,
    },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid observable: {0}")]
    InvalidObservable(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),
}
