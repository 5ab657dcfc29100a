use thiserror::Error;

/// Errors raised by the simulation and diagnostics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported derivative order {order} (max {max})")]
    UnsupportedOrder { order: usize, max: usize },
    #[error("background has no horizon")]
    NoHorizon,
    #[error("root finder did not converge: {0}")]
    Nonconvergence(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("bad support: {0}")]
    BadSupport(String),
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("insufficient margin: {0}")]
    InsufficientMargin(String),
    #[error("insufficient radial range: {0}")]
    InsufficientRadialRange(String),
    #[error("wrong mode: expected l={expected}, got l={got}")]
    WrongMode { expected: usize, got: usize },
    #[error("weight m={m} is outside the validated range for {field}")]
    WeightOutOfRange { field: String, m: f64 },
    #[error("k={k} needs metric derivatives up to order {needed}, background provides {available}")]
    UnsupportedK { k: usize, needed: usize, available: usize },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("support violation: {0}")]
    SupportViolation(String),
    #[error("non-positive values in series: {0}")]
    NonpositiveValues(String),
    #[error("insufficient points: need {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("degenerate differences: {0}")]
    DegenerateDifferences(String),
    #[error("NP constant unresolved: estimate {estimate}, tolerance {tolerance}")]
    I0Unresolved { estimate: f64, tolerance: f64 },
    #[error("missing series: {0}")]
    MissingSeries(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
