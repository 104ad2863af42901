use thiserror::Error;

/// Errors raised by the planning library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("joint {joint} value {value} outside limits [{lower}, {upper}]")]
    JointLimitViolation {
        joint: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no time scaling satisfies the kinematic limits: {0}")]
    Infeasible(String),
    #[error("time {t} outside spline domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("the first trajectory node is already outside the dynamic bubble")]
    EmptyBur,
    #[error("spine direction has zero length")]
    ZeroDirection,
    #[error("scenario generation failed after {0} rejections")]
    ScenarioGenerationFailed(usize),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
