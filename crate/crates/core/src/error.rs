use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset too short: {got} samples, need at least {need}")]
    TooShort { got: usize, need: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate timing: non-increasing timestamps at index {index}")]
    DegenerateTiming { index: usize },

    #[error("norm Jacobian undefined at zero soft-iron terms")]
    SingularPoint,

    #[error("degenerate motion: calibration parameters are not observable ({0})")]
    DegenerateMotion(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("calibration failed: {0}")]
    InvalidSoftIron(String),

    #[error("data does not describe an ellipsoid: {0}")]
    NonEllipsoid(String),

    #[error("insufficient excitation for ellipsoid fit: {0}")]
    InsufficientExcitation(String),

    #[error("time {t} s outside profile range [0, {duration}] s")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("Euler pitch at gimbal singularity ({pitch} rad)")]
    GimbalLock { pitch: f64 },

    #[error("dataset has no attitude ground truth")]
    MissingGroundTruth,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: String, expected: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable tag for reports and scripting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyDataset => "empty_dataset",
            Error::TooShort { .. } => "too_short",
            Error::InvalidConfig(_) => "invalid_config",
            Error::DegenerateTiming { .. } => "degenerate_timing",
            Error::SingularPoint => "singular_point",
            Error::DegenerateMotion(_) => "degenerate_motion",
            Error::NumericalFailure(_) => "numerical_failure",
            Error::InvalidSoftIron(_) => "invalid_soft_iron",
            Error::NonEllipsoid(_) => "non_ellipsoid",
            Error::InsufficientExcitation(_) => "insufficient_excitation",
            Error::TimeOutOfRange { .. } => "time_out_of_range",
            Error::GimbalLock { .. } => "gimbal_lock",
            Error::MissingGroundTruth => "missing_ground_truth",
            Error::Parse { .. } => "parse",
            Error::MissingColumn(_) => "missing_column",
            Error::SchemaVersion { .. } => "schema_version",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code: 2 input, 3 degenerate data, 4 numerical failure,
    /// 5 non-ellipsoidal data (ellipsoid baseline only).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EmptyDataset
            | Error::TooShort { .. }
            | Error::InvalidConfig(_)
            | Error::Parse { .. }
            | Error::MissingColumn(_)
            | Error::SchemaVersion { .. }
            | Error::MissingGroundTruth
            | Error::TimeOutOfRange { .. }
            | Error::Io(_) => 2,
            Error::DegenerateTiming { .. }
            | Error::DegenerateMotion(_)
            | Error::InsufficientExcitation(_)
            | Error::GimbalLock { .. } => 3,
            Error::SingularPoint | Error::NumericalFailure(_) | Error::InvalidSoftIron(_) => 4,
            Error::NonEllipsoid(_) => 5,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
