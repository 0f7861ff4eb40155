use std::path::PathBuf;

/// Errors produced anywhere in the inference pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("input contains no rows{}", .filter.as_ref().map(|f| format!(" after filtering on {f}")).unwrap_or_default())]
    EmptyInput { filter: Option<String> },

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("missing cell for unit `{unit}` on {date} (strict-missing mode)")]
    MissingCell { unit: String, date: String },

    #[error("panel needs at least {needed} periods, found {found}")]
    PanelTooShort { needed: usize, found: usize },

    #[error("date {0} lies outside the panel")]
    DateOutOfRange(String),

    #[error("adoption period {a0} leaves no pre-adoption period")]
    InvalidAdoption { a0: usize },

    #[error("window tau={tau} around period {a0} needs periods {first}..={last}, panel has 1..={periods}")]
    WindowOutOfBounds {
        tau: usize,
        a0: usize,
        first: i64,
        last: i64,
        periods: usize,
    },

    #[error("tau must be positive")]
    ZeroTau,

    #[error("invalid mechanism: {0}")]
    InvalidMechanism(String),

    #[error("factual assignment (offset 0) is not in the adoption-timing support {0:?}")]
    FactualNotInSupport(Vec<i64>),

    #[error("assignment draw has length {found}, expected {expected}")]
    DrawLength { expected: usize, found: usize },

    #[error("degenerate assignment: unit {unit} has no {missing} periods")]
    DegenerateAssignment { unit: usize, missing: &'static str },

    #[error(
        "assignment space of {space} draws exceeds the enumeration cap {cap}; use Monte Carlo mode"
    )]
    EnumerationCap { space: String, cap: u64 },

    #[error("detrend fit window too small: {periods} periods (need at least 3)")]
    DetrendWindow { periods: usize },

    #[error("rank-deficient detrend design")]
    RankDeficient,

    #[error("degenerate reference distribution")]
    DegenerateReference,

    #[error("combiner input: {0}")]
    Combine(String),

    #[error("confidence interval: {0}")]
    EmptyAcceptance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("placebo/artificial window: {0}")]
    Contaminated(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{path}: {cause}")]
    Io {
        path: PathBuf,
        cause: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
