use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("input contains a non-finite value")]
    NonFiniteInput,

    #[error("class index {class} out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("label {label} at row {row} out of range for {num_classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed model file: field `{field}`: {reason}")]
    MalformedModelFile { field: String, reason: String },

    #[error("parse error at row {row}, column `{column}`: {reason}")]
    Parse {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),

    #[error("k = {k} exceeds the {available} usable rows")]
    KTooLarge { k: usize, available: usize },

    #[error("attribution vector is identically zero")]
    ZeroAttribution,

    #[error("dimension {d} exceeds the enumeration limit {limit}")]
    DimensionTooLarge { d: usize, limit: usize },

    #[error("singular least-squares system: {0}")]
    SingularSystem(String),

    #[error("neighborhood is empty")]
    EmptyNeighborhood,

    #[error("every evaluation point has an empty neighborhood")]
    EmptyNeighborhoodEverywhere,

    #[error("correlation undefined: zero variance")]
    ZeroVariance,

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    #[error("self-information of the query explanation is not positive ({0})")]
    NonPositiveSelfInformation(f64),

    #[error("need at least two distinct points, found {0}")]
    TooFewPoints(usize),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
