use thiserror::Error;

/// Errors raised anywhere in the fitting pipeline.
///
/// Row and column indices carried by variants are 1-based so they can be
/// shown to users verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing cell at row {row}, column {column}")]
    MissingCell { row: usize, column: usize },

    #[error("non-numeric cell {value:?} at row {row}, column {column}")]
    NonNumericCell {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("degenerate column {column} ({name}): {reason}")]
    DegenerateColumn {
        column: usize,
        name: String,
        reason: String,
    },

    #[error("group {label:?} has only {count} rows (need at least {min})")]
    GroupTooSmall {
        label: String,
        count: usize,
        min: usize,
    },

    #[error("matrix is not symmetric positive definite")]
    NotSpd,

    #[error("SPD completion did not converge after {sweeps} sweeps (residual {residual:e})")]
    CompletionNotConverged { sweeps: usize, residual: f64 },

    #[error("graph is not decomposable")]
    NotDecomposable,

    #[error("only the identity scale matrix is supported here")]
    UnsupportedScale,

    #[error("unsupported dimension p = {p}: {hint}")]
    UnsupportedDimension { p: usize, hint: String },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("posterior accumulator holds no samples")]
    EmptyAccumulator,

    #[error("chain failed at iteration {iteration}: {source}")]
    Chain {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingCell { .. } => "MissingCell",
            Error::NonNumericCell { .. } => "NonNumericCell",
            Error::SchemaMismatch(_) => "SchemaMismatch",
            Error::DegenerateColumn { .. } => "DegenerateColumn",
            Error::GroupTooSmall { .. } => "GroupTooSmall",
            Error::NotSpd => "NotSPD",
            Error::CompletionNotConverged { .. } => "CompletionNotConverged",
            Error::NotDecomposable => "NotDecomposable",
            Error::UnsupportedScale => "UnsupportedScale",
            Error::UnsupportedDimension { .. } => "UnsupportedDimension",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::EmptyAccumulator => "EmptyAccumulator",
            Error::Chain { source, .. } => source.kind(),
            Error::Checkpoint(_) => "Checkpoint",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
