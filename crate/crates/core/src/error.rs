use thiserror::Error;

/// Errors raised across panel handling, matching, estimation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unbalanced panel: {0}")]
    UnbalancedPanel(String),

    #[error("invalid cohort label: {0}")]
    InvalidCohortLabel(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("empty window: {0}")]
    EmptyWindow(String),

    #[error("insufficient comparison units: need {needed}, have {available}")]
    InsufficientComparisons { needed: usize, available: usize },

    #[error("comparison cohort {0} has no units")]
    EmptyComparisonCohort(String),

    #[error("covariate cell {cell} contains target units but no comparison units")]
    EmptyCellForTreated { cell: String },

    #[error("match results refer to different panels or comparison cohorts")]
    MismatchedPanels,

    #[error("singular regression: {0}")]
    SingularRegression(String),

    #[error("alpha(M={m}, q={q}) is not available: closed form exists only for q = 1")]
    AlphaUnavailable { m: usize, q: usize },

    #[error("cohort {cohort} has {size} units, need more than J = {j} for variance estimation")]
    TooFewForSigma { cohort: String, size: usize, j: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError { line: u64, column: String, message: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("covariate `{column}` varies across periods for unit `{unit}`")]
    TimeVaryingCovariate { unit: String, column: String },

    #[error("covariate column {0} is not flagged discrete")]
    ContinuousCovariate(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
