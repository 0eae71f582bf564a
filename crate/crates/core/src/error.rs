use thiserror::Error;

pub type Result<T> = std::result::Result<T, CardError>;

#[derive(Debug, Error)]
pub enum CardError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "logistic regression diverged (|coefficient| = {magnitude:.1} after {iterations} iterations); \
         the treatment looks perfectly separable, use the forest propensity learner instead"
    )]
    Separation { magnitude: f64, iterations: usize },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CardError {
    /// Process exit status used by the command-line front end.
    ///
    /// 2 = configuration, 3 = data or schema, 4 = internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            CardError::Parameter(_) | CardError::Config(_) => 2,
            CardError::Schema(_)
            | CardError::Parse { .. }
            | CardError::Validation(_)
            | CardError::Data(_)
            | CardError::Separation { .. }
            | CardError::Stratification(_)
            | CardError::Io(_)
            | CardError::Csv(_)
            | CardError::Json(_) => 3,
            CardError::Contract(_) | CardError::Invariant(_) => 4,
        }
    }
}
