use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("treatment value {value} is not 0 or 1")]
    NonBinaryTreatment { value: f64 },

    #[error("column `{column}` holds non-numeric value `{value}`")]
    InvalidValue { column: String, value: String },

    #[error("every covariate column is entirely missing for {0}")]
    AllCovariatesDropped(String),

    #[error("estimand needs a treatment column but the dataset has none")]
    MissingTreatment,

    #[error("propensity {0} is outside (0, 1)")]
    InvalidPropensity(f64),

    #[error("design matrix is rank deficient and no penalty was given")]
    DegenerateDesign,

    #[error("logistic fit did not converge after {iterations} iterations (separable classes?)")]
    SeparableClasses { iterations: usize },

    #[error("no covariate with positive source variance")]
    NoUsableCovariates,

    #[error("conditional scale is zero")]
    ZeroConditionalScale,

    #[error("covariate shift measure is zero")]
    ZeroCovariateShift,

    #[error("need at least {needed} ratios for calibration, got {got}")]
    TooFewRatios { needed: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("{rows} base rows cannot fill {pieces} pieces")]
    TooFewSamples { rows: usize, pieces: usize },

    #[error("invalid weight law: {0}")]
    InvalidWeightLaw(String),

    #[error("numerical overflow in {0}")]
    NumericalOverflow(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("target labels reached interval construction: {0}")]
    Leakage(String),

    #[error("data error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Toml(_) | Error::InvalidWeightLaw(_) => 2,
            Error::Leakage(_) => 1,
            _ => 3,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
