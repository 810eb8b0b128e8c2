use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{column}` must be 0 or 1, got `{value}`")]
    NonBinary {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: column `{column}`: cannot parse `{value}` as a number")]
    NotNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {0}: EC unit is treated")]
    TreatedExternalControl(usize),
    #[error("column `{0}` has no observed values to impute from")]
    NothingToImpute(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("pool exhausted: need {needed} external controls, {available} available")]
    PoolExhausted { needed: usize, available: usize },
    #[error("matching ratio must be at least 1")]
    InvalidRatio,
    #[error("all weights are zero")]
    ZeroWeights,
    #[error("degenerate response")]
    DegenerateResponse,
    #[error("cannot fit a model on an empty training set ({0})")]
    EmptyTrainingSet(&'static str),
    #[error("arm {0} has no RCT units")]
    EmptyArm(u8),
    #[error("no external controls in the borrowing set")]
    NoExternalControls,
    #[error("estimand undefined at boundary")]
    Boundary,
    #[error("zero total weight in the {0} component")]
    ZeroComponentWeight(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("combinatorial budget exceeded: {0} assignments")]
    BudgetExceeded(u128),
    #[error("rejection sampling budget exceeded after {0} candidates")]
    RejectionBudget(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingColumn(_) => "missing_column",
            Error::NonBinary { .. } => "non_binary",
            Error::NotNumeric { .. } => "not_numeric",
            Error::TreatedExternalControl(_) => "treated_external_control",
            Error::NothingToImpute(_) => "nothing_to_impute",
            Error::EmptyDataset => "empty_dataset",
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::PoolExhausted { .. } => "pool_exhausted",
            Error::InvalidRatio => "invalid_ratio",
            Error::ZeroWeights => "zero_weights",
            Error::DegenerateResponse => "degenerate_response",
            Error::EmptyTrainingSet(_) => "empty_training_set",
            Error::EmptyArm(_) => "empty_arm",
            Error::NoExternalControls => "no_external_controls",
            Error::Boundary => "boundary",
            Error::ZeroComponentWeight(_) => "zero_component_weight",
            Error::Config(_) => "config",
            Error::BudgetExceeded(_) => "budget_exceeded",
            Error::RejectionBudget(_) => "rejection_budget",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
