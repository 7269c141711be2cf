use thiserror::Error;

use crate::reduce::FusionPlan;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no data observed")]
    NoData,

    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("empty layer")]
    EmptyLayer,

    #[error("statistics do not match network: {0}")]
    StatsMismatch(String),

    #[error("pruning budget {budget} exceeds {available} remaining prunable weights")]
    BudgetExceedsRemaining { budget: usize, available: usize },

    #[error("allocation pool is empty with {residual} weights left to assign")]
    EmptyPool { residual: usize },

    #[error("cannot prune {requested} weights from layer {layer}: only {available} remain")]
    PruneTooLarge { layer: usize, requested: usize, available: usize },

    #[error("invalid structural edit: {0}")]
    InvalidEdit(String),

    #[error("equivalence check failed: {}", rejection_summary(.0))]
    EquivalenceRejected(Box<FusionPlan>),

    #[error("truncated header")]
    TruncatedHeader,

    #[error("bad IDX magic {0:#010x}")]
    BadMagic(u32),

    #[error("unsupported IDX type {0:#010x}")]
    UnsupportedIdxType(u32),

    #[error("IDX payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("IDX file has {0} unexpected trailing bytes")]
    TrailingBytes(usize),

    #[error("IDX count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("IDX dimensions overflow")]
    DimensionOverflow,

    #[error("unsupported checkpoint format_version {0}")]
    UnsupportedFormatVersion(u32),

    #[error("config error: {0}")]
    Config(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn rejection_summary(plan: &FusionPlan) -> String {
    match &plan.verification {
        Some(v) => format!(
            "max_abs_diff={:e}, max_rel_diff={:e} over {} probes",
            v.max_abs_diff, v.max_rel_diff, v.n_probe_inputs
        ),
        None => "plan was not verified".into(),
    }
}

impl Error {
    /// Errors caused by the user's input (configuration, arguments) rather
    /// than by a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
