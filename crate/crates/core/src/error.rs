use alloc::string::String;
use alloc::vec::Vec;

/// Broad error classes. The CLI maps these onto stable exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Estimation,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("design error: {0}")]
    Design(String),
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("invalid probability {value} for unit {unit}")]
    InvalidProbability { unit: usize, value: f64 },
    #[error("frame violation: unit {unit} belongs to both B and S")]
    FrameViolation { unit: usize },
    #[error("unknown cell label {0}")]
    UnknownCell(usize),
    #[error("missing column or value: {0}")]
    Missing(String),
    #[error("impossible sample: {0}")]
    ImpossibleSample(String),
    #[error("empty cell {cell}: population size {population_size} but no sample members")]
    EmptyCell { cell: usize, population_size: f64 },
    #[error("rank-deficient constraint system; dependent components {dependent:?}")]
    RankDeficient { dependent: Vec<usize> },
    #[error("propensity fit did not converge after {iterations} iterations (score trace {score_trace:?})")]
    NonConvergence { iterations: usize, score_trace: Vec<f64> },
    #[error("separation in propensity fit: linear predictor {linear_predictor} for cell {cell}")]
    Separation { cell: usize, linear_predictor: f64 },
    #[error("invalid propensity {value} for cell {cell}")]
    InvalidPropensity { cell: usize, value: f64 },
    #[error("cell {cell} has members of only one class in the pooled sample")]
    InestimableRatio { cell: usize },
    #[error("no donor available: the B-sample is empty")]
    NoDonor,
    #[error("no S-sample unit lies within epsilon {epsilon} of the B-sample support")]
    NoSupport { epsilon: f64 },
    #[error("value {value} outside the admissible domain [{lower}, {upper}]")]
    Domain { value: f64, lower: f64, upper: f64 },
    #[error("indeterminate: {0}")]
    Indeterminate(String),
    #[error("degenerate: {0}")]
    Degenerate(String),
    #[error("unsupported design: {0}")]
    UnsupportedDesign(String),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Design(_) => ErrorCategory::Config,
            Error::InconsistentInputs(_)
            | Error::LengthMismatch { .. }
            | Error::InvalidProbability { .. }
            | Error::FrameViolation { .. }
            | Error::UnknownCell(_)
            | Error::Missing(_) => ErrorCategory::Data,
            _ => ErrorCategory::Estimation,
        }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Design(_) => "design",
            Error::InconsistentInputs(_) => "inconsistent_inputs",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::InvalidProbability { .. } => "invalid_probability",
            Error::FrameViolation { .. } => "frame_violation",
            Error::UnknownCell(_) => "unknown_cell",
            Error::Missing(_) => "missing",
            Error::ImpossibleSample(_) => "impossible_sample",
            Error::EmptyCell { .. } => "empty_cell",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Separation { .. } => "separation",
            Error::InvalidPropensity { .. } => "invalid_propensity",
            Error::InestimableRatio { .. } => "inestimable_ratio",
            Error::NoDonor => "no_donor",
            Error::NoSupport { .. } => "no_support",
            Error::Domain { .. } => "domain",
            Error::Indeterminate(_) => "indeterminate",
            Error::Degenerate(_) => "degenerate",
            Error::UnsupportedDesign(_) => "unsupported_design",
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}
