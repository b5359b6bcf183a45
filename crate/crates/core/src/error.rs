use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label map is empty")]
    EmptyLabels,
    #[error("duplicate label `{name}` on line {line}")]
    DuplicateLabel { name: String, line: usize },
    #[error("line {line}: expected explicit index {expected}, found {found}")]
    BadLabelIndex {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: empty clause")]
    EmptyClause { line: usize },
    #[error("line {line}: literal {literal} refers to a label outside 1..={n_labels}")]
    LabelOutOfRange {
        line: usize,
        literal: i64,
        n_labels: usize,
    },
    #[error("line {line}: label {label} occurs more than once in a clause")]
    DuplicateOccurrence { line: usize, label: usize },
    #[error("header declares {declared} {what}, found {found}")]
    HeaderMismatch {
        what: &'static str,
        declared: usize,
        found: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("value {value} at {context} lies outside [0, 1]")]
    Domain { value: f64, context: String },
    #[error("t-conorm fold over an empty list is undefined")]
    EmptyFold,
    #[error("failed to allocate {bytes} bytes")]
    Allocation { bytes: u128 },
    #[error("arithmetic overflow computing {0}")]
    Overflow(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dense estimate of {estimate} bytes exceeds the budget of {budget} bytes")]
    BudgetExceeded { estimate: u128, budget: u128 },
    #[error("instrumented allocator is not installed as the global allocator")]
    NoAllocProbe,
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("rejection sampling gave up after {retries} draws; constraints look unsatisfiable")]
    Unsatisfiable { retries: usize },
    #[error("malformed PMAT data: {0}")]
    Pmat(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
