use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {shape:?}: every extent must be at least 1")]
    InvalidShape { shape: Vec<usize> },

    #[error("{op}: shapes {lhs:?} and {rhs:?} do not conform")]
    Conformability {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("expected a scalar loss, got shape {shape:?}")]
    Rank { shape: Vec<usize> },

    #[error("value is detached from the graph; nothing to differentiate")]
    NoGraph,

    #[error("degenerate embedding: row {row} has norm {norm:e} below the floor")]
    DegenerateEmbedding { row: usize, norm: f64 },

    #[error("gradient probe failed: non-finite value at parameter {param}, index {index}")]
    ProbeFailure { param: usize, index: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{what} = {value} is outside {range}")]
    Range {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("InfoNCE needs at least two rows (one negative), got {0}")]
    InsufficientNegatives(usize),

    #[error("row {row} has norm {norm}; inputs must be l2-normalized")]
    NormalizationContract { row: usize, norm: f64 },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: String, expected: String },

    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    CorruptCheckpoint { offset: u64, reason: String },

    #[error("dataset format error: {0}")]
    DatasetFormat(String),

    #[error("label {label} is out of range for {class_count} classes")]
    Label { label: usize, class_count: usize },

    #[error("training diverged: non-finite {what}{}", last_good.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default())]
    DivergedTraining {
        what: String,
        last_good: Option<PathBuf>,
    },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn conform(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Conformability {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
