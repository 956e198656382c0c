//! Error type shared across the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by loaders, numeric operations and the pipeline glue.
#[derive(Debug, Error)]
pub enum Error {
    /// A CSV or JSON input could not be parsed. Positions are 1-based.
    #[error("{path}:{line}:{column}: malformed row: {message}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    /// Timestamps violate the required ordering (fixation ends before it
    /// starts, sentences overlap, words run backwards in time, ...).
    #[error("non-monotonic time in {path} (line {line}): {message}")]
    NonMonotonicTime {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A fixation lies outside the image bounds or before the recording
    /// started.
    #[error("fixation out of bounds in {path} (line {line}): {message}")]
    OutOfBoundsFixation {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// An ellipse annotation has a zero or negative radius.
    #[error("non-positive radius in {path} (line {line})")]
    NonPositiveRadius { path: PathBuf, line: usize },

    /// A transcript sentence contains no words.
    #[error("empty sentence at index {index} in {path}")]
    EmptySentence { path: PathBuf, index: usize },

    /// A raw label has no entry in the grouping table.
    #[error("unknown raw label: {0:?}")]
    UnknownRawLabel(String),

    /// Prediction and gold label maps cover different images.
    #[error("corpus mismatch: {0}")]
    CorpusMismatch(String),

    /// Two maps or masks that must share dimensions do not.
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    /// A pooling grid was requested that is larger than the source image.
    #[error("grid side {n} exceeds image dimensions {width}x{height}")]
    GridLargerThanImage {
        n: usize,
        width: usize,
        height: usize,
    },

    /// An ellipse rasterized to an empty mask.
    #[error("ellipse does not cover any pixel of a {width}x{height} image")]
    EmptyRaster { width: usize, height: usize },

    /// Threshold validation was asked to run without any (heatmap, mask)
    /// pair.
    #[error("no positive examples to validate a threshold on")]
    NoPositiveExamples,

    /// AUC is undefined without at least one positive and one negative.
    #[error("degenerate labels for AUC: {n_pos} positives, {n_neg} negatives")]
    DegenerateLabels { n_pos: usize, n_neg: usize },

    /// A loss evaluation produced a non-finite value.
    #[error("non-finite loss")]
    NonFiniteLoss,

    /// Training diverged to a non-finite loss.
    #[error("training diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    /// A configuration value is out of its documented range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an i/o error with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
