use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to decode image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?} (width, height)")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("malformed CSV at line {line}: {message}")]
    MalformedCsv { line: usize, message: String },
    #[error("negative depth {value} at row {row}, column {col}")]
    NegativeDepth { row: usize, col: usize, value: f64 },
    #[error("crop rectangle {rect:?} exceeds frame of {width}x{height}")]
    OutOfBounds {
        rect: (usize, usize, usize, usize),
        width: usize,
        height: usize,
    },
    #[error("duplicate session: cow {cow_id}, day {day}, {period}")]
    DuplicateSession {
        cow_id: String,
        day: u32,
        period: String,
    },
    #[error("unknown video reference: {0}")]
    UnknownVideoReference(String),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("no foreground pixels")]
    NoForeground,
    #[error("no hue threshold in [{min}, 179] keeps the body box clear of a {margin}-pixel margin")]
    NoValidThreshold { min: u8, margin: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateInput(&'static str),

    #[error("every depth value inside the body mask is missing")]
    AllDepthMissing,

    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("predictor column {0} has zero variance")]
    ZeroVarianceColumn(usize),
    #[error("{0} did not converge within {1} iterations")]
    NonConvergence(&'static str, usize),
    #[error("mixed model needs at least two cows, got {0}")]
    TooFewGroups(usize),
    #[error("cow {0} has no random effect estimate in the fitted model")]
    UnknownCow(String),

    #[error("response has zero variance")]
    ZeroVariance,
    #[error("observed value is zero at index {0}; percentage error undefined")]
    ZeroTruth(usize),
    #[error("split {0} leaves an empty train or test side")]
    DegenerateSplit(String),
    #[error("invalid k = {k} for {n} cows")]
    InvalidK { k: usize, n: usize },
    #[error("incompatible design: {0}")]
    IncompatibleDesign(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("scene does not fit in frame: {0}")]
    SpecOutOfFrame(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
