use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("field contains non-finite values")]
    NonFinite,

    #[error("optimization diverged: {0}")]
    Diverged(String),

    #[error("pyramid with {levels} levels would shrink below 2x2 (level {level} is {width}x{height})")]
    TooManyLevels {
        levels: usize,
        level: usize,
        width: usize,
        height: usize,
    },

    #[error("cannot pick {k} seeds from {n} descriptors")]
    TooFewDescriptors { k: usize, n: usize },

    #[error("channel mismatch: exemplar has {exemplar} channels, search has {search}")]
    ChannelMismatch { exemplar: usize, search: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no image frames found in {0}")]
    EmptyDirectory(PathBuf),

    #[error("frame {file} is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    DimsMismatch {
        file: PathBuf,
        expected_w: usize,
        expected_h: usize,
        found_w: usize,
        found_h: usize,
    },

    #[error("sequence in {dir} has {found} frame(s), need at least 2")]
    TooFewFrames { dir: PathBuf, found: usize },

    #[error("unsupported image format in {file}: {reason}")]
    UnsupportedFormat { file: PathBuf, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("landmark {landmark}: frame indices decrease at line {line}")]
    NonMonotoneFrames { landmark: u32, line: usize },

    #[error("bad magic bytes {0:?}, expected \"LSDF\"")]
    BadMagic([u8; 4]),

    #[error("field file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("field file declares {0} channels, expected 1 or 2")]
    BadChannelCount(u32),

    #[error("field file has {0} unexpected trailing bytes")]
    TrailingData(usize),

    #[error("landmark {landmark} has no estimate for annotated frame {frame}")]
    MissingFrame { landmark: u32, frame: usize },

    #[error("landmark {landmark} position ({x}, {y}) lies outside the {width}x{height} frame")]
    OutOfFrame {
        landmark: u32,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("empty input")]
    EmptyInput,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged(_) | Error::NonFinite)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
