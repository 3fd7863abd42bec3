use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch on {axis}: expected {expected}, got {actual}")]
    Shape {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("instance too large for exact enumeration: I + J = {units} exceeds {limit}")]
    TooLargeForEnumeration { units: usize, limit: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("non-finite values in {0} after update")]
    NonFinite(&'static str),

    #[error("invalid value for {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("index {index} out of range for {what} of length {len}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("hidden neuron cap {max_hidden} reached")]
    HiddenCap { max_hidden: usize },

    #[error("layer cap {max_layers} reached")]
    LayerCap { max_layers: usize },

    #[error("cannot remove all {0} hidden neurons")]
    RemoveAll(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("category {0} has fewer than 2 samples, cannot stratify")]
    Stratify(String),

    #[error("no images found under {}", .0.display())]
    NoImages(PathBuf),

    #[error("dataset root {} does not exist", .0.display())]
    MissingRoot(PathBuf),

    #[error("cannot decode image {}: {reason}", .path.display())]
    Decode { path: PathBuf, reason: String },

    #[error("degenerate image with zero width or height")]
    DegenerateImage,

    #[error("preprocessing mismatch: checkpoint expects {expected}, data has {actual}")]
    DescriptorMismatch { expected: String, actual: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub(crate) fn check_len(axis: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            axis,
            expected,
            actual,
        })
    }
}
