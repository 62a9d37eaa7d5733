//! Crate-wide error type.
//!
//! Every error carries a stable machine-readable category used by the CLI
//! for single-line error reporting and exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("padding bounds violated: {0}")]
    PadBounds(String),

    #[error("shape inference failed at layer {layer}: {detail}")]
    ShapeInference { layer: usize, detail: String },

    #[error("misaligned plan at layer {layer}: {detail}")]
    MisalignedPlan { layer: usize, detail: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("degenerate features at layer {layer}: spatial std underflow")]
    DegenerateFeatures { layer: usize },

    #[error("training diverged (non-finite loss) in trial {trial} at epoch {epoch}")]
    Divergence { trial: usize, epoch: usize },

    #[error("format error in {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable category tag for machine-parseable CLI errors.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::NonFinite { .. } => "non-finite",
            Error::LabelOutOfRange { .. } => "label-range",
            Error::PadBounds(_) => "pad-bounds",
            Error::ShapeInference { .. } => "shape-inference",
            Error::MisalignedPlan { .. } => "misaligned-plan",
            Error::EmptyDataset => "empty-dataset",
            Error::DegenerateFeatures { .. } => "degenerate-features",
            Error::Divergence { .. } => "divergence",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
