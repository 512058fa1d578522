use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("non-numeric value {value:?} at row {row}, column {column:?}")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("unknown label column {0:?}")]
    UnknownLabelColumn(String),
    #[error("fewer than 2 rows")]
    TooFewRows,
    #[error("magic mismatch in {file}: expected {expected}, found {found}")]
    MagicMismatch {
        file: &'static str,
        expected: u32,
        found: u32,
    },
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("truncated {0} file")]
    Truncated(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: String,
        found: String,
    },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("{scheme} weighting needs a dense first layer over the inputs, but layer {layer:?} is {kind}")]
    NeedsDenseFirstLayer {
        scheme: &'static str,
        layer: String,
        kind: &'static str,
    },
    #[error("underdetermined surrogate fit: {samples} samples for {needed} unknowns")]
    Underdetermined { samples: usize, needed: usize },
    #[error("model produced non-finite outputs")]
    NonFiniteOutput,
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("invalid target index {index} for {outputs} outputs")]
    InvalidTarget { index: usize, outputs: usize },
    #[error("k = {k} out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("space mismatch: weights over {weights}, index over {index}")]
    SpaceMismatch { weights: String, index: String },
    #[error("no neighbours")]
    NoNeighbors,
    #[error("train/test provenance overlap on case {0}")]
    ProvenanceOverlap(usize),
    #[error("scheme {scheme} is not available in space {space}")]
    SchemeSpaceIncompatible { scheme: String, space: String },
    #[error("no conv layer")]
    NoConvLayer,
    #[error("input is not an image")]
    NotImage,
    #[error("model is required for latent space {0}")]
    ModelRequired(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TwinError> = std::result::Result<T, E>;

impl TwinError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TwinError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        TwinError::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
