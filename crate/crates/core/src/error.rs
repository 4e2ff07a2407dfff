use std::path::PathBuf;

use xgrasp_autodiff::AutodiffError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("MalformedDocument: {0}")]
    MalformedDocument(String),
    #[error("CyclicKinematics: {0}")]
    CyclicKinematics(String),
    #[error("UnknownLinkRef: joint {joint} references undeclared link {link}")]
    UnknownLinkRef { joint: String, link: String },
    #[error("UnsupportedJoint: joint {joint} has type {kind}")]
    UnsupportedJoint { joint: String, kind: String },
    #[error("CapacityExceeded: {what} is {got}, capacity {max}")]
    CapacityExceeded { what: &'static str, got: usize, max: usize },
    #[error("DegenerateInput: {0}")]
    DegenerateInput(String),
    #[error("DimensionMismatch: {what} expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("NotAFingertip: link {0}")]
    NotAFingertip(String),
    #[error("NoFingertips: hand {0} has no fingertip links")]
    NoFingertips(String),
    #[error("EmptyData: {0}")]
    EmptyData(&'static str),
    #[error("AllMasked: {0}")]
    AllMasked(&'static str),
    #[error("EmptyCloud")]
    EmptyCloud,
    #[error("NoContacts")]
    NoContacts,
    #[error("ConfigMismatch: {0}")]
    ConfigMismatch(String),
    #[error("EmptyDataset")]
    EmptyDataset,
    #[error("SchemaError at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("MissingCloud: {0}")]
    MissingCloud(PathBuf),
    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Input problems (bad files, schemas, shapes) as opposed to numeric failures.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::DegenerateInput(_) | Error::Autodiff(_) | Error::NoContacts
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
