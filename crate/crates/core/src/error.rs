use std::path::PathBuf;

use thiserror::Error;

use crate::diffmath::GraphError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("IDX {0}")]
    Idx(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("model file version {found} is newer than the supported version {supported}")]
    ModelVersion { found: u32, supported: u32 },
    #[error("model file checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("OBJ line {line}: {reason}")]
    Obj { line: usize, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("canvas {canvas:?} is too small for a {image:?} image at scale {scale}")]
    CanvasTooSmall {
        canvas: (usize, usize),
        image: (usize, usize),
        scale: f64,
    },
    #[error("expected {expected} colour channels, got {got}")]
    ChannelCount { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("class {class} is out of range for {count} classes")]
    InvalidClass { class: usize, count: usize },
    #[error("training diverged at epoch {epoch}, batch {batch} (loss is not finite); lower the learning rate")]
    Diverged { epoch: usize, batch: usize },
    #[error("objective became non-finite at step {step}: {detail}")]
    NonFiniteObjective { step: usize, detail: String },
    #[error("{0} must not be empty")]
    Empty(&'static str),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
