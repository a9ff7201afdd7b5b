use std::fmt;
use std::path::PathBuf;

/// Errors raised while parsing or validating a weight archive.
#[derive(Debug, thiserror::Error)]
pub enum WeightError {
    #[error("bad magic bytes {found:?}, expected \"PTDW\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported weight archive version {0}")]
    UnsupportedVersion(u32),
    #[error("archive truncated while reading {what} at byte {offset}")]
    Truncated { what: &'static str, offset: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("tensor name is not valid UTF-8")]
    InvalidName,
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("payload of {name:?} holds {found} values but its shape needs {expected}")]
    PayloadLength {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Pipeline stage an error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pyramid,
    StructurePrediction,
    Fusion,
    Denoising,
    Reconstruction,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Pyramid => "pyramid",
            Stage::StructurePrediction => "structure-prediction",
            Stage::Fusion => "fusion",
            Stage::Denoising => "denoising",
            Stage::Reconstruction => "reconstruction",
            Stage::Output => "output",
        };
        f.write_str(name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed PNG: {message}")]
    MalformedPng { path: PathBuf, message: String },
    #[error("{path}: unsupported image format: {message}")]
    UnsupportedFormat { path: PathBuf, message: String },
    #[error("weight archive: {0}")]
    Weights(#[from] WeightError),
    #[error("backend failed on patch {patch_index}: {source}")]
    Backend {
        patch_index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at(self, stage: Stage) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn backend(patch_index: usize, source: Error) -> Self {
        Error::Backend {
            patch_index,
            source: Box::new(source),
        }
    }

    /// Whether a backend call sits anywhere in the chain.
    pub fn from_backend(&self) -> bool {
        match self {
            Error::Backend { .. } => true,
            Error::Stage { source, .. } => source.from_backend(),
            _ => false,
        }
    }

    /// Innermost error, with stage and patch tags peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Backend { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
