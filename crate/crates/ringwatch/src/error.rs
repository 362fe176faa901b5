use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum DocumentError {
    #[error("malformed session document: {0}")]
    Malformed(String),
    #[error("event {index} has negative timestamp {t}")]
    NegativeTimestamp { index: usize, t: i64 },
    #[error("event {index} has unknown kind {kind:?}")]
    UnknownEventKind { index: usize, kind: String },
    #[error("session id {0} appears twice in the corpus")]
    DuplicateSessionId(String),
}

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("model format version {found}, this build reads {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("model file is truncated")]
    TruncatedFile,
    #[error("model shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ringwatch_core::Error),
    #[error("{path}: {source}")]
    Document { path: String, source: DocumentError },
    #[error("{path}: {source}")]
    Model { path: String, source: ModelFileError },
    #[error("config error: {0}")]
    Config(String),
    #[error("artifact {path} does not match the digest recorded by stage {stage}")]
    Tampered { path: PathBuf, stage: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// 2 for bad input (documents, configs, artifacts), 1 for failures while
    /// running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Document { .. } | Error::Model { .. } | Error::Config(_) | Error::Tampered { .. } => 2,
            Error::Core(e) => match e {
                ringwatch_core::Error::InvalidArgument(_)
                | ringwatch_core::Error::ConfigInfeasible(_)
                | ringwatch_core::Error::DimensionMismatch { .. } => 2,
                _ => 1,
            },
            Error::Io { .. } | Error::Runtime(_) => 1,
        }
    }
}
