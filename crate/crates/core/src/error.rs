use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate post id `{0}`")]
    DuplicatePost(String),

    #[error("unknown user `{0}`")]
    UnknownUser(String),

    #[error("unknown thread `{0}`")]
    UnknownThread(String),

    #[error("unknown post `{0}`")]
    UnknownPost(String),

    #[error("unresolvable posts: {}", .0.join(", "))]
    UnresolvedPosts(Vec<String>),

    #[error("file format: {0}")]
    Format(String),

    #[error("unsupported snapshot version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("sampling: {0}")]
    Sampling(String),

    #[error("anchor `{0}` has no other post by its author")]
    IneligibleAnchor(String),

    #[error("class {class} has {found} labeled posts, need at least {needed}")]
    ClassTooSmall { class: usize, found: usize, needed: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint fingerprint mismatch: {0}")]
    Fingerprint(String),

    #[error("missing label on post `{0}`")]
    MissingLabel(String),

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("{context}: {source}")]
    Io {
        context: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("few-shot run at fraction {fraction}: {source}")]
    FewShot {
        fraction: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { context: path.into(), source }
    }
}
