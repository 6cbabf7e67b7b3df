use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty graph")]
    EmptyGraph,

    #[error("no edges")]
    NoEdges,

    #[error("unknown node id `{0}`")]
    UnknownNode(String),

    #[error("nothing to expand")]
    NothingToExpand,

    #[error("zero total clicks")]
    ZeroClicks,

    #[error("group `{0}` has no members")]
    EmptyGroup(String),

    #[error("cyclic reblog chain in post `{0}`")]
    CyclicChain(String),

    #[error("set did no reblogging")]
    NoReblogging,

    #[error("set received no reblogs")]
    NoReblogsReceived,

    #[error("flat engagement")]
    FlatEngagement,

    #[error("not enough data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
