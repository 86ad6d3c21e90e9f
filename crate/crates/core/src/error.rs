use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge #{index} ({src} -> {dst}, relation {relation}) is out of range for {num_nodes} nodes")]
    EdgeOutOfRange {
        index: usize,
        src: usize,
        dst: usize,
        relation: usize,
        num_nodes: usize,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid feature matrix: {0}")]
    InvalidFeatures(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("class {0} has no members")]
    EmptyClass(usize),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("node {node} has no same-class training peer (class {class})")]
    LonelyClass { node: usize, class: usize },

    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("no edges among {0} nodes")]
    NoEdges(String),

    #[error("split '{0}' is empty")]
    EmptySplit(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("unknown node id '{0}'")]
    UnknownNode(String),

    #[error("duplicate label row for node '{0}'")]
    DuplicateLabel(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("repetition with seed {seed} failed: {source}")]
    Repetition {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
