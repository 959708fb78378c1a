use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    Load {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("not enough eligible COAs: need {needed} with at least {per_coa} cases each, found {eligible} (short by {})", needed - eligible)]
    SampleShortfall {
        needed: usize,
        per_coa: usize,
        eligible: usize,
    },

    #[error("case {case_id} cites {article}, which is not in the article index")]
    IndexMismatch { case_id: String, article: String },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("pair sets differ: {0}")]
    PairMismatch(String),

    #[error("pair ({0}, {1}) missing from score table")]
    MissingPair(String, String),

    #[error("invalid vector for case {case_id}: {reason}")]
    InvalidVector { case_id: String, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("embedding failed for {} case(s) [{}]: {message}", failed.len(), failed.join(", "))]
    Embedding {
        failed: Vec<String>,
        message: String,
    },

    #[error("graph too large for clique enumeration: {nodes} nodes (limit {limit}); use a lower rank cutoff")]
    GraphTooLarge { nodes: usize, limit: usize },

    #[error("GEXF parse error: {0}")]
    Gexf(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("stage `{stage}` requires `{requires}`; run `coasim run {requires}` first")]
    MissingPrerequisite { stage: String, requires: String },

    #[error("workspace is locked by another run ({}); remove the lock file if no run is active", .0.display())]
    WorkspaceLocked(PathBuf),

    #[error("workspace {} has no completed stages", .0.display())]
    EmptyWorkspace(PathBuf),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used in the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Load { .. } => "load",
            Error::SampleShortfall { .. } => "sample_shortfall",
            Error::IndexMismatch { .. } => "index_mismatch",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::EmptyInput(_) => "empty_input",
            Error::PairMismatch(_) => "pair_mismatch",
            Error::MissingPair(..) => "missing_pair",
            Error::InvalidVector { .. } => "invalid_vector",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Embedding { .. } => "embedding",
            Error::GraphTooLarge { .. } => "graph_too_large",
            Error::Gexf(_) => "gexf",
            Error::Config(_) => "config",
            Error::MissingPrerequisite { .. } => "missing_prerequisite",
            Error::WorkspaceLocked(_) => "workspace_locked",
            Error::EmptyWorkspace(_) => "empty_workspace",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
