use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised across the toolkit.
///
/// Every variant maps onto a short, stable class string (see [`Error::class`])
/// that the CLI prints on failure so callers can branch on it.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("invalid lexicon: {0}")]
    Lexicon(String),

    #[error("unbound placeholder `{0}` in prompt template")]
    UnboundPlaceholder(String),

    #[error("invalid chat turn sequence: {0}")]
    ChatTurns(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("no stub response for request {digest}")]
    StubMiss { digest: String },

    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("degenerate bounding box {w}x{h}")]
    DegenerateBox { w: u32, h: u32 },

    #[error("bounding box ({x},{y},{w},{h}) lies outside the {width}x{height} image")]
    BoxOutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },

    #[error("architecture mismatch: bundle is `{bundle}`, checkpoint is `{checkpoint}`")]
    ArchitectureMismatch { bundle: String, checkpoint: String },

    #[error("bundle not found: {0}")]
    BundleNotFound(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("embeddings are not unit-normalized (row {row} has norm {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("report aggregate {stored} does not match recomputed {recomputed}")]
    ReportMismatch { stored: f64, recomputed: f64 },

    #[error("adapter failure: {0}")]
    Adapter(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(location: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }

    /// Machine-parsable error class.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Lexicon(_) => "lexicon",
            Error::UnboundPlaceholder(_) => "unbound-placeholder",
            Error::ChatTurns(_) => "chat-turns",
            Error::Transport { .. } => "transport",
            Error::Protocol(_) => "protocol",
            Error::StubMiss { .. } => "stub-miss",
            Error::DimMismatch { .. } => "dim-mismatch",
            Error::DegenerateBox { .. } => "degenerate-box",
            Error::BoxOutOfBounds { .. } => "box-out-of-bounds",
            Error::ArchitectureMismatch { .. } => "architecture-mismatch",
            Error::BundleNotFound(_) => "bundle-not-found",
            Error::Checkpoint(_) => "checkpoint",
            Error::Image { .. } => "image",
            Error::NotNormalized { .. } => "not-normalized",
            Error::Config(_) => "config",
            Error::Diverged { .. } => "diverged",
            Error::EmptyDataset(_) => "empty-dataset",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::DuplicateId(_) => "duplicate-id",
            Error::ReportMismatch { .. } => "report-mismatch",
            Error::Adapter(_) => "adapter",
        }
    }
}
