use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed field `{field}`: {message}")]
    MalformedLine {
        line: usize,
        field: String,
        message: String,
    },

    #[error("record `{record_id}`: {message}")]
    InvalidRecord { record_id: String, message: String },

    #[error("embedding file format error: {0}")]
    Format(String),

    #[error("embedding data error: {0}")]
    Data(String),

    #[error("confusion matrix error: {0}")]
    Confusion(String),

    #[error("ontology error: {0}")]
    Ontology(String),

    #[error("missing embedding for key `{0}`")]
    MissingEmbedding(String),

    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("record `{0}` has no events")]
    NoEvents(String),

    #[error("label `{0}` not present in confusion matrix")]
    UnknownLabel(String),

    #[error("operation not applicable: {0}")]
    NotApplicable(String),

    #[error("no single template registered for event type `{0}`")]
    TemplateNotFound(String),

    #[error("template syntax error: {0}")]
    TemplateSyntax(String),

    #[error("reserved token [X{0}] is not registered with the encoder")]
    UnregisteredToken(usize),

    #[error("cannot edit caption: {0}")]
    CannotEdit(String),

    #[error("completion service: {0}")]
    Completion(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical underflow in exp(-C/gamma) at gamma={gamma}: {detail}; use a larger gamma or the log-domain solver")]
    Underflow { gamma: f64, detail: String },

    #[error("batch too small: need at least 2 items, got {0}")]
    BatchTooSmall(usize),

    #[error("loss diverged: first non-finite term is {0}")]
    Diverged(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
