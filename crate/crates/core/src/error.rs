use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("k must be in [1, 65535], got {0}")]
    InvalidK(u32),
    #[error("sting {sting} outside domain [1, {domain}]")]
    StingOutOfDomain { sting: u32, domain: u32 },
    #[error("antisting {value} outside domain [1, {domain}]")]
    AntistingOutOfDomain { value: u32, domain: u32 },
    #[error("expected {k} distinct antistings, got {got}")]
    AntistingsSize { got: usize, k: u32 },
    #[error("next_label takes at most {k} labels, got {got}")]
    TooManyInputs { got: usize, k: u32 },
    #[error("cannot parse label {0:?}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("link_send called while the peer holds the token")]
    OffTurn,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("unknown property {0:?}")]
    UnknownProperty(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
