use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("event at {at_ms} ms precedes last logged event at {last_ms} ms")]
    OutOfOrder { at_ms: u64, last_ms: u64 },
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error("session is still open")]
    OpenSession,
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("turn has no user reply")]
    NoReply,
    #[error("typing interval is zero or negative")]
    DegenerateInterval,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("degenerate labels: dimension `{0}` has a single class")]
    DegenerateLabel(&'static str),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("effect size undefined: pooled standard deviation is zero")]
    UndefinedEffect,
    #[error("improvement undefined: control mean is zero")]
    UndefinedImprovement,
    #[error("report is missing `{0}`")]
    MissingField(&'static str),
    #[error("report field `{0}` does not match its raw outcomes")]
    Inconsistent(&'static str),
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("turn {0} does not exist")]
    TurnNotFound(u32),
    #[error("conflict: {0}")]
    Conflict(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
