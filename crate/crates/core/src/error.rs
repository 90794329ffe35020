//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lexicon error: {0}")]
    Lexicon(String),

    #[error("slot index {slot} out of range for {n_tokens} tokens ({n_slots} slots)")]
    SlotOutOfRange {
        slot: usize,
        n_tokens: usize,
        n_slots: usize,
    },

    #[error("front-end error: {0}")]
    FrontEnd(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("shape mismatch in {op}: left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("dimension error in {op}: {msg} (shape {shape:?})")]
    Dimension {
        op: &'static str,
        msg: String,
        shape: Vec<usize>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing upstream artifact: {0}")]
    UpstreamMissing(String),

    #[error("config hash mismatch for {artifact}: expected {expected}, found {found}")]
    ConfigHashMismatch {
        artifact: String,
        expected: String,
        found: String,
    },

    #[error("checksum failure: {0}")]
    Checksum(String),

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
