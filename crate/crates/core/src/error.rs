use std::path::PathBuf;

use thiserror::Error;

use crate::notes::Attribute;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed MIDI at byte {offset}: {reason}")]
    Midi { offset: usize, reason: String },

    #[error("note-on for pitch {pitch} (channel {channel}) at byte {offset} is never released")]
    UnmatchedNoteOn { offset: usize, channel: u8, pitch: u8 },

    #[error("time value {value} is not representable at {ticks_per_quarter} ticks per quarter")]
    Quantization { value: String, ticks_per_quarter: u32 },

    #[error("input is empty: {0}")]
    EmptyInput(&'static str),

    #[error("invalid note: {0}")]
    InvalidNote(String),

    #[error("{attribute} value {value} is not in the vocabulary")]
    OutOfVocabulary { attribute: Attribute, value: String },

    #[error("{attribute} index {index} is out of range for vocabulary of size {size}")]
    IndexOutOfRange { attribute: Attribute, index: usize, size: usize },

    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward already ran on this graph")]
    BackwardTwice,

    #[error("parameter {0} has no gradient")]
    MissingGradient(String),

    #[error("unknown parameter {0}")]
    UnknownParameter(String),

    #[error("non-finite loss at step {step} (batch {batch}): {detail}")]
    NonFiniteLoss { step: u64, batch: usize, detail: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed text file: {0}")]
    Malformed(String),

    #[error("corrupt container: {0}")]
    Container(String),

    #[error("checkpoint does not match configuration: {0}")]
    CheckpointMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::NonFiniteLoss { .. } | Error::Degenerate(_) => ErrorKind::Numerical,
            Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
