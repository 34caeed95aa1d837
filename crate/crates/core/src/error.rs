//! Error types for the verbs API, the packet codec and the image codec.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerbsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("resource exhausted: {0}")]
    ResourceExhausted(&'static str),
    #[error("identifier collision: {kind} {id:#x} already in use")]
    Collision { kind: &'static str, id: u32 },
    #[error("unknown {kind} handle {id:#x}")]
    UnknownHandle { kind: &'static str, id: u32 },
}

/// Packet wire-format decode failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("packet truncated")]
    Truncated,
    #[error("unsupported packet version {0:#x}")]
    BadVersion(u8),
    #[error("unknown opcode {0:#x}")]
    BadOpcode(u8),
    #[error("unknown ack syndrome {0:#x}")]
    BadSyndrome(u8),
    #[error("field {0} exceeds 24 bits")]
    FieldOverflow(&'static str),
    #[error("trailing bytes after packet")]
    TrailingBytes,
}

/// Context image decode failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("image truncated")]
    Truncated,
    #[error("bad image magic")]
    BadMagic,
    #[error("unsupported image version {0}")]
    BadVersion(u16),
    #[error("unknown record type {0:#x}")]
    BadRecordType(u8),
    #[error("record length mismatch for type {0:#x}")]
    RecordLength(u8),
    #[error("records out of dependency order")]
    RecordOrder,
    #[error("object count mismatch: header says {header}, found {found}")]
    CountMismatch { header: u32, found: u32 },
    #[error("invalid enum value {value} for {field}")]
    BadEnum { field: &'static str, value: u8 },
}
