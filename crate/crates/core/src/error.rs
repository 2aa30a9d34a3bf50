use std::path::PathBuf;

use thiserror::Error;

/// Shape and dimension errors raised by the dense grid kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("{what}: expected {expected}, got {got}")]
    Mismatch {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("invalid grid shape: {0}")]
    InvalidShape(String),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("weight slot `{0}` is missing")]
    MissingSlot(String),
    #[error("weight slot `{name}` has dims {got:?}, expected {expected:?}")]
    SlotDims {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

impl ShapeError {
    pub(crate) fn mismatch(
        what: &'static str,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        ShapeError::Mismatch {
            what,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("k = {k} exceeds the {cells} cells of the map")]
    KTooLarge { k: usize, cells: usize },
    #[error("communication volume is undefined for zero bytes")]
    ZeroBytes,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("scene generation failed after {attempts} attempts: {constraint}")]
    Infeasible { attempts: usize, constraint: String },
    #[error("agent {0} is not part of the scene")]
    UnknownAgent(u32),
    #[error("invalid scene: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("sender {sender}: position ({h}, {w}) outside {rows}x{cols} grid")]
    PositionOutOfGrid {
        sender: u32,
        h: i64,
        w: i64,
        rows: usize,
        cols: usize,
    },
    #[error("sender {sender}: supplied {got} features for {expected} requested positions")]
    CountMismatch {
        sender: u32,
        expected: usize,
        got: usize,
    },
    #[error("agent {receiver} is not connected to agent {sender}")]
    Disconnected { sender: u32, receiver: u32 },
    #[error("duplicate agent id {0}")]
    DuplicateAgent(u32),
    #[error("invalid message payload: {0}")]
    InvalidPayload(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("truncated buffer at offset {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("bad magic {found:#010x} at offset 0")]
    BadMagic { found: u32 },
    #[error("unsupported version {found} at offset {offset}")]
    BadVersion { offset: usize, found: u16 },
    #[error("unknown message kind {found} at offset {offset}")]
    BadKind { offset: usize, found: u8 },
    #[error("inconsistent payload at offset {offset}: {reason}")]
    Inconsistent { offset: usize, reason: String },
    #[error("{extra} trailing bytes at offset {offset}")]
    Trailing { offset: usize, extra: usize },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Field { field: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl ConfigError {
    pub fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Umbrella error for the pipeline and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
