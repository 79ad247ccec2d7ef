use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants are grouped by the failure class they map
/// to at the CLI boundary (config = 2, data = 3, model = 4, internal = 5).
#[derive(Debug, Error)]
pub enum Error {
    // --- data ingestion ---
    #[error("malformed CIFAR-10 batch: {len} bytes is not a multiple of 3073 (partial record starts at offset {offset})")]
    MalformedBatch { len: usize, offset: usize },
    #[error("record {record}: invalid label byte {label}, expected < {class_count}")]
    InvalidLabel {
        record: usize,
        label: u8,
        class_count: usize,
    },
    #[error("resize dimensions {h}x{w} are degenerate, need at least 3x3")]
    DegenerateResize { h: usize, w: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    // --- numeric fitting ---
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("window {window}x{window} exceeds padded map size {padded}")]
    WindowTooLarge { window: usize, padded: usize },
    #[error("hop {hop}: no intermediate channel survives energy threshold th1={th1}")]
    EmptyIntermediate { hop: usize, th1: f64 },
    #[error(
        "inconsistent hop shapes: expected {expected}x{expected} at level {level}, got {got}x{got}"
    )]
    InconsistentShapes {
        level: usize,
        expected: usize,
        got: usize,
    },

    // --- classifier ---
    #[error("training data contains a single class; need at least 2")]
    SingleClass,
    #[error("class {class} has no training samples")]
    MissingClass { class: usize },
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("missing classifier for hop {hop}, iteration {iteration}")]
    MissingClassifier { hop: usize, iteration: usize },

    // --- model container ---
    #[error("bad container magic {found:?}")]
    BadMagic { found: [u8; 8] },
    #[error("unsupported container version {version:?}")]
    UnsupportedVersion { version: [u8; 2] },
    #[error("checksum mismatch in chunk {chunk}")]
    ChecksumMismatch { chunk: String },
    #[error("unknown chunk kind {kind} in container version {version}")]
    UnknownChunk { kind: u16, version: String },
    #[error("container truncated while reading {what}")]
    Truncated { what: String },

    // --- configuration ---
    #[error("config error: {0}")]
    Config(String),
}

/// Process exit codes per failure class.
pub mod exit_code {
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const MODEL: i32 = 4;
    pub const INTERNAL: i32 = 5;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) => exit_code::CONFIG,
            MalformedBatch { .. } | InvalidLabel { .. } | Io { .. } | DegenerateResize { .. } => {
                exit_code::DATA
            }
            BadMagic { .. }
            | UnsupportedVersion { .. }
            | ChecksumMismatch { .. }
            | UnknownChunk { .. }
            | Truncated { .. } => exit_code::MODEL,
            _ => exit_code::INTERNAL,
        }
    }
}
