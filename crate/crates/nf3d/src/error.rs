//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input file could not be parsed; carries the position of the offence.
    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: String,
        location: String,
        message: String,
    },

    /// Invalid parameter combination, rejected before any work starts.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Geometry that cannot be processed (all points identical, no
    /// non-degenerate triangle, ...).
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),

    /// Requested operation does not apply to the given input.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Optimization produced non-finite values.
    #[error("training diverged: {0}")]
    Training(String),

    /// Malformed bitstream; `offset` is the byte offset of the defect.
    #[error("bitstream error at byte {offset}: {message}")]
    Bitstream { offset: usize, message: String },

    /// Stored and recomputed CRC32 disagree.
    #[error("checksum mismatch over bytes 0..{len}: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32, len: usize },

    /// The decoded field has no zero level set at this rate.
    #[error("empty isosurface: shape lost at this rate")]
    EmptySurface,

    /// Colors required but absent from the input.
    #[error("missing colors: {0}")]
    MissingColors(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
