use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate (l = {l}, d = {d}) lies outside the road")]
    OffRoad { l: f64, d: f64 },

    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gap to leader must be positive, got {0} m")]
    NonPositiveGap(f64),

    #[error("input width {got} does not match network input width {expected}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("replay buffer holds {len} entries, cannot draw a batch of {requested}")]
    Underfilled { len: usize, requested: usize },

    #[error("weight file: {0}")]
    WeightFormat(#[from] FormatError),

    #[error("training diverged at update {update}: loss = {loss}")]
    Diverged { update: u64, loss: f64 },

    #[error("no logs found under {0}")]
    MissingLogs(PathBuf),

    #[error("malformed log {path}: {reason}")]
    MalformedLog { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

/// Structured failures when decoding binary weight / replay snapshots.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("layer dimensions do not chain: {0}")]
    Dimensions(String),
    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}
