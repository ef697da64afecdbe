//! Versioned on-disk formats and dataset ingestion.
//!
//! Text formats are line oriented and tab separated. Each file starts with
//! `# <format> <version>`, followed by `#` comment lines naming the columns
//! of every record tag. Floats are written with 17 significant digits so a
//! save/load round trip is exact. Large arrays live in little-endian binary
//! blobs described by a small text sidecar. See FORMATS.md.

mod binary;
mod dataset;
mod gmod;
mod text;

use std::fmt;
use std::path::Path;

use thiserror::Error;

pub use binary::{
    parse_features, parse_flows, read_features, read_flows, render_features, render_flows,
    write_features, write_flows,
};
pub use dataset::{
    load_dataset, Dataset, LoadOptions, Manifest, VideoData, VideoEntry, MANIFEST_VERSION,
};
pub use gmod::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
};
pub use text::*;

/// Version written by and accepted for every format.
pub const FORMAT_VERSION: u32 = 1;
pub const SUPPORTED_VERSIONS: &[u32] = &[FORMAT_VERSION];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}: unsupported {format} version {found}; supported versions: {supported:?}")]
    UnsupportedVersion {
        file: String,
        format: String,
        found: String,
        supported: Vec<u32>,
    },
    #[error("{file}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    InvariantViolation {
        file: String,
        line: Option<usize>,
        message: String,
    },
    #[error("{file} (byte {offset}): {message}")]
    Binary {
        file: String,
        offset: usize,
        message: String,
    },
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot serialize {what}: {message}")]
    Unserializable { what: String, message: String },
}

impl IoError {
    pub fn invariant(file: &str, line: Option<usize>, message: impl fmt::Display) -> Self {
        Self::InvariantViolation {
            file: file.to_string(),
            line,
            message: message.to_string(),
        }
    }
}

/// All problems found while loading a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetErrors(pub Vec<IoError>);

impl fmt::Display for DatasetErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} problem(s) loading dataset", self.0.len())?;
        for e in &self.0 {
            write!(f, "\n  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for DatasetErrors {}

pub fn read_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IoError::MissingFile(path.display().to_string()),
        _ => IoError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        },
    })
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IoError::MissingFile(path.display().to_string()),
        _ => IoError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        },
    })
}

/// Writes a file, creating parent directories.
pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), IoError> {
    let io = |e: std::io::Error| IoError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}
