//! File formats: `BTEN` tensors, 8-bit grayscale PNG rasters and the JSON
//! evaluation manifest. Readers reject malformed input instead of coercing
//! it, and every error names the file it came from.

mod manifest;
mod raster;
mod tensor;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::ModelError;

pub use manifest::{
    load_manifest, parse_manifest, FusedPaths, Item, LogitsPaths, Manifest, SubsetEntry, MANIFEST_SCHEMA_ID,
};
pub use raster::{
    decode_gray8, encode_gray8, read_class_map, read_confidence_map, read_gray8, read_validity_mask,
    write_class_map, write_confidence_map, write_gray8, write_validity_mask,
};
pub use tensor::{decode_tensor, encode_tensor, read_tensor, write_tensor, TENSOR_MAGIC, TENSOR_VERSION};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, not a tensor file")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported tensor version {version}")]
    UnsupportedVersion { path: PathBuf, version: u8 },
    #[error("{path}: unsupported dtype {dtype}")]
    UnsupportedDtype { path: PathBuf, dtype: u8 },
    #[error("{path}: unsupported rank {rank} (expected {expected})")]
    BadRank { path: PathBuf, rank: u8, expected: String },
    #[error("{path}: truncated payload, expected {expected} bytes after offset {offset}, found {actual}")]
    TruncatedPayload {
        path: PathBuf,
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {extra} unexpected trailing bytes after payload")]
    TrailingBytes { path: PathBuf, extra: usize },
    #[error("{path}: non-finite value at byte offset {offset}")]
    NonFiniteData { path: PathBuf, offset: usize },
    #[error("{path}: wrong bit depth {depth}, expected 8-bit")]
    WrongBitDepth { path: PathBuf, depth: u8 },
    #[error("{path}: wrong channel layout {color}, expected single-channel grayscale")]
    WrongChannelCount { path: PathBuf, color: String },
    #[error("{path}: png: {message}")]
    Png { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Model {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("{path}: schema violation at {pointer}: {message}")]
    Schema {
        path: PathBuf,
        pointer: String,
        message: String,
    },
    #[error("{path}: duplicate item id {id:?} in subset {subset}")]
    DuplicateId {
        path: PathBuf,
        subset: String,
        id: String,
    },
}

pub type Result<T> = std::result::Result<T, IoError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn model_err(path: &Path) -> impl FnOnce(ModelError) -> IoError + '_ {
    move |source| IoError::Model {
        path: path.to_path_buf(),
        source,
    }
}

/// Create the parent directory of `path` if needed.
pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    Ok(())
}
