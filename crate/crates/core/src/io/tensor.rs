//! `BTEN` tensor files.
//!
//! ```text
//! offset  size       field
//! 0       4          magic "BTEN"
//! 4       1          version (1)
//! 5       1          dtype (1 = f32)
//! 6       1          rank (2 or 3)
//! 7       4 * rank   extents, u32 little-endian
//! ...     4 * prod   payload, row-major f32 little-endian
//! ```

use std::path::Path;

use crate::model::{LogitsTensor, TensorKind};

use super::{ensure_parent, io_err, model_err, IoError, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"BTEN";
pub const TENSOR_VERSION: u8 = 1;
const DTYPE_F32: u8 = 1;

/// Serialise a tensor. Class logits are written as rank 2.
pub fn encode_tensor(t: &LogitsTensor) -> Vec<u8> {
    let [c, h, w] = t.dims();
    let extents: Vec<u32> = match t.kind() {
        TensorKind::ClassLogits => vec![c as u32, (h * w) as u32],
        _ => vec![c as u32, h as u32, w as u32],
    };
    let mut out = Vec::with_capacity(7 + 4 * extents.len() + 4 * t.data().len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(TENSOR_VERSION);
    out.push(DTYPE_F32);
    out.push(extents.len() as u8);
    for e in &extents {
        out.extend_from_slice(&e.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Raw extents and payload, validated for layout but not for kind.
pub(crate) fn decode_raw(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let p = || path.to_path_buf();
    if bytes.len() < 7 || &bytes[..4] != TENSOR_MAGIC {
        return Err(IoError::BadMagic { path: p() });
    }
    if bytes[4] != TENSOR_VERSION {
        return Err(IoError::UnsupportedVersion {
            path: p(),
            version: bytes[4],
        });
    }
    if bytes[5] != DTYPE_F32 {
        return Err(IoError::UnsupportedDtype {
            path: p(),
            dtype: bytes[5],
        });
    }
    let rank = bytes[6];
    if !(2..=3).contains(&rank) {
        return Err(IoError::BadRank {
            path: p(),
            rank,
            expected: "2 or 3".into(),
        });
    }
    let header = 7 + 4 * rank as usize;
    if bytes.len() < header {
        return Err(IoError::TruncatedPayload {
            path: p(),
            offset: 7,
            expected: 4 * rank as usize,
            actual: bytes.len() - 7,
        });
    }
    let extents: Vec<usize> = bytes[7..header]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    let count: usize = extents.iter().product();
    let payload = &bytes[header..];
    let expected = 4 * count;
    if payload.len() < expected {
        return Err(IoError::TruncatedPayload {
            path: p(),
            offset: header,
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(IoError::TrailingBytes {
            path: p(),
            extra: payload.len() - expected,
        });
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(IoError::NonFiniteData {
                path: p(),
                offset: header + 4 * i,
            });
        }
        data.push(v);
    }
    Ok((extents, data))
}

/// Parse a tensor of the given kind; the file rank must match the kind.
pub fn decode_tensor(bytes: &[u8], kind: TensorKind, path: &Path) -> Result<LogitsTensor> {
    let (extents, data) = decode_raw(bytes, path)?;
    if extents.len() != kind.rank() {
        return Err(IoError::BadRank {
            path: path.to_path_buf(),
            rank: extents.len() as u8,
            expected: format!("{} for {kind:?}", kind.rank()),
        });
    }
    let dims = match extents[..] {
        [r, c] => [r, c, 1],
        [c, h, w] => [c, h, w],
        _ => unreachable!(),
    };
    LogitsTensor::new(kind, dims, data).map_err(model_err(path))
}

pub fn read_tensor(path: &Path, kind: TensorKind) -> Result<LogitsTensor> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_tensor(&bytes, kind, path)
}

pub fn write_tensor(t: &LogitsTensor, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, encode_tensor(t)).map_err(io_err(path))
}
