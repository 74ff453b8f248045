//! 8-bit single-channel PNG rasters for class maps, confidence maps and
//! validity masks.

use std::io::Cursor;
use std::path::Path;

use crate::fusion::{dequantize_score, quantize_confidence};
use crate::model::{ClassCatalog, ClassMap, ConfidenceMap, ValidityMask};

use super::tensor::{decode_raw, TENSOR_MAGIC};
use super::{ensure_parent, io_err, model_err, IoError, Result};

/// Decode an 8-bit grayscale PNG into `(height, width, pixels)`.
pub fn decode_gray8(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let png_err = |e: png::DecodingError| IoError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(IoError::WrongBitDepth {
            path: path.to_path_buf(),
            depth: info.bit_depth as u8,
        });
    }
    if info.color_type != png::ColorType::Grayscale {
        return Err(IoError::WrongChannelCount {
            path: path.to_path_buf(),
            color: format!("{:?}", info.color_type),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0u8; w * h];
    reader.next_frame(&mut buf).map_err(png_err)?;
    Ok((h, w, buf))
}

pub fn read_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_gray8(&bytes, path)
}

/// Encode an 8-bit grayscale PNG.
pub fn encode_gray8(height: usize, width: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), height * width, "pixel count must match extents");
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Fast);
    let mut writer = enc.write_header().expect("in-memory png header");
    writer.write_image_data(pixels).expect("in-memory png data");
    writer.finish().expect("in-memory png finish");
    out
}

pub fn write_gray8(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, encode_gray8(height, width, pixels)).map_err(io_err(path))
}

pub fn read_class_map(path: &Path, catalog: &ClassCatalog) -> Result<ClassMap> {
    let (h, w, px) = read_gray8(path)?;
    ClassMap::new(h, w, px, catalog).map_err(model_err(path))
}

/// Confidence from an 8-bit PNG (`v / 255`) or, for full precision, a
/// `BTEN` tensor of shape `H x W` or `1 x H x W`.
pub fn read_confidence_map(path: &Path) -> Result<ConfidenceMap> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.starts_with(TENSOR_MAGIC) {
        let (extents, data) = decode_raw(&bytes, path)?;
        let (h, w) = match extents[..] {
            [h, w] | [1, h, w] => (h, w),
            _ => {
                return Err(IoError::BadRank {
                    path: path.to_path_buf(),
                    rank: extents.len() as u8,
                    expected: "H x W or 1 x H x W confidence".into(),
                })
            }
        };
        return ConfidenceMap::new(h, w, data).map_err(model_err(path));
    }
    let (h, w, px) = decode_gray8(&bytes, path)?;
    let scores = px.into_iter().map(dequantize_score).collect();
    ConfidenceMap::new(h, w, scores).map_err(model_err(path))
}

/// Zero is invalid, anything else is valid.
pub fn read_validity_mask(path: &Path) -> Result<ValidityMask> {
    let (h, w, px) = read_gray8(path)?;
    ValidityMask::new(h, w, px.into_iter().map(|v| v != 0).collect()).map_err(model_err(path))
}

pub fn write_class_map(path: &Path, map: &ClassMap) -> Result<()> {
    write_gray8(path, map.height(), map.width(), map.labels())
}

pub fn write_confidence_map(path: &Path, map: &ConfidenceMap) -> Result<()> {
    write_gray8(path, map.height(), map.width(), &quantize_confidence(map))
}

/// Valid pixels are written as 255, invalid as 0.
pub fn write_validity_mask(path: &Path, mask: &ValidityMask) -> Result<()> {
    let px: Vec<u8> = mask.valid().iter().map(|&v| if v { 255 } else { 0 }).collect();
    write_gray8(path, mask.height(), mask.width(), &px)
}
