//! Depth raster files.
//!
//! Two encodings are accepted, distinguished by file content:
//! - raw: 16-byte header (magic `DPTH`, u32 width, u32 height, f32 scale,
//!   little-endian) followed by `width*height` little-endian f32 values;
//!   depth in mm is `value * scale`, writers emit scale 1.0;
//! - 16-bit grayscale PNG with the mm-per-unit scale stored in a `tEXt`
//!   chunk keyed `depth_scale` (1.0 when absent); pixel value 0 is invalid.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DepthMap, IoError};

const RAW_MAGIC: &[u8; 4] = b"DPTH";
const PNG_MAGIC: &[u8; 4] = &[0x89, b'P', b'N', b'G'];
const SCALE_KEYWORD: &str = "depth_scale";

pub fn read_depth_map(path: &Path) -> Result<DepthMap, IoError> {
    let mut file = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)
        .map_err(|_| IoError::format(path, "file shorter than magic"))?;
    if &magic == RAW_MAGIC {
        read_raw(path, file)
    } else if &magic == PNG_MAGIC {
        drop(file);
        read_png(path)
    } else {
        Err(IoError::format(path, "unrecognized depth file magic"))
    }
}

fn read_raw(path: &Path, mut file: impl Read) -> Result<DepthMap, IoError> {
    let mut header = [0u8; 12];
    file.read_exact(&mut header)
        .map_err(|_| IoError::format(path, "truncated raw depth header"))?;
    let width = u32::from_le_bytes(header[0..4].try_into().unwrap());
    let height = u32::from_le_bytes(header[4..8].try_into().unwrap());
    let scale = f32::from_le_bytes(header[8..12].try_into().unwrap());
    if !scale.is_finite() || scale <= 0.0 {
        return Err(IoError::format(path, format!("invalid scale {scale}")));
    }
    let count = (width as usize)
        .checked_mul(height as usize)
        .ok_or_else(|| IoError::format(path, "width*height overflows"))?;
    let mut bytes = vec![0u8; count * 4];
    file.read_exact(&mut bytes)
        .map_err(|_| IoError::format(path, "truncated raw depth payload"))?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) * scale)
        .collect();
    DepthMap::from_data(width, height, data).map_err(|_| IoError::format(path, "size mismatch"))
}

fn read_png(path: &Path) -> Result<DepthMap, IoError> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder
        .read_info()
        .map_err(|e| IoError::Png(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(IoError::format(
            path,
            "depth PNG must be 16-bit grayscale",
        ));
    }
    let scale = info
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == SCALE_KEYWORD)
        .map(|c| c.text.trim().parse::<f32>())
        .transpose()
        .map_err(|_| IoError::format(path, "malformed depth_scale chunk"))?
        .unwrap_or(1.0);
    if !scale.is_finite() || scale <= 0.0 {
        return Err(IoError::format(path, format!("invalid scale {scale}")));
    }
    let buf_size = reader
        .output_buffer_size()
        .ok_or_else(|| IoError::format(path, "image dimensions overflow"))?;
    let mut buf = vec![0u8; buf_size];
    let out = reader
        .next_frame(&mut buf)
        .map_err(|e| IoError::Png(format!("{}: {e}", path.display())))?;
    let (width, height) = (out.width, out.height);
    // PNG sample order is big-endian.
    let data: Vec<f32> = buf[..out.buffer_size()]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 * scale)
        .collect();
    DepthMap::from_data(width, height, data).map_err(|_| IoError::format(path, "size mismatch"))
}

pub fn write_depth_map_raw(map: &DepthMap, path: &Path) -> Result<(), IoError> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(RAW_MAGIC)?;
    file.write_all(&map.width().to_le_bytes())?;
    file.write_all(&map.height().to_le_bytes())?;
    file.write_all(&1.0f32.to_le_bytes())?;
    for v in map.data() {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

/// Writes a 16-bit PNG where stored units are `depth_mm / scale`; values
/// beyond the u16 range saturate, which bounds the representable depth to
/// `65535 * scale` mm.
pub fn write_depth_map_png(map: &DepthMap, scale: f32, path: &Path) -> Result<(), IoError> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(IoError::format(path, format!("invalid scale {scale}")));
    }
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, map.width(), map.height());
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    encoder
        .add_text_chunk(SCALE_KEYWORD.to_string(), format!("{scale}"))
        .map_err(|e| IoError::Png(e.to_string()))?;
    let mut writer = encoder
        .write_header()
        .map_err(|e| IoError::Png(e.to_string()))?;
    let mut bytes = Vec::with_capacity(map.data().len() * 2);
    for v in map.data() {
        let units = (*v / scale).round().clamp(0.0, u16::MAX as f32) as u16;
        bytes.extend_from_slice(&units.to_be_bytes());
    }
    writer
        .write_image_data(&bytes)
        .map_err(|e| IoError::Png(e.to_string()))?;
    Ok(())
}
