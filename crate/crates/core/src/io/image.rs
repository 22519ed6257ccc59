//! Grayscale image PNGs. 8- and 16-bit grayscale files are read and
//! normalized to `[0, 1]`; writes are 8-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{GrayImage, IoError};

pub fn read_gray_image(path: &Path) -> Result<GrayImage, IoError> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder
        .read_info()
        .map_err(|e| IoError::Png(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(IoError::format(path, "expected a grayscale PNG"));
    }
    let bit_depth = info.bit_depth;
    let buf_size = reader
        .output_buffer_size()
        .ok_or_else(|| IoError::format(path, "image dimensions overflow"))?;
    let mut buf = vec![0u8; buf_size];
    let out = reader
        .next_frame(&mut buf)
        .map_err(|e| IoError::Png(format!("{}: {e}", path.display())))?;
    let data: Vec<f32> = match bit_depth {
        png::BitDepth::Eight => buf[..out.buffer_size()]
            .iter()
            .map(|v| *v as f32 / 255.0)
            .collect(),
        png::BitDepth::Sixteen => buf[..out.buffer_size()]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect(),
        other => {
            return Err(IoError::format(
                path,
                format!("unsupported bit depth {other:?}"),
            ))
        }
    };
    GrayImage::from_data(out.width, out.height, data)
        .map_err(|_| IoError::format(path, "size mismatch"))
}

pub fn write_gray_image(image: &GrayImage, path: &Path) -> Result<(), IoError> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, image.width(), image.height());
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| IoError::Png(e.to_string()))?;
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| IoError::Png(e.to_string()))?;
    Ok(())
}
