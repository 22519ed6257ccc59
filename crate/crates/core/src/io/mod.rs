//! Readers and writers for the on-disk formats, plus the raster and
//! trajectory types they produce.
//!
//! All multi-byte integers and floats are little-endian; point clouds are
//! ASCII PLY. Every reader returns a typed error on malformed input rather
//! than panicking, and every reader/writer pair round-trips losslessly at
//! its declared precision.

mod depth;
mod image;
mod intrinsics_file;
mod map_store;
mod ply;
mod tum;

pub use depth::{read_depth_map, write_depth_map_png, write_depth_map_raw};
pub use image::{read_gray_image, write_gray_image};
pub use intrinsics_file::{read_intrinsics, write_intrinsics};
pub use map_store::{load_global_map, save_global_map};
pub use ply::{read_point_cloud, write_point_cloud, CloudPoint};
pub use tum::{read_trajectory, write_trajectory};

use crate::geometry::{Point3, RigidPose, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("unsupported version in {path}: found {found}, expected {expected}")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("png error: {0}")]
    Png(String),
}

impl IoError {
    pub(crate) fn format(path: &std::path::Path, message: impl Into<String>) -> Self {
        IoError::Format {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}

/// Per-pixel metric depth in millimeters. Invalid pixels carry depth 0;
/// a pixel is valid iff its depth is finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height) as usize],
        }
    }

    /// Wraps a row-major buffer; non-finite or non-positive entries are
    /// normalized to 0 (invalid).
    pub fn from_data(width: u32, height: u32, mut data: Vec<f32>) -> Result<Self, IoError> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(IoError::Format {
                path: String::new(),
                message: format!(
                    "depth buffer length {} does not match {}x{}",
                    data.len(),
                    width,
                    height
                ),
            });
        }
        for v in &mut data {
            if !v.is_finite() || *v <= 0.0 {
                *v = 0.0;
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize] > 0.0
    }

    /// Depth at `(x, y)` in mm, or `None` when the pixel is invalid.
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        let v = self.data[(y * self.width + x) as usize];
        (v > 0.0).then_some(v as f64)
    }

    /// Stores a depth value; non-finite and non-positive values mark the
    /// pixel invalid.
    pub fn set(&mut self, x: u32, y: u32, depth: f32) {
        let v = if depth.is_finite() && depth > 0.0 {
            depth
        } else {
            0.0
        };
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| **v > 0.0).count()
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// A grayscale raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; (width * height) as usize],
        }
    }

    /// Wraps a row-major intensity buffer, clamping values into `[0, 1]`.
    pub fn from_data(width: u32, height: u32, mut data: Vec<f32>) -> Result<Self, IoError> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(IoError::Format {
                path: String::new(),
                message: format!(
                    "image buffer length {} does not match {}x{}",
                    data.len(),
                    width,
                    height
                ),
            });
        }
        for v in &mut data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        self.data[(y * self.width + x) as usize] = v.clamp(0.0, 1.0);
    }

    /// Bilinear sample at a fractional pixel, `None` outside the valid
    /// interpolation domain `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        self.sample_bilinear_with_grad(x, y).map(|(v, _, _)| v)
    }

    /// Bilinear sample plus the exact in-cell gradient of the interpolant,
    /// `(value, d/dx, d/dy)`.
    pub fn sample_bilinear_with_grad(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let w = self.width as usize;
        let h = self.height as usize;
        if x > (w - 1) as f64 || y > (h - 1) as f64 {
            return None;
        }
        if w < 2 || h < 2 {
            return Some((self.data[0] as f64, 0.0, 0.0));
        }
        let x0 = (x.floor() as usize).min(w - 2);
        let y0 = (y.floor() as usize).min(h - 2);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let i00 = self.data[y0 * w + x0] as f64;
        let i10 = self.data[y0 * w + x0 + 1] as f64;
        let i01 = self.data[(y0 + 1) * w + x0] as f64;
        let i11 = self.data[(y0 + 1) * w + x0 + 1] as f64;
        let value = i00 * (1.0 - fx) * (1.0 - fy)
            + i10 * fx * (1.0 - fy)
            + i01 * (1.0 - fx) * fy
            + i11 * fx * fy;
        let dx = (i10 - i00) * (1.0 - fy) + (i11 - i01) * fy;
        let dy = (i01 - i00) * (1.0 - fx) + (i11 - i10) * fx;
        Some((value, dx, dy))
    }

    /// Half-resolution image from 2x2 box averaging.
    pub fn downsample_half(&self) -> GrayImage {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        let mut data = vec![0.0f32; (w * h) as usize];
        for y in 0..h {
            for x in 0..w {
                let x0 = (2 * x).min(self.width - 1);
                let y0 = (2 * y).min(self.height - 1);
                let x1 = (2 * x + 1).min(self.width - 1);
                let y1 = (2 * y + 1).min(self.height - 1);
                data[(y * w + x) as usize] = 0.25
                    * (self.at(x0, y0) + self.at(x1, y0) + self.at(x0, y1) + self.at(x1, y1));
            }
        }
        GrayImage {
            width: w,
            height: h,
            data,
        }
    }
}

/// A timestamped pose sequence. Poses are camera-to-world transforms, the
/// TUM trajectory convention; timestamps are seconds and strictly increase.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    entries: Vec<(f64, RigidPose)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, timestamp: f64, pose: RigidPose) -> Result<(), IoError> {
        if let Some((last, _)) = self.entries.last() {
            if timestamp <= *last {
                return Err(IoError::Format {
                    path: String::new(),
                    message: format!(
                        "timestamps must strictly increase ({timestamp} after {last})"
                    ),
                });
            }
        }
        self.entries.push((timestamp, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(f64, RigidPose)] {
        &self.entries
    }

    pub fn poses(&self) -> impl Iterator<Item = &RigidPose> {
        self.entries.iter().map(|(_, p)| p)
    }
}

/// One exported point of a reconstruction: position, unit normal, color,
/// and accumulated confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub position: Point3,
    pub normal: Vec3,
    pub color: [u8; 3],
    pub confidence: f32,
}
