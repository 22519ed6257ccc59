//! ASCII PLY point clouds with per-vertex normal, color, and confidence.
//!
//! Floats are stored as f32 and printed with Rust's shortest round-trip
//! formatting, so `read(write(cloud))` reproduces the input exactly at f32
//! precision.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{IoError, PointRecord};
use crate::geometry::{Point3, Vec3};

pub use super::PointRecord as CloudPoint;

pub fn write_point_cloud(points: &[PointRecord], path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    for name in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(w, "property float {name}")?;
    }
    for name in ["red", "green", "blue"] {
        writeln!(w, "property uchar {name}")?;
    }
    writeln!(w, "property float confidence")?;
    writeln!(w, "end_header")?;
    for p in points {
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} {} {}",
            p.position.x as f32,
            p.position.y as f32,
            p.position.z as f32,
            p.normal.x as f32,
            p.normal.y as f32,
            p.normal.z as f32,
            p.color[0],
            p.color[1],
            p.color[2],
            p.confidence,
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_point_cloud(path: &Path) -> Result<Vec<PointRecord>, IoError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let mut expect = |want: &str| -> Result<(), IoError> {
        match lines.next() {
            Some(Ok(line)) if line.trim() == want => Ok(()),
            Some(Ok(line)) => Err(IoError::format(
                path,
                format!("expected '{want}', got '{line}'"),
            )),
            _ => Err(IoError::format(path, "truncated header")),
        }
    };
    expect("ply")?;
    expect("format ascii 1.0")?;

    let count_line = lines
        .next()
        .transpose()?
        .ok_or_else(|| IoError::format(path, "truncated header"))?;
    let count: usize = count_line
        .trim()
        .strip_prefix("element vertex ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| IoError::format(path, format!("bad element line '{count_line}'")))?;

    // Property order defines the column layout of each vertex line.
    let mut properties = Vec::new();
    loop {
        let line = lines
            .next()
            .transpose()?
            .ok_or_else(|| IoError::format(path, "header missing end_header"))?;
        let line = line.trim().to_string();
        if line == "end_header" {
            break;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("property") {
            return Err(IoError::format(path, format!("unexpected line '{line}'")));
        }
        let _ty = parts
            .next()
            .ok_or_else(|| IoError::format(path, "property missing type"))?;
        let name = parts
            .next()
            .ok_or_else(|| IoError::format(path, "property missing name"))?;
        properties.push(name.to_string());
    }
    let column = |name: &str| -> Result<usize, IoError> {
        properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| IoError::format(path, format!("missing property '{name}'")))
    };
    let (ix, iy, iz) = (column("x")?, column("y")?, column("z")?);
    let (inx, iny, inz) = (column("nx")?, column("ny")?, column("nz")?);
    let (ir, ig, ib) = (column("red")?, column("green")?, column("blue")?);
    let ic = column("confidence")?;

    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .transpose()?
            .ok_or_else(|| IoError::format(path, "truncated vertex list"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != properties.len() {
            return Err(IoError::format(
                path,
                format!(
                    "vertex line has {} fields, header declares {}",
                    fields.len(),
                    properties.len()
                ),
            ));
        }
        let f = |i: usize| -> Result<f32, IoError> {
            fields[i]
                .parse()
                .map_err(|_| IoError::format(path, format!("bad float '{}'", fields[i])))
        };
        let u = |i: usize| -> Result<u8, IoError> {
            fields[i]
                .parse()
                .map_err(|_| IoError::format(path, format!("bad uchar '{}'", fields[i])))
        };
        points.push(PointRecord {
            position: Point3::new(f(ix)? as f64, f(iy)? as f64, f(iz)? as f64),
            normal: Vec3::new(f(inx)? as f64, f(iny)? as f64, f(inz)? as f64),
            color: [u(ir)?, u(ig)?, u(ib)?],
            confidence: f(ic)?,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(x: f64, y: f64, z: f64) -> PointRecord {
        PointRecord {
            position: Point3::new(x, y, z),
            normal: Vec3::new(0.0, 0.0, -1.0),
            color: [120, 90, 70],
            confidence: 1.5,
        }
    }

    #[test]
    fn empty_cloud_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        write_point_cloud(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("element vertex 0"));
        assert!(read_point_cloud(&path).unwrap().is_empty());
    }

    #[test]
    fn vertex_line_starts_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        write_point_cloud(&[record(1.0, 2.0, 3.0)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let body = text.split("end_header\n").nth(1).unwrap();
        assert!(body.starts_with("1 2 3"), "got '{body}'");
    }

    #[test]
    fn round_trip_is_lossless_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let pts: Vec<PointRecord> = (0..500)
            .map(|i| {
                let v = (i as f64 * 0.731).sin() * 123.456;
                PointRecord {
                    position: Point3::new(v, v * 0.5, v * 0.25 + 7.0),
                    normal: Vec3::new(0.0, 0.6, -0.8),
                    color: [(i % 256) as u8, 3, 9],
                    confidence: (i as f32).sqrt(),
                }
            })
            .collect();
        write_point_cloud(&pts, &path).unwrap();
        let back = read_point_cloud(&path).unwrap();
        assert_eq!(pts.len(), back.len());
        for (a, b) in pts.iter().zip(&back) {
            assert_eq!(a.position.x as f32, b.position.x as f32);
            assert_eq!(a.position.y as f32, b.position.y as f32);
            assert_eq!(a.position.z as f32, b.position.z as f32);
            assert_eq!(a.color, b.color);
            assert_eq!(a.confidence, b.confidence);
        }
    }

    #[test]
    fn malformed_header_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        std::fs::write(&path, "ply\nformat binary 1.0\n").unwrap();
        assert!(read_point_cloud(&path).is_err());
    }
}
