//! Global map directory layout:
//! - `surfels.ply` — the 3D point table (ASCII PLY);
//! - `keyframes.jsonl` — one keyframe record per line: id, pose (TUM
//!   order), image path, keypoints, point ids;
//! - `descriptors.bin` — magic `GMDS`, u32 version, u32 count, u32 dim,
//!   then count*dim little-endian f32 global descriptors in keyframe
//!   order;
//! - `images/` — 8-bit grayscale keyframe PNGs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_gray_image, read_point_cloud, write_gray_image, write_point_cloud, IoError};
use crate::geometry::{RigidPose, Vec3};
use crate::localization::{GlobalMap, Keyframe};

const DESCRIPTOR_MAGIC: &[u8; 4] = b"GMDS";
const MAP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct KeyframeRecord {
    id: u32,
    /// tx ty tz qx qy qz qw
    pose: [f64; 7],
    image: String,
    keypoints: Vec<(f64, f64)>,
    point_ids: Vec<u32>,
}

pub fn save_global_map(map: &GlobalMap, dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir.join("images"))?;
    write_point_cloud(&map.points, &dir.join("surfels.ply"))?;

    let mut jsonl = BufWriter::new(File::create(dir.join("keyframes.jsonl"))?);
    for kf in &map.keyframes {
        let image = format!("images/{:06}.png", kf.id);
        write_gray_image(&kf.image, &dir.join(&image))?;
        let t = kf.pose.translation();
        let q = kf.pose.quaternion_xyzw();
        let record = KeyframeRecord {
            id: kf.id,
            pose: [t.x, t.y, t.z, q[0], q[1], q[2], q[3]],
            image,
            keypoints: kf.keypoints.iter().map(|p| (p.x, p.y)).collect(),
            point_ids: kf.point_ids.clone(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| IoError::format(dir, format!("keyframe encode: {e}")))?;
        writeln!(jsonl, "{line}")?;
    }
    jsonl.flush()?;

    let dim = map
        .keyframes
        .first()
        .map(|kf| kf.global_descriptor.len())
        .unwrap_or(0) as u32;
    let mut bin = BufWriter::new(File::create(dir.join("descriptors.bin"))?);
    bin.write_all(DESCRIPTOR_MAGIC)?;
    bin.write_all(&MAP_VERSION.to_le_bytes())?;
    bin.write_all(&(map.keyframes.len() as u32).to_le_bytes())?;
    bin.write_all(&dim.to_le_bytes())?;
    for kf in &map.keyframes {
        if kf.global_descriptor.len() != dim as usize {
            return Err(IoError::format(dir, "descriptor widths differ across keyframes"));
        }
        for v in &kf.global_descriptor {
            bin.write_all(&v.to_le_bytes())?;
        }
    }
    bin.flush()?;
    Ok(())
}

pub fn load_global_map(dir: &Path) -> Result<GlobalMap, IoError> {
    let points = read_point_cloud(&dir.join("surfels.ply"))?;

    let descriptors_path = dir.join("descriptors.bin");
    let mut bin = BufReader::new(File::open(&descriptors_path)?);
    let mut header = [0u8; 16];
    bin.read_exact(&mut header)
        .map_err(|_| IoError::format(&descriptors_path, "truncated header"))?;
    if &header[0..4] != DESCRIPTOR_MAGIC {
        return Err(IoError::format(&descriptors_path, "bad magic"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != MAP_VERSION {
        return Err(IoError::Version {
            path: descriptors_path.display().to_string(),
            found: version,
            expected: MAP_VERSION,
        });
    }
    let count = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; count * dim * 4];
    bin.read_exact(&mut payload)
        .map_err(|_| IoError::format(&descriptors_path, "truncated descriptors"))?;
    let mut descriptors = vec![Vec::new(); count];
    if dim > 0 {
        for (slot, chunk) in descriptors.iter_mut().zip(payload.chunks_exact(dim * 4)) {
            *slot = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
        }
    }

    let jsonl_path = dir.join("keyframes.jsonl");
    let reader = BufReader::new(File::open(&jsonl_path)?);
    let mut keyframes = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: KeyframeRecord = serde_json::from_str(&line)
            .map_err(|e| IoError::format(&jsonl_path, format!("line {}: {e}", lineno + 1)))?;
        if record.keypoints.len() != record.point_ids.len() {
            return Err(IoError::format(
                &jsonl_path,
                format!("line {}: keypoint/point-id length mismatch", lineno + 1),
            ));
        }
        let descriptor = descriptors.get(keyframes.len()).cloned().ok_or_else(|| {
            IoError::format(&jsonl_path, "more keyframes than stored descriptors")
        })?;
        let pose = RigidPose::from_quaternion_xyzw(
            [record.pose[3], record.pose[4], record.pose[5], record.pose[6]],
            Vec3::new(record.pose[0], record.pose[1], record.pose[2]),
        );
        let image = read_gray_image(&dir.join(&record.image))?;
        keyframes.push(Keyframe {
            id: record.id,
            pose,
            image,
            keypoints: record
                .keypoints
                .iter()
                .map(|(x, y)| crate::geometry::Pixel::new(*x, *y))
                .collect(),
            point_ids: record.point_ids,
            global_descriptor: descriptor,
        });
    }
    if keyframes.len() != count {
        return Err(IoError::format(
            &jsonl_path,
            format!("{} keyframes but {count} descriptors", keyframes.len()),
        ));
    }
    let map = GlobalMap { points, keyframes };
    map.validate().map_err(|e| IoError::format(dir, e))?;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pixel, Point3};
    use crate::io::{GrayImage, PointRecord};

    fn sample_map() -> GlobalMap {
        let points: Vec<PointRecord> = (0..40)
            .map(|i| PointRecord {
                position: Point3::new(i as f64 * 0.37, -(i as f64), 100.0 + i as f64),
                normal: Vec3::new(0.0, 0.0, -1.0),
                color: [i as u8, 2 * i as u8, 3],
                confidence: 1.0 + i as f32,
            })
            .collect();
        let keyframes = (0..3u32)
            .map(|id| {
                let mut image = GrayImage::new(16, 12);
                image.set(id, 2, 128.0 / 255.0);
                let descriptor = {
                    let mut d = vec![0.0f32; 16];
                    d[id as usize] = 1.0;
                    d
                };
                Keyframe {
                    id: id * 5,
                    pose: RigidPose::from_translation(id as f64, 0.5, -(id as f64)),
                    image,
                    keypoints: vec![Pixel::new(1.5 + id as f64, 2.25), Pixel::new(8.0, 9.0)],
                    point_ids: vec![id, 10 + id],
                    global_descriptor: descriptor,
                }
            })
            .collect();
        GlobalMap { points, keyframes }
    }

    #[test]
    fn round_trip_preserves_structure() {
        let dir = tempfile::tempdir().unwrap();
        let map = sample_map();
        save_global_map(&map, dir.path()).unwrap();
        let loaded = load_global_map(dir.path()).unwrap();
        assert_eq!(loaded.points.len(), map.points.len());
        for (a, b) in map.points.iter().zip(&loaded.points) {
            assert_eq!(a.position.x as f32, b.position.x as f32);
            assert_eq!(a.confidence, b.confidence);
        }
        assert_eq!(loaded.keyframes.len(), map.keyframes.len());
        for (a, b) in map.keyframes.iter().zip(&loaded.keyframes) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.point_ids, b.point_ids);
            assert_eq!(a.global_descriptor, b.global_descriptor);
            assert_eq!(a.keypoints.len(), b.keypoints.len());
            for (ka, kb) in a.keypoints.iter().zip(&b.keypoints) {
                assert_eq!(ka, kb);
            }
            assert!((a.pose.translation() - b.pose.translation()).norm() < 1e-12);
            assert_eq!(a.image, b.image);
        }
    }

    #[test]
    fn empty_map_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let map = GlobalMap::default();
        save_global_map(&map, dir.path()).unwrap();
        let loaded = load_global_map(dir.path()).unwrap();
        assert!(loaded.keyframes.is_empty());
        assert!(loaded.points.is_empty());
    }

    #[test]
    fn version_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        save_global_map(&sample_map(), dir.path()).unwrap();
        // bump the stored version
        let path = dir.path().join("descriptors.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_global_map(dir.path()),
            Err(IoError::Version { found: 99, .. })
        ));
    }

    #[test]
    fn missing_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        save_global_map(&sample_map(), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("keyframes.jsonl")).unwrap();
        assert!(load_global_map(dir.path()).is_err());
    }

    #[test]
    fn dangling_point_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = sample_map();
        map.keyframes[0].point_ids[0] = 1000;
        save_global_map(&map, dir.path()).unwrap();
        assert!(load_global_map(dir.path()).is_err());
    }
}
