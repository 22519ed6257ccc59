//! TUM trajectory files: one `timestamp tx ty tz qx qy qz qw` line per
//! pose, `#` comments allowed. Quaternions more than 1e-3 from unit norm
//! are rejected; smaller deviations are renormalized.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{IoError, Trajectory};
use crate::geometry::{RigidPose, Vec3};

pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut trajectory = Trajectory::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = trimmed
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| {
                IoError::format(path, format!("line {}: non-numeric field", lineno + 1))
            })?;
        if fields.len() != 8 {
            return Err(IoError::format(
                path,
                format!("line {}: expected 8 fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let q = [fields[4], fields[5], fields[6], fields[7]];
        let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(IoError::format(
                path,
                format!("line {}: quaternion norm {norm} is not unit", lineno + 1),
            ));
        }
        let pose = RigidPose::from_quaternion_xyzw(q, Vec3::new(fields[1], fields[2], fields[3]));
        trajectory.push(fields[0], pose).map_err(|_| {
            IoError::format(path, format!("line {}: non-monotone timestamp", lineno + 1))
        })?;
    }
    Ok(trajectory)
}

pub fn write_trajectory(trajectory: &Trajectory, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (timestamp, pose) in trajectory.entries() {
        write_pose_line(&mut w, *timestamp, pose)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_pose_line(
    w: &mut impl Write,
    timestamp: f64,
    pose: &RigidPose,
) -> Result<(), IoError> {
    let t = pose.translation();
    let q = pose.quaternion_xyzw();
    writeln!(
        w,
        "{timestamp:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
        t.x, t.y, t.z, q[0], q[1], q[2], q[3]
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidPose;

    #[test]
    fn identity_line_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        std::fs::write(&path, "0 0 0 0 0 0 0 1\n").unwrap();
        let traj = read_trajectory(&path).unwrap();
        assert_eq!(traj.len(), 1);
        let (ts, pose) = traj.entries()[0];
        assert_eq!(ts, 0.0);
        assert!(pose.translation().norm() < 1e-12);
        assert!(pose.rotation_angle() < 1e-12);
    }

    #[test]
    fn round_trip_within_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        let mut traj = Trajectory::new();
        for i in 0..10 {
            let pose = RigidPose::from_axis_angle(&Vec3::new(0.2, 1.0, -0.4), 0.05 * i as f64)
                .compose(&RigidPose::from_translation(i as f64, -2.0 * i as f64, 3.5));
            traj.push(i as f64 / 30.0, pose).unwrap();
        }
        write_trajectory(&traj, &path).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(traj.len(), back.len());
        for ((t0, p0), (t1, p1)) in traj.entries().iter().zip(back.entries()) {
            assert!((t0 - t1).abs() < 1e-9);
            assert!((p0.translation() - p1.translation()).norm() < 1e-8);
            assert!(p0.inverse().compose(p1).rotation_angle() < 1e-8);
        }
    }

    #[test]
    fn wrong_field_count_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        std::fs::write(&path, "0 0 0 0 0 0 1\n").unwrap();
        assert!(read_trajectory(&path).is_err());
    }

    #[test]
    fn non_unit_quaternion_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        std::fs::write(&path, "0 0 0 0 0 0 0 1.5\n").unwrap();
        assert!(read_trajectory(&path).is_err());
    }
}
