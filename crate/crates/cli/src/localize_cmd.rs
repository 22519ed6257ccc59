//! `localize`: estimate the camera pose of query images against a saved
//! map. A single query writes a one-line TUM pose; a query directory runs
//! in batch and reports summary statistics (against a ground-truth
//! trajectory when given).

use std::io::Write;
use std::path::Path;

use surfelscope_core::geometry::Intrinsics;
use surfelscope_core::io::{load_global_map, read_gray_image, read_trajectory};
use surfelscope_core::localization::{localize, GlobalMap, LocalizeConfig};

use crate::error::CliError;

fn write_pose_file(path: &Path, timestamp: f64, camera_to_world: &surfelscope_core::geometry::RigidPose) -> Result<(), CliError> {
    let t = camera_to_world.translation();
    let q = camera_to_world.quaternion_xyzw();
    let line = format!(
        "{timestamp:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}\n",
        t.x, t.y, t.z, q[0], q[1], q[2], q[3]
    );
    std::fs::write(path, line)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    map_dir: &Path,
    query: &Path,
    intrinsics_path: Option<&Path>,
    out_pose: Option<&Path>,
    out_dir: Option<&Path>,
    gt: Option<&Path>,
    config: LocalizeConfig,
) -> Result<(), CliError> {
    let map = load_global_map(map_dir)?;
    let k = resolve_intrinsics(map_dir, intrinsics_path, &map)?;

    if query.is_dir() {
        run_batch(&map, &k, query, out_dir, gt, &config)
    } else {
        let image = read_gray_image(query)?;
        let pose = localize(&image, &map, &k, &config)?;
        let camera_to_world = pose.inverse();
        let t = camera_to_world.translation();
        println!(
            "localize: camera at ({:.3}, {:.3}, {:.3}) mm",
            t.x, t.y, t.z
        );
        if let Some(path) = out_pose {
            write_pose_file(path, 0.0, &camera_to_world)?;
        }
        Ok(())
    }
}

/// Intrinsics come from an explicit flag or `<map>/intrinsics.txt`; the
/// keyframe image size sanity-checks the choice.
fn resolve_intrinsics(
    map_dir: &Path,
    intrinsics_path: Option<&Path>,
    map: &GlobalMap,
) -> Result<Intrinsics, CliError> {
    let default_path = map_dir.join("intrinsics.txt");
    let path = intrinsics_path.unwrap_or(&default_path);
    let k = surfelscope_core::io::read_intrinsics(path)?;
    if let Some(kf) = map.keyframes.first() {
        if kf.image.width() != k.width || kf.image.height() != k.height {
            return Err(CliError::Data(format!(
                "intrinsics are {}x{} but keyframe images are {}x{}",
                k.width,
                k.height,
                kf.image.width(),
                kf.image.height()
            )));
        }
    }
    Ok(k)
}

fn run_batch(
    map: &GlobalMap,
    k: &Intrinsics,
    query_dir: &Path,
    out_dir: Option<&Path>,
    gt: Option<&Path>,
    config: &LocalizeConfig,
) -> Result<(), CliError> {
    let mut names: Vec<String> = std::fs::read_dir(query_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Usage(format!(
            "no .png queries under {}",
            query_dir.display()
        )));
    }
    let gt_poses = match gt {
        Some(path) => Some(read_trajectory(path)?),
        None => None,
    };

    let mut results = Vec::new();
    for name in &names {
        let image = read_gray_image(&query_dir.join(name))?;
        match localize(&image, map, k, config) {
            Ok(pose) => results.push((name.clone(), Some(pose.inverse()))),
            Err(_) => results.push((name.clone(), None)),
        }
    }

    // Ground truth lives in its own world frame while estimates live in the
    // map frame, so errors are measured after a rigid alignment of the two,
    // the same convention the ATE metric uses.
    let mut translation_errors = Vec::new();
    let mut rotation_errors = Vec::new();
    if let Some(gt) = &gt_poses {
        let matched: Vec<(surfelscope_core::geometry::RigidPose, surfelscope_core::geometry::RigidPose)> =
            results
                .iter()
                .enumerate()
                .filter_map(|(i, (_, est))| {
                    let est = est.as_ref()?;
                    let (_, gt_pose) = gt.entries().get(i)?;
                    Some((*gt_pose, *est))
                })
                .collect();
        if matched.len() >= 2 {
            let gt_points: Vec<surfelscope_core::geometry::Point3> = matched
                .iter()
                .map(|(g, _)| surfelscope_core::geometry::Point3::from(g.translation()))
                .collect();
            let est_points: Vec<surfelscope_core::geometry::Point3> = matched
                .iter()
                .map(|(_, e)| surfelscope_core::geometry::Point3::from(e.translation()))
                .collect();
            if let Ok(alignment) =
                surfelscope_core::geometry::rigid_align_points(&gt_points, &est_points)
            {
                for (g, e) in &matched {
                    let aligned_gt = alignment.compose(g);
                    translation_errors
                        .push((e.translation() - aligned_gt.translation()).norm());
                    rotation_errors
                        .push(aligned_gt.inverse().compose(e).rotation_angle().to_degrees());
                }
            }
        }
    }

    let successes = results.iter().filter(|(_, p)| p.is_some()).count();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut poses = std::io::BufWriter::new(std::fs::File::create(dir.join("poses.txt"))?);
        for (i, (name, pose)) in results.iter().enumerate() {
            match pose {
                Some(p) => {
                    let t = p.translation();
                    let q = p.quaternion_xyzw();
                    writeln!(
                        poses,
                        "{:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
                        i as f64, t.x, t.y, t.z, q[0], q[1], q[2], q[3]
                    )?;
                }
                None => writeln!(poses, "# {name}: localization failed")?,
            }
        }
        poses.flush()?;
        let summary = serde_json::json!({
            "queries": results.len(),
            "successes": successes,
            "success_rate": successes as f64 / results.len() as f64,
            "median_translation_error_mm": median(&mut translation_errors),
            "median_rotation_error_deg": median(&mut rotation_errors),
        });
        std::fs::write(dir.join("summary.json"), summary.to_string())?;
    }
    println!(
        "localize: {successes}/{} queries localized{}",
        results.len(),
        match (translation_errors.is_empty(), median(&mut translation_errors.clone())) {
            (false, Some(m)) => format!(", median translation error {m:.3} mm"),
            _ => String::new(),
        }
    );
    if successes == 0 {
        return Err(CliError::Localization("no query localized".into()));
    }
    Ok(())
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mid = values.len() / 2;
    values.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    Some(values[mid])
}
