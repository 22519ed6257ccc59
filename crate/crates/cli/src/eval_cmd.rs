//! `eval`: trajectory metrics and reconstruction RMSE.

use std::path::Path;

use surfelscope_core::eval::{
    align_trajectories, ate, cloud_rmse, icp_refine, register_landmarks, rre, rte, IcpConfig,
    TrajectoryPair,
};
use surfelscope_core::geometry::Point3;
use surfelscope_core::io::{read_point_cloud, read_trajectory};

use crate::error::CliError;

pub enum TrajectoryMetric {
    Ate,
    Rte,
    Rre,
}

pub fn run_trajectory_metric(
    metric: TrajectoryMetric,
    gt_path: &Path,
    est_path: &Path,
    tolerance: f64,
    json_out: Option<&Path>,
) -> Result<(), CliError> {
    let gt = read_trajectory(gt_path)?;
    let est = read_trajectory(est_path)?;
    let pair = TrajectoryPair::associate(&gt, &est, tolerance)?;
    let (name, value, unit) = match metric {
        TrajectoryMetric::Ate => ("ATE", ate(&pair)?, "mm"),
        TrajectoryMetric::Rte => ("RTE", rte(&pair)?, "mm"),
        TrajectoryMetric::Rre => ("RRE", rre(&pair)?, "deg"),
    };
    println!("{name} {value:.6} {unit} over {} associated poses", pair.len());
    if let Some(path) = json_out {
        let alignment = align_trajectories(&pair)?;
        let t = alignment.translation();
        let json = serde_json::json!({
            "metric": name,
            "value": value,
            "unit": unit,
            "poses": pair.len(),
            "alignment_translation_mm": [t.x, t.y, t.z],
            "alignment_rotation_deg": alignment.rotation_angle().to_degrees(),
        });
        std::fs::write(path, json.to_string())?;
    }
    Ok(())
}

fn read_landmarks(path: &Path) -> Result<Vec<(Point3, Point3)>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| {
                CliError::Data(format!(
                    "{}: line {}: expected 6 comma-separated numbers",
                    path.display(),
                    lineno + 1
                ))
            })?;
        if fields.len() != 6 {
            return Err(CliError::Data(format!(
                "{}: line {}: expected 6 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        pairs.push((
            Point3::new(fields[0], fields[1], fields[2]),
            Point3::new(fields[3], fields[4], fields[5]),
        ));
    }
    Ok(pairs)
}

/// Landmark-seeded registration refined by ICP, scored by RMS
/// nearest-neighbor distance of the transformed source cloud.
pub fn run_rmse(
    src_path: &Path,
    dst_path: &Path,
    landmarks_path: &Path,
    json_out: Option<&Path>,
) -> Result<(), CliError> {
    let src: Vec<Point3> = read_point_cloud(src_path)?
        .into_iter()
        .map(|p| p.position)
        .collect();
    let dst: Vec<Point3> = read_point_cloud(dst_path)?
        .into_iter()
        .map(|p| p.position)
        .collect();
    let landmarks = read_landmarks(landmarks_path)?;
    let init = register_landmarks(&landmarks)?;
    let refined = icp_refine(&src, &dst, &init, &IcpConfig::default())?;
    let rmse = cloud_rmse(&src, &dst, &refined.transform)?;
    println!(
        "RMSE {rmse:.6} mm ({} -> {} points, ICP {} iterations, converged: {})",
        src.len(),
        dst.len(),
        refined.iterations,
        refined.converged
    );
    if let Some(path) = json_out {
        let json = serde_json::json!({
            "metric": "RMSE",
            "value": rmse,
            "unit": "mm",
            "src_points": src.len(),
            "dst_points": dst.len(),
            "icp_iterations": refined.iterations,
            "icp_converged": refined.converged,
            "icp_pair_rmse": refined.rmse,
        });
        std::fs::write(path, json.to_string())?;
    }
    Ok(())
}
