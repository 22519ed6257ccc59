//! `reconstruct`: stereo frames -> depth -> pose tracking -> fused surfel
//! model, localization map, trajectory, and timing log.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use surfelscope_core::geometry::Intrinsics;
use surfelscope_core::io::{
    read_gray_image, read_intrinsics, save_global_map, write_point_cloud, write_trajectory,
    GrayImage,
};
use surfelscope_core::pipeline::{reconstruct_frames, PipelineConfig};
use surfelscope_core::stereo::{DepthProvider, FileDepthProvider, StereoParams, ZnccDepthProvider};

use crate::error::CliError;

/// Optional `--config` file; sections default independently and CLI flags
/// override fields afterwards.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfigFile {
    pub stereo: Option<StereoParams>,
    pub pipeline: Option<PipelineConfig>,
}

#[derive(Debug, Clone, Default)]
pub struct ReconstructOverrides {
    pub max_disparity: Option<u32>,
    pub window_radius: Option<u32>,
    pub zncc_threshold: Option<f64>,
    pub lr_tol: Option<f64>,
    pub w_photo: Option<f64>,
    pub pyramid_levels: Option<u32>,
    pub max_iterations: Option<usize>,
    pub keyframe_stride: Option<usize>,
    pub gamma_depth: Option<f64>,
    pub gamma_theta_deg: Option<f64>,
    pub min_export_confidence: Option<f64>,
}

pub struct ResolvedConfig {
    pub stereo: StereoParams,
    pub pipeline: PipelineConfig,
}

pub fn resolve_config(
    config_path: Option<&Path>,
    overrides: &ReconstructOverrides,
) -> Result<ResolvedConfig, CliError> {
    let file: RunConfigFile = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => RunConfigFile::default(),
    };
    let mut stereo = file.stereo.unwrap_or_default();
    let mut pipeline = file.pipeline.unwrap_or_default();

    if let Some(v) = overrides.max_disparity {
        stereo.max_disparity = v;
    }
    if let Some(v) = overrides.window_radius {
        stereo.window_radius = v;
    }
    if let Some(v) = overrides.zncc_threshold {
        stereo.zncc_threshold = v;
    }
    if let Some(v) = overrides.lr_tol {
        stereo.lr_consistency_tol = v;
    }
    if let Some(v) = overrides.w_photo {
        pipeline.tracking.w_photo = v;
    }
    if let Some(v) = overrides.pyramid_levels {
        pipeline.tracking.pyramid_levels = v;
    }
    if let Some(v) = overrides.max_iterations {
        pipeline.tracking.max_iterations = v;
    }
    if let Some(v) = overrides.keyframe_stride {
        pipeline.map_build.keyframe_stride = v;
    }
    if let Some(v) = overrides.gamma_depth {
        pipeline.thresholds.gamma_depth = v;
    }
    if let Some(v) = overrides.gamma_theta_deg {
        pipeline.thresholds.gamma_theta = v.to_radians();
    }
    if let Some(v) = overrides.min_export_confidence {
        pipeline.min_export_confidence = v;
    }
    Ok(ResolvedConfig { stereo, pipeline })
}

/// Loads the sorted left/right frame pairs under `input/left` and
/// `input/right`.
pub fn load_frames(input: &Path) -> Result<Vec<(GrayImage, GrayImage)>, CliError> {
    let left_dir = input.join("left");
    let right_dir = input.join("right");
    let mut names: Vec<String> = match std::fs::read_dir(&left_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.ends_with(".png"))
            .collect(),
        Err(_) => Vec::new(),
    };
    names.sort();
    if names.is_empty() {
        return Err(CliError::Usage(format!(
            "no frames found under {}",
            left_dir.display()
        )));
    }
    let mut frames = Vec::with_capacity(names.len());
    for name in &names {
        let left = read_gray_image(&left_dir.join(name))?;
        let right = read_gray_image(&right_dir.join(name))?;
        frames.push((left, right));
    }
    Ok(frames)
}

pub fn make_provider(depth: &str, stereo: StereoParams) -> Result<Box<dyn DepthProvider>, CliError> {
    if depth == "zncc" {
        Ok(Box::new(ZnccDepthProvider { params: stereo }))
    } else if let Some(dir) = depth.strip_prefix("files:") {
        Ok(Box::new(FileDepthProvider::new(PathBuf::from(dir))))
    } else {
        Err(CliError::Usage(format!(
            "unknown depth provider '{depth}' (expected 'zncc' or 'files:<dir>')"
        )))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    input: &Path,
    intrinsics_path: Option<&Path>,
    out: &Path,
    depth: &str,
    config_path: Option<&Path>,
    overrides: &ReconstructOverrides,
) -> Result<(), CliError> {
    let default_intrinsics = input.join("intrinsics.txt");
    let k_path = intrinsics_path.unwrap_or(&default_intrinsics);
    let k: Intrinsics = read_intrinsics(k_path)?;
    let config = resolve_config(config_path, overrides)?;
    let frames = load_frames(input)?;
    let mut provider = make_provider(depth, config.stereo)?;

    let recon = reconstruct_frames(&frames, provider.as_mut(), &k, &config.pipeline)?;

    std::fs::create_dir_all(out)?;
    write_point_cloud(
        &recon.map.to_point_records(config.pipeline.min_export_confidence),
        &out.join("cloud.ply"),
    )?;
    write_trajectory(&recon.trajectory, &out.join("trajectory.txt"))?;
    let global_map = recon.build_map(&k, &config.pipeline.map_build)?;
    save_global_map(&global_map, &out.join("map"))?;
    surfelscope_core::io::write_intrinsics(&k, &out.join("map/intrinsics.txt"))?;

    let mut timings = std::io::BufWriter::new(std::fs::File::create(out.join("timings.csv"))?);
    writeln!(timings, "frame,ms")?;
    for (i, ms) in recon.timings_ms.iter().enumerate() {
        writeln!(timings, "{i},{ms:.3}")?;
    }
    timings.flush()?;

    let mean_ms = recon.mean_ms_per_frame();
    let summary = serde_json::json!({
        "frames": frames.len(),
        "surfels": recon.map.len(),
        "keyframes": global_map.keyframes.len(),
        "mean_ms_per_frame": mean_ms,
        "tracking_failures": recon.tracking_failures,
        "depth_provider": provider.name(),
    });
    std::fs::write(out.join("summary.json"), summary.to_string())?;
    println!(
        "reconstruct: {} frames, {} surfels, {} keyframes, {:.1} ms/frame mean, {} tracking failures",
        frames.len(),
        recon.map.len(),
        global_map.keyframes.len(),
        mean_ms,
        recon.tracking_failures
    );
    Ok(())
}
