//! End-to-end reconstruction: per frame, obtain depth from the configured
//! provider, track the camera against the fused model, and integrate the
//! frame's surfels. Tracking failures fall back to a constant-velocity
//! prediction; too many consecutive failures abort the run.

use std::time::Instant;

use thiserror::Error;

use crate::fusion::{create_surfels, integrate_frame, integrate_surfels, AssociationThresholds, FusionError, SurfelMap};
use crate::geometry::{Intrinsics, RigidPose};
use crate::io::{GrayImage, IoError, Trajectory};
use crate::localization::{build_global_map, GlobalMap, LocalizationError, MapBuildConfig};
use crate::stereo::{DepthProvider, StereoError};
use crate::tracking::{estimate_relative_pose_from, TrackingConfig, TrackingError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no input frames")]
    NoFrames,
    #[error("tracking lost for {0} consecutive frames")]
    TrackingLost(usize),
    #[error(transparent)]
    Stereo(#[from] StereoError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PipelineConfig {
    pub tracking: TrackingConfig,
    pub thresholds: AssociationThresholds,
    pub map_build: MapBuildConfig,
    /// Frames-per-second used for trajectory timestamps.
    pub fps: f64,
    /// Consecutive tracking failures tolerated before aborting.
    pub max_consecutive_failures: usize,
    /// Confidence floor applied when exporting the point cloud.
    pub min_export_confidence: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tracking: TrackingConfig::default(),
            thresholds: AssociationThresholds::default(),
            map_build: MapBuildConfig::default(),
            fps: 30.0,
            max_consecutive_failures: 5,
            min_export_confidence: 0.0,
        }
    }
}

/// Output of a reconstruction run.
pub struct Reconstruction {
    pub map: SurfelMap,
    /// Camera-to-world poses, one per frame (trajectory convention).
    pub trajectory: Trajectory,
    /// World-to-camera pose per frame.
    pub frame_poses: Vec<RigidPose>,
    /// Keyframe images and poses kept for map building.
    keyframe_images: Vec<GrayImage>,
    keyframe_poses: Vec<RigidPose>,
    pub timings_ms: Vec<f64>,
    pub tracking_failures: usize,
}

impl Reconstruction {
    pub fn mean_ms_per_frame(&self) -> f64 {
        if self.timings_ms.is_empty() {
            return 0.0;
        }
        self.timings_ms.iter().sum::<f64>() / self.timings_ms.len() as f64
    }

    /// Builds the localization map from the kept keyframes.
    pub fn build_map(&self, k: &Intrinsics, config: &MapBuildConfig) -> Result<GlobalMap, LocalizationError> {
        // Keyframes were already thinned by the stride while running.
        let per_frame = MapBuildConfig {
            keyframe_stride: 1,
            ..*config
        };
        build_global_map(
            &self.keyframe_images,
            &self.keyframe_poses,
            &self.map,
            k,
            &per_frame,
        )
    }
}

/// Runs the reconstruction over an in-memory frame sequence.
pub fn reconstruct_frames(
    frames: &[(GrayImage, GrayImage)],
    provider: &mut dyn DepthProvider,
    k: &Intrinsics,
    config: &PipelineConfig,
) -> Result<Reconstruction, PipelineError> {
    if frames.is_empty() {
        return Err(PipelineError::NoFrames);
    }
    let mut map = SurfelMap::new();
    let mut trajectory = Trajectory::new();
    let mut frame_poses = Vec::with_capacity(frames.len());
    let mut keyframe_images = Vec::new();
    let mut keyframe_poses = Vec::new();
    let mut timings_ms = Vec::with_capacity(frames.len());
    let mut tracking_failures = 0usize;
    let mut consecutive_failures = 0usize;

    let mut pose = RigidPose::identity(); // world(frame-0)-to-camera
    let mut last_delta = RigidPose::identity();
    let mut prev_image: Option<GrayImage> = None;

    for (t, (left, right)) in frames.iter().enumerate() {
        let started = Instant::now();
        let depth = provider.depth_map(t, left, right, k)?;
        if t == 0 {
            integrate_frame(&mut map, &depth, left, k, &pose, t, &config.thresholds)?;
        } else {
            let current = create_surfels(&depth, left, k, t)?;
            let init = last_delta; // constant-velocity prediction
            let delta = match estimate_relative_pose_from(
                &map,
                &pose,
                prev_image.as_ref().expect("previous frame stored"),
                &current,
                left,
                k,
                &init,
                &config.tracking,
            ) {
                Ok(delta) => {
                    consecutive_failures = 0;
                    delta
                }
                Err(TrackingError::InvalidConfig(msg)) => {
                    return Err(PipelineError::Stereo(StereoError::InvalidParams(msg)))
                }
                Err(_) => {
                    tracking_failures += 1;
                    consecutive_failures += 1;
                    if consecutive_failures > config.max_consecutive_failures {
                        return Err(PipelineError::TrackingLost(consecutive_failures));
                    }
                    init
                }
            };
            pose = delta.compose(&pose);
            last_delta = delta;
            integrate_surfels(&mut map, &current, &pose, k, t, &config.thresholds);
        }
        frame_poses.push(pose);
        trajectory
            .push(t as f64 / config.fps, pose.inverse())
            .expect("frame timestamps increase");
        if t % config.map_build.keyframe_stride.max(1) == 0 {
            keyframe_images.push(left.clone());
            keyframe_poses.push(pose);
        }
        prev_image = Some(left.clone());
        timings_ms.push(started.elapsed().as_secs_f64() * 1e3);
    }

    Ok(Reconstruction {
        map,
        trajectory,
        frame_poses,
        keyframe_images,
        keyframe_poses,
        timings_ms,
        tracking_failures,
    })
}
