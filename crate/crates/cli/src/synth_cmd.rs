//! `synth`: generate a synthetic stereo dataset with exact ground truth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use surfelscope_core::geometry::Intrinsics;
use surfelscope_core::io::{
    write_depth_map_raw, write_gray_image, write_intrinsics, write_point_cloud, write_trajectory,
};
use surfelscope_core::synth::{
    generate_scene, generate_trajectory, render_frame, SceneSpec, TrajectorySpec,
};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IntrinsicsSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub baseline: f64,
}

impl Default for IntrinsicsSpec {
    fn default() -> Self {
        Self {
            fx: 420.0,
            fy: 420.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
            baseline: 5.0,
        }
    }
}

/// The `--spec` file: scene, trajectory, camera, and output sizing.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SynthSpec {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub intrinsics: IntrinsicsSpec,
    pub gt_cloud_resolution: usize,
}

impl SynthSpec {
    fn normalized(mut self) -> Self {
        if self.gt_cloud_resolution < 2 {
            self.gt_cloud_resolution = 200;
        }
        self
    }
}

pub fn run(spec_path: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut spec: SynthSpec = match spec_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => SynthSpec::default(),
    };
    spec = spec.normalized();
    if let Some(seed) = seed {
        spec.scene.seed = seed;
        spec.trajectory.seed = seed.wrapping_add(1);
    }
    let k = Intrinsics::new(
        spec.intrinsics.fx,
        spec.intrinsics.fy,
        spec.intrinsics.cx,
        spec.intrinsics.cy,
        spec.intrinsics.width,
        spec.intrinsics.height,
        Some(spec.intrinsics.baseline),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;

    let scene = generate_scene(&spec.scene);
    let trajectory = generate_trajectory(&spec.trajectory, scene.max_height())?;

    for sub in ["left", "right", "depth"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    for (t, (_, pose)) in trajectory.entries().iter().enumerate() {
        let frame = render_frame(&scene, pose, &k)?;
        write_gray_image(&frame.left, &out.join(format!("left/{t:06}.png")))?;
        write_gray_image(&frame.right, &out.join(format!("right/{t:06}.png")))?;
        write_depth_map_raw(&frame.depth, &out.join(format!("depth/{t:06}.dpth")))?;
    }
    write_trajectory(&trajectory, &out.join("gt_traj.txt"))?;
    write_point_cloud(
        &scene.ground_truth_cloud(spec.gt_cloud_resolution),
        &out.join("gt_cloud.ply"),
    )?;
    write_intrinsics(&k, &out.join("intrinsics.txt"))?;

    let summary = serde_json::json!({
        "frames": trajectory.len(),
        "motion": spec.trajectory.kind,
        "extent_mm": spec.scene.extent,
        "scene_seed": spec.scene.seed,
        "trajectory_seed": spec.trajectory.seed,
        "width": k.width,
        "height": k.height,
    });
    std::fs::write(out.join("summary.json"), summary.to_string())?;
    println!(
        "synth: wrote {} frames ({}x{}) under {}",
        trajectory.len(),
        k.width,
        k.height,
        out.display()
    );
    Ok(())
}
