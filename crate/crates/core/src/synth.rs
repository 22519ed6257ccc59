//! Synthetic tissue-like scenes with exact ground truth.
//!
//! A scene is a smooth heightfield (a seeded sum of 2D Gaussian bumps over
//! a base plane) carrying a high-frequency procedural albedo, lit by a
//! fixed directional light so that shading is view-independent. Frames are
//! ray-cast, which makes the emitted depth maps exact against the analytic
//! surface, and the right view is rendered from a camera displaced by the
//! stereo baseline along the camera x-axis. All randomness is behind
//! explicit seeds.
//!
//! World frame: the base plane is z = 0, bumps rise toward negative z, and
//! the default camera sits at z = -standoff looking along +z.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Intrinsics, Point3, RigidPose, Vec3};
use crate::io::{DepthMap, GrayImage, IoError, PointRecord, Trajectory};
use crate::parallel;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("intrinsics have no stereo baseline")]
    MissingBaseline,
    #[error("camera ray does not reach the surface")]
    SurfaceNotInView,
    #[error("trajectory would move the camera through the surface (clearance {0:.2} mm)")]
    CameraThroughSurface(f64),
    #[error("trajectory spec needs at least 2 frames (got {0})")]
    TooFewFrames(usize),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Parameters of the procedural surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Side length of the modeled patch, mm.
    pub extent: f64,
    /// Number of Gaussian bumps.
    pub bumps: usize,
    /// Maximum height of a single bump, mm.
    pub bump_amplitude: f64,
    /// Albedo noise cells across the extent; higher is finer texture.
    pub texture_cells: f64,
    /// Albedo modulation depth in [0, 1]; 0 renders a textureless surface.
    pub texture_contrast: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            extent: 100.0,
            bumps: 8,
            bump_amplitude: 4.0,
            texture_cells: 96.0,
            texture_contrast: 0.8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Bump {
    cx: f64,
    cy: f64,
    amplitude: f64,
    sigma: f64,
}

/// A generated scene; pure functions of (x, y) in world millimeters.
#[derive(Debug, Clone)]
pub struct Scene {
    bumps: Vec<Bump>,
    extent: f64,
    texture_frequency: f64,
    texture_contrast: f64,
    seed: u64,
    light: Vec3,
    slope_bound: f64,
}

pub fn generate_scene(spec: &SceneSpec) -> Scene {
    let mut state = spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
    let mut next = move || {
        state = splitmix64(state);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let half = spec.extent / 2.0;
    let bumps: Vec<Bump> = (0..spec.bumps)
        .map(|_| Bump {
            cx: (next() * 2.0 - 1.0) * half * 0.8,
            cy: (next() * 2.0 - 1.0) * half * 0.8,
            amplitude: spec.bump_amplitude * (0.4 + 0.6 * next()),
            sigma: spec.extent * (0.08 + 0.12 * next()),
        })
        .collect();
    // max |grad| of a*exp(-r^2/2s^2) is a*exp(-1/2)/s
    let slope_bound: f64 = bumps
        .iter()
        .map(|b| b.amplitude * (-0.5f64).exp() / b.sigma)
        .sum();
    Scene {
        bumps,
        extent: spec.extent,
        texture_frequency: spec.texture_cells / spec.extent,
        texture_contrast: spec.texture_contrast.clamp(0.0, 1.0),
        seed: spec.seed,
        light: Vec3::new(0.25, -0.15, 1.0).normalize(),
        slope_bound,
    }
}

impl Scene {
    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// Surface height above the base plane (nonnegative, toward the camera).
    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.bumps
            .iter()
            .map(|b| {
                let dx = x - b.cx;
                let dy = y - b.cy;
                b.amplitude * (-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma)).exp()
            })
            .sum()
    }

    /// World z of the surface; bumps extend toward negative z.
    pub fn surface_z(&self, x: f64, y: f64) -> f64 {
        -self.height(x, y)
    }

    pub fn max_height(&self) -> f64 {
        self.bumps.iter().map(|b| b.amplitude).sum()
    }

    /// Unit surface normal, oriented toward the camera side (negative z).
    pub fn normal(&self, x: f64, y: f64) -> Vec3 {
        let mut gx = 0.0;
        let mut gy = 0.0;
        for b in &self.bumps {
            let dx = x - b.cx;
            let dy = y - b.cy;
            let s2 = b.sigma * b.sigma;
            let h = b.amplitude * (-(dx * dx + dy * dy) / (2.0 * s2)).exp();
            gx += -dx / s2 * h;
            gy += -dy / s2 * h;
        }
        // surface_z = -height, so d(surface_z)/dx = gx etc. with the sign
        // flip already absorbed above.
        Vec3::new(gx, gy, -1.0).normalize()
    }

    /// Procedural albedo in [0, 1]; two octaves of seeded value noise.
    pub fn albedo(&self, x: f64, y: f64) -> f64 {
        let f = self.texture_frequency;
        let n = 0.7 * value_noise(x * f, y * f, self.seed)
            + 0.3 * value_noise(x * f * 2.3 + 17.0, y * f * 2.3 - 9.0, self.seed ^ 0xABCD);
        let v = 0.55 + self.texture_contrast * (n - 0.5);
        v.clamp(0.02, 1.0)
    }

    /// Lambertian shading under the fixed scene light.
    pub fn shade(&self, x: f64, y: f64) -> f64 {
        let n = self.normal(x, y);
        let lambert = n.dot(&(-self.light)).max(0.0);
        (self.albedo(x, y) * (0.35 + 0.65 * lambert)).clamp(0.0, 1.0)
    }

    /// First intersection of the ray `origin + s * dir` with the surface,
    /// returned as the parameter `s`. Uses a Lipschitz-bounded march that
    /// approaches the root from above the surface, then converges below
    /// 1e-10 mm residual.
    pub fn raycast(&self, origin: &Point3, dir: &Vec3) -> Option<f64> {
        if dir.z <= 1e-9 {
            return None;
        }
        let rate = dir.z + self.slope_bound * (dir.x * dir.x + dir.y * dir.y).sqrt();
        let mut s = 0.0f64;
        let f = |s: f64| {
            let p = origin + dir * s;
            p.z - self.surface_z(p.x, p.y)
        };
        let mut fs = f(s);
        if fs >= 0.0 {
            return None; // origin already at or below the surface
        }
        for _ in 0..256 {
            let step = -fs / rate;
            s += step;
            fs = f(s);
            if -fs < 1e-10 {
                return Some(s);
            }
        }
        None
    }

    /// Dense ground-truth point cloud sampled on an n-by-n grid over the
    /// scene extent.
    pub fn ground_truth_cloud(&self, n: usize) -> Vec<PointRecord> {
        self.ground_truth_cloud_over(self.extent, n)
    }

    /// Ground-truth cloud over an explicit extent; the surface is defined
    /// everywhere, so a wider extent can cover the whole camera frustum.
    pub fn ground_truth_cloud_over(&self, extent: f64, n: usize) -> Vec<PointRecord> {
        let half = extent / 2.0;
        let mut points = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                let x = -half + extent * i as f64 / (n - 1) as f64;
                let y = -half + extent * j as f64 / (n - 1) as f64;
                let shade = (self.shade(x, y) * 255.0) as u8;
                points.push(PointRecord {
                    position: Point3::new(x, y, self.surface_z(x, y)),
                    normal: self.normal(x, y),
                    color: [shade, shade, shade],
                    confidence: 1.0,
                });
            }
        }
        points
    }
}

/// One rendered stereo frame with its exact depth.
pub struct RenderedFrame {
    pub left: GrayImage,
    pub right: GrayImage,
    pub depth: DepthMap,
}

/// Renders left/right images and the left-camera depth map from a
/// camera-to-world pose. The right camera is displaced by the stereo
/// baseline along the camera +x axis.
pub fn render_frame(
    scene: &Scene,
    camera_to_world: &RigidPose,
    k: &Intrinsics,
) -> Result<RenderedFrame, SynthError> {
    let baseline = k.baseline.ok_or(SynthError::MissingBaseline)?;
    let left_center = Point3::from(camera_to_world.translation());
    let right_center =
        Point3::from(camera_to_world.translation() + camera_to_world.rotate_vector(&Vec3::x()) * baseline);

    let (left, depth) = render_view(scene, &left_center, camera_to_world, k, true)?;
    let (right, _) = render_view(scene, &right_center, camera_to_world, k, false)?;
    Ok(RenderedFrame {
        left,
        right,
        depth: depth.expect("depth requested"),
    })
}

fn render_view(
    scene: &Scene,
    center: &Point3,
    camera_to_world: &RigidPose,
    k: &Intrinsics,
    want_depth: bool,
) -> Result<(GrayImage, Option<DepthMap>), SynthError> {
    let w = k.width as usize;
    let h = k.height as usize;
    let rot = camera_to_world.rotation_matrix();

    let rows = parallel::map_indexed(h, |y| {
        let mut intensity = vec![0.0f32; w];
        let mut depth = vec![0.0f32; w];
        for x in 0..w {
            // Camera-frame direction with unit z, so the ray parameter is
            // the pinhole depth directly.
            let dir_cam = Vec3::new(
                (x as f64 - k.cx) / k.fx,
                (y as f64 - k.cy) / k.fy,
                1.0,
            );
            let dir_world = rot * dir_cam;
            if let Some(s) = scene.raycast(center, &dir_world) {
                let hit = center + dir_world * s;
                intensity[x] = scene.shade(hit.x, hit.y) as f32;
                depth[x] = s as f32;
            }
        }
        (intensity, depth)
    });

    let mut intensity = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut misses = 0usize;
    for (row_i, row_d) in rows {
        misses += row_d.iter().filter(|d| **d <= 0.0).count();
        intensity.extend_from_slice(&row_i);
        depth.extend_from_slice(&row_d);
    }
    if misses > 0 {
        return Err(SynthError::SurfaceNotInView);
    }
    let image = GrayImage::from_data(k.width, k.height, intensity)?;
    let depth = if want_depth {
        Some(DepthMap::from_data(k.width, k.height, depth)?)
    } else {
        None
    };
    Ok((image, depth))
}

/// Camera motion kinds: axial zooms, a lateral sweep, and smooth
/// seeded wander.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionKind {
    ZoomIn,
    ZoomOut,
    Follow,
    Random,
}

impl std::str::FromStr for MotionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zoom-in" => Ok(MotionKind::ZoomIn),
            "zoom-out" => Ok(MotionKind::ZoomOut),
            "follow" => Ok(MotionKind::Follow),
            "random" => Ok(MotionKind::Random),
            other => Err(format!("unknown motion '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectorySpec {
    pub kind: MotionKind,
    pub frames: usize,
    /// Translation amplitude, mm.
    pub amplitude: f64,
    /// Rotation amplitude, degrees (random motion only).
    pub rot_amplitude_deg: f64,
    /// Distance from the base plane at the start, mm.
    pub standoff: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: MotionKind::ZoomIn,
            frames: 30,
            amplitude: 10.0,
            rot_amplitude_deg: 3.0,
            standoff: 100.0,
            fps: 30.0,
            seed: 11,
        }
    }
}

/// Generates a camera-to-world trajectory of the requested motion kind.
/// `max_surface_height` is the scene's peak bump height, used to verify the
/// camera keeps clear of the surface.
pub fn generate_trajectory(
    spec: &TrajectorySpec,
    max_surface_height: f64,
) -> Result<Trajectory, SynthError> {
    if spec.frames < 2 {
        return Err(SynthError::TooFewFrames(spec.frames));
    }
    let toward_surface = match spec.kind {
        MotionKind::ZoomIn => spec.amplitude,
        MotionKind::ZoomOut => 0.0,
        MotionKind::Follow => 0.0,
        MotionKind::Random => 0.6 * spec.amplitude,
    };
    let clearance = spec.standoff - toward_surface - max_surface_height;
    if clearance < 2.0 {
        return Err(SynthError::CameraThroughSurface(clearance));
    }

    let mut sin_mix = SinusoidMix::new(spec.seed);
    let mut trajectory = Trajectory::new();
    let n = spec.frames;
    for i in 0..n {
        let tau = i as f64 / (n - 1) as f64;
        let pose = match spec.kind {
            MotionKind::ZoomIn => RigidPose::from_translation(0.0, 0.0, -spec.standoff + tau * spec.amplitude),
            MotionKind::ZoomOut => RigidPose::from_translation(0.0, 0.0, -spec.standoff - tau * spec.amplitude),
            MotionKind::Follow => {
                let theta = tau * std::f64::consts::FRAC_PI_2;
                RigidPose::from_translation(
                    spec.amplitude * theta.sin(),
                    0.4 * spec.amplitude * (1.0 - theta.cos()),
                    -spec.standoff,
                )
            }
            MotionKind::Random => {
                let offset = sin_mix.translation(tau) * (spec.amplitude * 0.5);
                let rot = sin_mix.rotation(tau, spec.rot_amplitude_deg.to_radians());
                RigidPose::from_parts(
                    rot,
                    Vec3::new(offset.x, offset.y, -spec.standoff + 0.6 * offset.z.abs()),
                )
            }
        };
        trajectory
            .push(i as f64 / spec.fps, pose)
            .expect("timestamps increase by construction");
    }
    Ok(trajectory)
}

/// Smooth bounded pseudo-random curves: three seeded sinusoids per axis.
struct SinusoidMix {
    params: Vec<(f64, f64, f64)>, // (amplitude weight, frequency, phase)
}

impl SinusoidMix {
    fn new(seed: u64) -> Self {
        let mut state = seed.wrapping_mul(0xA076_1D64_78BD_642F) ^ 0xE703_7ED1_A0B4_28DB;
        let mut next = move || {
            state = splitmix64(state);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let params = (0..18)
            .map(|_| {
                (
                    0.3 + 0.7 * next(),
                    0.5 + 2.0 * next(),
                    next() * std::f64::consts::TAU,
                )
            })
            .collect();
        Self { params }
    }

    fn axis(&self, axis: usize, tau: f64) -> f64 {
        let mut v = 0.0;
        let mut norm = 0.0;
        for (a, f, phi) in &self.params[axis * 3..axis * 3 + 3] {
            v += a * (std::f64::consts::TAU * f * tau + phi).sin();
            norm += a;
        }
        v / norm
    }

    fn translation(&mut self, tau: f64) -> Vec3 {
        Vec3::new(self.axis(0, tau), self.axis(1, tau), self.axis(2, tau))
    }

    fn rotation(&mut self, tau: f64, amplitude: f64) -> nalgebra::UnitQuaternion<f64> {
        let axis_angle = Vec3::new(
            self.axis(3, tau) * amplitude,
            self.axis(4, tau) * amplitude,
            self.axis(5, tau) * amplitude,
        );
        nalgebra::UnitQuaternion::from_scaled_axis(axis_angle)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded value noise on an integer lattice with quintic interpolation.
fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let lattice = |ix: i64, iy: i64| -> f64 {
        let h = splitmix64(
            seed ^ (ix as u64).wrapping_mul(0x8646_5EED_42C1_2C87)
                ^ (iy as u64).wrapping_mul(0x27D4_EB2F_1656_67C5),
        );
        (h >> 11) as f64 / (1u64 << 53) as f64
    };
    let sx = fade(fx);
    let sy = fade(fy);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let v00 = lattice(ix, iy);
    let v10 = lattice(ix + 1, iy);
    let v01 = lattice(ix, iy + 1);
    let v11 = lattice(ix + 1, iy + 1);
    v00 * (1.0 - sx) * (1.0 - sy) + v10 * sx * (1.0 - sy) + v01 * (1.0 - sx) * sy + v11 * sx * sy
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_intrinsics() -> Intrinsics {
        Intrinsics::new(200.0, 200.0, 79.5, 59.5, 160, 120, Some(5.0)).unwrap()
    }

    #[test]
    fn zero_bumps_is_a_flat_plane() {
        let scene = generate_scene(&SceneSpec {
            bumps: 0,
            ..SceneSpec::default()
        });
        assert_eq!(scene.surface_z(3.0, -7.0), 0.0);
        assert_eq!(scene.max_height(), 0.0);
        let n = scene.normal(1.0, 1.0);
        assert!((n - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec::default();
        let a = generate_scene(&spec);
        let b = generate_scene(&spec);
        for i in 0..50 {
            let x = i as f64 * 1.7 - 40.0;
            assert_eq!(a.surface_z(x, -x), b.surface_z(x, -x));
            assert_eq!(a.shade(x, -x), b.shade(x, -x));
        }
    }

    #[test]
    fn height_bounded_by_amplitude_sum() {
        let spec = SceneSpec::default();
        let scene = generate_scene(&spec);
        let bound = scene.max_height();
        assert!(bound <= spec.bumps as f64 * spec.bump_amplitude);
        for i in 0..200 {
            let x = (i as f64 * 0.77).sin() * 50.0;
            let y = (i as f64 * 0.31).cos() * 50.0;
            assert!(scene.height(x, y) <= bound + 1e-12);
        }
    }

    #[test]
    fn flat_plane_renders_constant_depth() {
        let scene = generate_scene(&SceneSpec {
            bumps: 0,
            ..SceneSpec::default()
        });
        let pose = RigidPose::from_translation(0.0, 0.0, -100.0);
        let frame = render_frame(&scene, &pose, &test_intrinsics()).unwrap();
        for y in 0..frame.depth.height() {
            for x in 0..frame.depth.width() {
                assert!((frame.depth.get(x, y).unwrap() - 100.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn raycast_depth_matches_analytic_surface() {
        let scene = generate_scene(&SceneSpec::default());
        let pose = RigidPose::from_translation(5.0, -3.0, -95.0);
        let k = test_intrinsics();
        let rot = pose.rotation_matrix();
        let c = Point3::from(pose.translation());
        for (x, y) in [(0u32, 0u32), (80, 60), (159, 119), (40, 100)] {
            let dir = rot * Vec3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
            let s = scene.raycast(&c, &dir).unwrap();
            let hit = c + dir * s;
            assert!(
                (hit.z - scene.surface_z(hit.x, hit.y)).abs() < 1e-6,
                "residual {}",
                (hit.z - scene.surface_z(hit.x, hit.y)).abs()
            );
        }
        // The raster stores f32, so it agrees at f32 resolution only.
        let frame = render_frame(&scene, &pose, &k).unwrap();
        let dir = rot * Vec3::new((80.0 - k.cx) / k.fx, (60.0 - k.cy) / k.fy, 1.0);
        let s = scene.raycast(&c, &dir).unwrap();
        assert!((frame.depth.get(80, 60).unwrap() - s).abs() < 1e-5 * s);
    }

    #[test]
    fn rendering_is_deterministic() {
        let scene = generate_scene(&SceneSpec::default());
        let pose = RigidPose::from_translation(0.0, 0.0, -100.0);
        let a = render_frame(&scene, &pose, &test_intrinsics()).unwrap();
        let b = render_frame(&scene, &pose, &test_intrinsics()).unwrap();
        assert_eq!(a.left, b.left);
        assert_eq!(a.right, b.right);
        assert_eq!(a.depth, b.depth);
    }

    #[test]
    fn stereo_pair_obeys_disparity_geometry() {
        // Warp the right image to the left by the ground-truth disparity;
        // intensities must agree since shading is view-independent. The
        // texture is kept a few pixels per cell so bilinear interpolation
        // error stays below the comparison tolerance.
        let scene = generate_scene(&SceneSpec {
            texture_cells: 24.0,
            ..SceneSpec::default()
        });
        let pose = RigidPose::from_translation(0.0, 0.0, -100.0);
        let k = test_intrinsics();
        let frame = render_frame(&scene, &pose, &k).unwrap();
        let baseline = k.baseline.unwrap();
        let mut checked = 0;
        for y in (10..110).step_by(13) {
            for x in (10..150).step_by (11) {
                let depth = frame.depth.get(x, y).unwrap();
                let disparity = k.fx * baseline / depth;
                let xr = x as f64 - disparity;
                if xr < 0.0 {
                    continue;
                }
                let warped = frame.right.sample_bilinear(xr, y as f64).unwrap();
                let left = frame.left.at(x, y) as f64;
                assert!(
                    (warped - left).abs() < 0.02,
                    "intensity mismatch {} at ({x},{y})",
                    (warped - left).abs()
                );
                checked += 1;
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn zoom_in_decreases_standoff_monotonically() {
        let spec = TrajectorySpec {
            kind: MotionKind::ZoomIn,
            frames: 12,
            amplitude: 10.0,
            ..TrajectorySpec::default()
        };
        let traj = generate_trajectory(&spec, 4.0).unwrap();
        let z: Vec<f64> = traj.poses().map(|p| p.translation().z).collect();
        for w in z.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!((z[z.len() - 1] - z[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn follow_keeps_standoff_constant() {
        let spec = TrajectorySpec {
            kind: MotionKind::Follow,
            frames: 10,
            amplitude: 15.0,
            ..TrajectorySpec::default()
        };
        let traj = generate_trajectory(&spec, 4.0).unwrap();
        for p in traj.poses() {
            assert!((p.translation().z - -100.0).abs() < 1e-6);
        }
    }

    #[test]
    fn random_trajectory_is_seed_deterministic() {
        let spec = TrajectorySpec {
            kind: MotionKind::Random,
            frames: 20,
            ..TrajectorySpec::default()
        };
        let a = generate_trajectory(&spec, 4.0).unwrap();
        let b = generate_trajectory(&spec, 4.0).unwrap();
        for ((_, pa), (_, pb)) in a.entries().iter().zip(b.entries()) {
            assert_eq!(pa.translation(), pb.translation());
        }
    }

    #[test]
    fn excessive_amplitude_is_rejected() {
        let spec = TrajectorySpec {
            kind: MotionKind::ZoomIn,
            frames: 10,
            amplitude: 98.0,
            standoff: 100.0,
            ..TrajectorySpec::default()
        };
        assert!(matches!(
            generate_trajectory(&spec, 4.0),
            Err(SynthError::CameraThroughSurface(_))
        ));
    }
}
