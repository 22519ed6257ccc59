//! The surfel model: per-frame surfel creation, projective association
//! against the reference model, and confidence-weighted fusion.
//!
//! Each depth frame becomes a set of oriented disks (surfels). New surfels
//! are paired with reference surfels by rendering the model into the
//! current camera and scanning a small pixel neighborhood; pairs are gated
//! on ray-distance difference and normal angle, and the candidate closest
//! to the new surfel's viewing ray wins. Matched surfels are averaged with
//! confidence weights, unmatched ones are inserted, and confidences
//! accumulate so revisited surface regions grow more certain over time.

use thiserror::Error;

use crate::geometry::{Intrinsics, Pixel, Point3, RigidPose, Vec3};
use crate::io::{DepthMap, GrayImage, PointRecord};
use crate::parallel;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("depth and image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(u32, u32, u32, u32),
}

/// An oriented surface disk with accumulated confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surfel {
    /// Position, mm.
    pub position: Point3,
    /// Unit normal, oriented toward the observing camera.
    pub normal: Vec3,
    /// Disk radius, mm.
    pub radius: f64,
    /// Positive accumulated confidence.
    pub confidence: f64,
    /// Frame index of the last update.
    pub timestamp: usize,
    /// Mean observed intensity in [0, 1], carried for export color.
    pub intensity: f32,
}

/// An unordered surfel collection. The reference model lives in the
/// coordinate frame of the first camera; per-frame maps live in their
/// camera frame. Single writer during integration.
#[derive(Debug, Clone, Default)]
pub struct SurfelMap {
    pub(crate) surfels: Vec<Surfel>,
}

impl SurfelMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.surfels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfels.is_empty()
    }

    pub fn surfels(&self) -> &[Surfel] {
        &self.surfels
    }

    pub fn push(&mut self, surfel: Surfel) {
        self.surfels.push(surfel);
    }

    /// The map expressed in another frame: positions and normals mapped by
    /// `pose`.
    pub fn transformed(&self, pose: &RigidPose) -> SurfelMap {
        let surfels = parallel::map_chunks(&self.surfels, parallel::REDUCE_CHUNK, |_, chunk| {
            chunk
                .iter()
                .map(|s| Surfel {
                    position: pose.transform_point(&s.position),
                    normal: pose.rotate_vector(&s.normal),
                    ..*s
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();
        SurfelMap { surfels }
    }

    /// Export records; surfels below `min_confidence` are skipped.
    pub fn to_point_records(&self, min_confidence: f64) -> Vec<PointRecord> {
        self.surfels
            .iter()
            .filter(|s| s.confidence >= min_confidence)
            .map(|s| {
                let g = (s.intensity * 255.0).round().clamp(0.0, 255.0) as u8;
                PointRecord {
                    position: s.position,
                    normal: s.normal,
                    color: [g, g, g],
                    confidence: s.confidence as f32,
                }
            })
            .collect()
    }
}

/// Gates of the association step.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AssociationThresholds {
    /// Largest accepted ray-distance difference, mm.
    pub gamma_depth: f64,
    /// Largest accepted normal angle, radians.
    pub gamma_theta: f64,
    /// Half-width of the searched pixel window (1 = 3x3).
    pub neighborhood: u32,
}

impl Default for AssociationThresholds {
    fn default() -> Self {
        Self {
            gamma_depth: 10.0,
            gamma_theta: 30f64.to_radians(),
            neighborhood: 1,
        }
    }
}

/// Outcome of associating a frame's surfels with the reference model:
/// `(new index, reference index)` pairs plus the unmatched new indices.
#[derive(Debug, Clone)]
pub struct Association {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched: Vec<usize>,
}

/// Normal from forward differences on the backprojected point grid,
/// renormalized to unit length and flipped to face the camera
/// (`n · v < 0`). `None` at the grid border, where a neighbor is missing,
/// or where the difference vectors are parallel.
pub fn compute_normal(grid: &PointGrid, x: u32, y: u32) -> Option<Vec3> {
    let center = grid.get(x, y)?;
    let right = grid.get(x + 1, y)?;
    let down = grid.get(x, y + 1)?;
    let cross = (right - center).cross(&(down - center));
    let norm = cross.norm();
    if norm < 1e-12 {
        return None;
    }
    let mut n = cross / norm;
    if n.dot(&center.coords) > 0.0 {
        n = -n;
    }
    Some(n)
}

/// Disk radius so the projected footprint covers a pixel:
/// `r = depth * sqrt(2) / (f * |n_z|)`, clamped to `r_max` (grazing
/// surfaces would otherwise blow up).
pub fn compute_radius(depth: f64, focal: f64, n_z: f64, r_max: f64) -> f64 {
    if n_z.abs() < 1e-9 {
        return r_max;
    }
    (depth * std::f64::consts::SQRT_2 / (focal * n_z.abs())).min(r_max)
}

/// Initial confidence: a Gaussian in the normalized radial distance from
/// the principal point, `exp(-gamma^2 / (2 * 0.6^2))`. Center pixels start
/// most trusted.
pub fn init_confidence(p: &Pixel, k: &Intrinsics) -> f64 {
    const SIGMA: f64 = 0.6;
    let center_norm = (k.cx * k.cx + k.cy * k.cy).sqrt().max(1.0);
    let dx = p.x - k.cx;
    let dy = p.y - k.cy;
    let gamma = (dx * dx + dy * dy).sqrt() / center_norm;
    (-gamma * gamma / (2.0 * SIGMA * SIGMA)).exp()
}

/// Backprojected points of a depth frame, indexable by pixel. Stored flat
/// with a zero-depth sentinel marking invalid entries.
pub struct PointGrid {
    width: u32,
    height: u32,
    points: Vec<[f64; 3]>,
}

impl PointGrid {
    pub fn from_depth(depth: &DepthMap, k: &Intrinsics) -> PointGrid {
        let w = depth.width() as usize;
        let mut points = vec![[0.0f64; 3]; w * depth.height() as usize];
        let data = depth.data();
        parallel::for_each_row_mut(&mut points, w, |y, row| {
            let depth_row = &data[y * w..(y + 1) * w];
            let ny = (y as f64 - k.cy) / k.fy;
            for (x, (slot, d)) in row.iter_mut().zip(depth_row).enumerate() {
                let d = *d as f64;
                if d > 0.0 {
                    *slot = [(x as f64 - k.cx) * d / k.fx, ny * d, d];
                }
            }
        });
        PointGrid {
            width: depth.width(),
            height: depth.height(),
            points,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> Option<Point3> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let p = self.points[(y * self.width + x) as usize];
        (p[2] > 0.0).then(|| Point3::new(p[0], p[1], p[2]))
    }
}

/// Builds the frame's surfels in the camera frame: one surfel per valid
/// depth pixel with a valid normal. Radii are clamped to ten times the
/// frame median.
pub fn create_surfels(
    depth: &DepthMap,
    image: &GrayImage,
    k: &Intrinsics,
    t: usize,
) -> Result<SurfelMap, FusionError> {
    if depth.width() != image.width() || depth.height() != image.height() {
        return Err(FusionError::SizeMismatch(
            depth.width(),
            depth.height(),
            image.width(),
            image.height(),
        ));
    }
    let grid = PointGrid::from_depth(depth, k);
    let w = depth.width();

    // First pass: surfels with unclamped radii, row-parallel.
    let rows: Vec<Vec<Surfel>> = parallel::map_indexed(depth.height() as usize, |y| {
        let y = y as u32;
        let mut row = Vec::new();
        for x in 0..w {
            let Some(position) = grid.get(x, y) else { continue };
            let Some(normal) = compute_normal(&grid, x, y) else {
                continue;
            };
            let pixel = Pixel::new(x as f64, y as f64);
            row.push(Surfel {
                position,
                normal,
                radius: position.z * std::f64::consts::SQRT_2
                    / (k.fx * normal.z.abs().max(1e-9)),
                confidence: init_confidence(&pixel, k),
                timestamp: t,
                intensity: image.at(x, y),
            });
        }
        row
    });

    let mut radii: Vec<f64> = rows.iter().flatten().map(|s| s.radius).collect();
    if radii.is_empty() {
        return Ok(SurfelMap::new());
    }
    let mid = radii.len() / 2;
    radii.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    let r_max = 10.0 * radii[mid];

    let mut surfels: Vec<Surfel> = rows.into_iter().flatten().collect();
    let chunk = 4096.min(surfels.len().max(1));
    parallel::for_each_row_mut(&mut surfels, chunk, |_, chunk| {
        for s in chunk {
            s.radius = s.radius.min(r_max);
        }
    });
    Ok(SurfelMap { surfels })
}

/// A rendered view of a surfel model: per-pixel nearest depth and the
/// index of the surfel that produced it (`u32::MAX` where empty).
pub struct ModelRender {
    pub depth: DepthMap,
    pub indices: Vec<u32>,
}

pub const NO_SURFEL: u32 = u32::MAX;

/// Projects every surfel into the camera at `pose` (model frame to camera
/// frame) and keeps the nearest surfel per pixel.
pub fn render_model(map: &SurfelMap, pose: &RigidPose, k: &Intrinsics) -> ModelRender {
    let positions: Vec<Point3> = parallel::map_chunks(
        map.surfels(),
        parallel::REDUCE_CHUNK,
        |_, chunk| chunk.iter().map(|s| pose.transform_point(&s.position)).collect::<Vec<_>>(),
    )
    .into_iter()
    .flatten()
    .collect();
    zbuffer(&positions, k)
}

/// Z-buffer over camera-frame positions that are already transformed.
/// Projection runs in parallel; the scattered write pass stays sequential
/// and exclusive.
pub(crate) fn zbuffer(positions: &[Point3], k: &Intrinsics) -> ModelRender {
    let projected: Vec<(u32, f32)> =
        parallel::map_chunks(positions, parallel::REDUCE_CHUNK, |_, chunk| {
            chunk
                .iter()
                .map(|p| {
                    if p.z <= 0.0 {
                        return (u32::MAX, 0.0);
                    }
                    let x = (k.fx * p.x / p.z + k.cx).round();
                    let y = (k.fy * p.y / p.z + k.cy).round();
                    if x < 0.0 || y < 0.0 || x >= k.width as f64 || y >= k.height as f64 {
                        return (u32::MAX, 0.0);
                    }
                    ((y as u32) * k.width + x as u32, p.z as f32)
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();

    let mut depth = DepthMap::new(k.width, k.height);
    let mut indices = vec![NO_SURFEL; (k.width * k.height) as usize];
    let buf = depth.raw_mut();
    for (i, (pixel, z)) in projected.into_iter().enumerate() {
        if pixel == u32::MAX {
            continue;
        }
        let slot = pixel as usize;
        if buf[slot] <= 0.0 || z < buf[slot] {
            buf[slot] = z;
            indices[slot] = i as u32;
        }
    }
    ModelRender { depth, indices }
}

/// Pairs each new surfel with a reference surfel following the projective
/// search: the reference model is rendered at `pose`, candidates come from
/// the pixel window around the new surfel's projection, gates check the
/// ray-distance difference (`gamma_depth`) and normal angle
/// (`gamma_theta`), and the candidate nearest the new surfel's viewing ray
/// wins.
pub fn associate(
    new: &SurfelMap,
    reference: &SurfelMap,
    pose: &RigidPose,
    k: &Intrinsics,
    thresholds: &AssociationThresholds,
) -> Association {
    let (positions, normals): (Vec<Point3>, Vec<Vec3>) =
        parallel::map_chunks(reference.surfels(), parallel::REDUCE_CHUNK, |_, chunk| {
            chunk
                .iter()
                .map(|s| (pose.transform_point(&s.position), pose.rotate_vector(&s.normal)))
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .unzip();
    let render = zbuffer(&positions, k);
    let cos_gamma_theta = thresholds.gamma_theta.cos();
    let matches: Vec<Option<usize>> =
        parallel::map_chunks(new.surfels(), parallel::REDUCE_CHUNK, |_, chunk| {
            chunk
                .iter()
                .map(|s| {
                    best_candidate(s, &positions, &normals, &render, k, cos_gamma_theta, thresholds)
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();

    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for (new_idx, m) in matches.into_iter().enumerate() {
        match m {
            Some(ref_idx) => pairs.push((new_idx, ref_idx)),
            None => unmatched.push(new_idx),
        }
    }
    Association { pairs, unmatched }
}

fn best_candidate(
    s: &Surfel,
    ref_positions: &[Point3],
    ref_normals: &[Vec3],
    render: &ModelRender,
    k: &Intrinsics,
    cos_gamma_theta: f64,
    thresholds: &AssociationThresholds,
) -> Option<usize> {
    let v = s.position;
    if v.z <= 0.0 {
        return None;
    }
    let pix = k.project(&v).ok()?;
    let px = pix.x.round() as i64;
    let py = pix.y.round() as i64;
    // Viewing ray through the new surfel, as (x/z, y/z, 1).
    let ray = Vec3::new(v.x / v.z, v.y / v.z, 1.0);
    let ray_norm = ray.norm();

    let half = thresholds.neighborhood as i64;
    let mut best: Option<(f64, usize)> = None;
    for dy in -half..=half {
        for dx in -half..=half {
            let (ux, uy) = (px + dx, py + dy);
            if ux < 0 || uy < 0 || ux >= k.width as i64 || uy >= k.height as i64 {
                continue;
            }
            let idx = render.indices[(uy as u32 * k.width + ux as u32) as usize];
            if idx == NO_SURFEL {
                continue;
            }
            let candidate = &ref_positions[idx as usize];
            let d_p = (v.z - candidate.z).abs() * ray_norm;
            if d_p >= thresholds.gamma_depth {
                continue;
            }
            // theta < gamma_theta, compared in cosines
            if s.normal.dot(&ref_normals[idx as usize]) <= cos_gamma_theta {
                continue;
            }
            let d_a = candidate.coords.cross(&ray).norm() / ray_norm;
            if best.is_none() || d_a < best.unwrap().0 {
                best = Some((d_a, idx as usize));
            }
        }
    }
    best.map(|(_, idx)| idx)
}

/// Applies the fusion rules: matched reference surfels become
/// confidence-weighted averages of position, normal (renormalized), and
/// radius, and their confidence grows by the new surfel's; unmatched new
/// surfels are inserted after transforming into the reference frame.
pub fn fuse(
    reference: &mut SurfelMap,
    new: &SurfelMap,
    association: &Association,
    pose: &RigidPose,
    t: usize,
) {
    let to_reference = pose.inverse();
    for &(new_idx, ref_idx) in &association.pairs {
        reference.surfels[ref_idx] = fused_surfel(
            &reference.surfels[ref_idx],
            &new.surfels[new_idx],
            &to_reference,
            t,
        );
    }

    for &new_idx in &association.unmatched {
        let s = &new.surfels[new_idx];
        reference.push(Surfel {
            position: to_reference.transform_point(&s.position),
            normal: to_reference.rotate_vector(&s.normal),
            timestamp: t,
            ..*s
        });
    }
}

/// Confidence-weighted fusion of one surfel pair; the new surfel is mapped
/// into the reference frame by `to_reference`.
fn fused_surfel(target: &Surfel, s_new: &Surfel, to_reference: &RigidPose, t: usize) -> Surfel {
    let v_new = to_reference.transform_point(&s_new.position);
    let n_new = to_reference.rotate_vector(&s_new.normal);
    let (c_ref, c_new) = (target.confidence, s_new.confidence);
    let total = c_ref + c_new;
    let blended = (target.normal * c_ref + n_new * c_new) / total;
    Surfel {
        position: Point3::from((target.position.coords * c_ref + v_new.coords * c_new) / total),
        normal: if blended.norm() > 1e-12 {
            blended.normalize()
        } else {
            target.normal
        },
        radius: (target.radius * c_ref + s_new.radius * c_new) / total,
        confidence: total,
        timestamp: t,
        intensity: ((target.intensity as f64 * c_ref + s_new.intensity as f64 * c_new) / total)
            as f32,
    }
}

/// One fusion step: create the frame's surfels, associate them with the
/// model, and fuse.
pub fn integrate_frame(
    map: &mut SurfelMap,
    depth: &DepthMap,
    image: &GrayImage,
    k: &Intrinsics,
    pose: &RigidPose,
    t: usize,
    thresholds: &AssociationThresholds,
) -> Result<(), FusionError> {
    let new = create_surfels(depth, image, k, t)?;
    integrate_surfels(map, &new, pose, k, t, thresholds);
    Ok(())
}

/// Fusion step over already-created surfels, for callers that share the
/// frame's surfels with the tracker.
pub fn integrate_surfels(
    map: &mut SurfelMap,
    new: &SurfelMap,
    pose: &RigidPose,
    k: &Intrinsics,
    t: usize,
    thresholds: &AssociationThresholds,
) {
    let association = associate(new, map, pose, k, thresholds);
    fuse(map, new, &association, pose, t);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, render_frame, SceneSpec};
    use approx::assert_relative_eq;

    fn test_intrinsics() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 40.0, 30.0, 80, 60, Some(5.0)).unwrap()
    }

    fn grid_from(points: Vec<(u32, u32, Point3)>, w: u32, h: u32) -> PointGrid {
        let mut grid = PointGrid {
            width: w,
            height: h,
            points: vec![[0.0; 3]; (w * h) as usize],
        };
        for (x, y, p) in points {
            grid.points[(y * w + x) as usize] = [p.x, p.y, p.z];
        }
        grid
    }

    #[test]
    fn normal_hand_case_faces_camera() {
        let grid = grid_from(
            vec![
                (0, 0, Point3::new(0.0, 0.0, 1.0)),
                (1, 0, Point3::new(1.0, 0.0, 1.0)),
                (0, 1, Point3::new(0.0, 1.0, 1.0)),
            ],
            2,
            2,
        );
        let n = compute_normal(&grid, 0, 0).unwrap();
        assert_relative_eq!(n, Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
    }

    #[test]
    fn normal_border_and_parallel_cases() {
        let grid = grid_from(vec![(0, 1, Point3::new(0.0, 0.0, 1.0))], 2, 2);
        assert!(compute_normal(&grid, 0, 1).is_none()); // last row

        let collinear = grid_from(
            vec![
                (0, 0, Point3::new(0.0, 0.0, 1.0)),
                (1, 0, Point3::new(1.0, 0.0, 1.0)),
                (0, 1, Point3::new(-1.0, 0.0, 1.0)),
            ],
            2,
            2,
        );
        assert!(compute_normal(&collinear, 0, 0).is_none());
    }

    #[test]
    fn radius_formula_and_clamp() {
        assert_relative_eq!(
            compute_radius(10.0, 100.0, -1.0, 1e9),
            10.0 * std::f64::consts::SQRT_2 / 100.0,
            epsilon = 1e-12
        );
        assert_eq!(compute_radius(10.0, 100.0, 0.0, 2.5), 2.5);
        // linear in depth
        let r1 = compute_radius(10.0, 100.0, -0.8, 1e9);
        let r2 = compute_radius(20.0, 100.0, -0.8, 1e9);
        assert_relative_eq!(r2, 2.0 * r1, epsilon = 1e-12);
    }

    #[test]
    fn confidence_center_and_corner() {
        let k = test_intrinsics();
        assert_relative_eq!(init_confidence(&Pixel::new(40.0, 30.0), &k), 1.0);
        let corner = init_confidence(&Pixel::new(0.0, 0.0), &k);
        assert_relative_eq!(corner, (-1.0f64 / 0.72).exp(), epsilon = 1e-12);
        assert!((corner - 0.2494).abs() < 5e-4);
        // strictly decreasing radially
        let mut last = 1.1;
        for step in 0..10 {
            let c = init_confidence(&Pixel::new(40.0 + 4.0 * step as f64, 30.0), &k);
            assert!(c < last);
            last = c;
        }
    }

    #[test]
    fn create_surfels_on_plane() {
        let k = test_intrinsics();
        let mut depth = DepthMap::new(k.width, k.height);
        for y in 0..k.height {
            for x in 0..k.width {
                depth.set(x, y, 50.0);
            }
        }
        let image = GrayImage::new(k.width, k.height);
        let map = create_surfels(&depth, &image, &k, 3).unwrap();
        assert!(map.len() <= depth.valid_count());
        let expected_r = 50.0 * std::f64::consts::SQRT_2 / k.fx;
        for s in map.surfels() {
            assert_relative_eq!(s.normal, Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-9);
            assert_relative_eq!(s.radius, expected_r, epsilon = 1e-9);
            assert_eq!(s.timestamp, 3);
        }
    }

    #[test]
    fn create_surfels_empty_depth() {
        let k = test_intrinsics();
        let depth = DepthMap::new(k.width, k.height);
        let image = GrayImage::new(k.width, k.height);
        assert!(create_surfels(&depth, &image, &k, 0).unwrap().is_empty());
    }

    fn on_axis_surfel(z: f64) -> Surfel {
        Surfel {
            position: Point3::new(0.0, 0.0, z),
            normal: Vec3::new(0.0, 0.0, -1.0),
            radius: 0.1,
            confidence: 1.0,
            timestamp: 0,
            intensity: 0.5,
        }
    }

    #[test]
    fn render_single_surfel_on_axis() {
        let k = test_intrinsics();
        let mut map = SurfelMap::new();
        map.push(on_axis_surfel(10.0));
        let render = render_model(&map, &RigidPose::identity(), &k);
        assert_eq!(render.depth.get(40, 30), Some(10.0));
        assert_eq!(render.indices[(30 * k.width + 40) as usize], 0);
        assert_eq!(render.depth.valid_count(), 1);
    }

    #[test]
    fn render_zbuffer_keeps_nearest() {
        let k = test_intrinsics();
        let mut map = SurfelMap::new();
        map.push(on_axis_surfel(9.0));
        map.push(on_axis_surfel(5.0));
        let render = render_model(&map, &RigidPose::identity(), &k);
        assert_eq!(render.depth.get(40, 30), Some(5.0));
        assert_eq!(render.indices[(30 * k.width + 40) as usize], 1);
    }

    #[test]
    fn render_reproduces_created_depth() {
        let k = test_intrinsics();
        let scene = generate_scene(&SceneSpec::default());
        let pose = RigidPose::from_translation(0.0, 0.0, -100.0);
        let frame = render_frame(&scene, &pose, &k).unwrap();
        let map = create_surfels(&frame.depth, &frame.left, &k, 0).unwrap();
        let render = render_model(&map, &RigidPose::identity(), &k);
        let mut checked = 0;
        for y in 0..k.height {
            for x in 0..k.width {
                if let (Some(a), Some(b)) = (render.depth.get(x, y), frame.depth.get(x, y)) {
                    assert!((a - b).abs() < 1e-4, "{a} vs {b} at ({x},{y})");
                    checked += 1;
                }
            }
        }
        assert!(checked > (k.width * k.height / 2) as usize);
    }

    #[test]
    fn self_association_matches_everything() {
        let k = test_intrinsics();
        let scene = generate_scene(&SceneSpec::default());
        let pose = RigidPose::from_translation(0.0, 0.0, -100.0);
        let frame = render_frame(&scene, &pose, &k).unwrap();
        let map = create_surfels(&frame.depth, &frame.left, &k, 0).unwrap();
        let assoc = associate(
            &map,
            &map,
            &RigidPose::identity(),
            &k,
            &AssociationThresholds::default(),
        );
        assert!(assoc.unmatched.is_empty());
        for &(a, b) in &assoc.pairs {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ray_distance_hand_case() {
        // Candidate offset 1 mm laterally at z=10 from an on-axis surfel.
        let k = test_intrinsics();
        let mut reference = SurfelMap::new();
        let mut offset = on_axis_surfel(10.0);
        offset.position = Point3::new(1.0, 0.0, 10.0);
        reference.push(offset);
        let mut new = SurfelMap::new();
        new.push(on_axis_surfel(10.0));

        // d_a = |(1,0,10) x (0,0,1)| / |(0,0,1)| = 1
        let v = Vec3::new(1.0, 0.0, 10.0);
        let a = Vec3::new(0.0, 0.0, 1.0);
        assert_relative_eq!(v.cross(&a).norm() / a.norm(), 1.0, epsilon = 1e-12);

        // The offset candidate projects 10 px away from the on-axis pixel,
        // outside a 3x3 window, so it must stay unmatched.
        let assoc = associate(
            &new,
            &reference,
            &RigidPose::identity(),
            &k,
            &AssociationThresholds::default(),
        );
        assert_eq!(assoc.pairs.len(), 0);
        assert_eq!(assoc.unmatched, vec![0]);
    }

    #[test]
    fn displaced_reference_beyond_gate_is_unmatched() {
        let k = test_intrinsics();
        let thresholds = AssociationThresholds::default();
        let mut reference = SurfelMap::new();
        reference.push(on_axis_surfel(10.0 + 2.0 * thresholds.gamma_depth));
        let mut new = SurfelMap::new();
        new.push(on_axis_surfel(10.0));
        let assoc = associate(&new, &reference, &RigidPose::identity(), &k, &thresholds);
        assert!(assoc.pairs.is_empty());
        assert_eq!(assoc.unmatched, vec![0]);
    }

    #[test]
    fn fuse_weighted_average_cases() {
        let mut reference = SurfelMap::new();
        reference.push(Surfel {
            position: Point3::new(0.0, 0.0, 10.0),
            normal: Vec3::new(0.0, 0.0, -1.0),
            radius: 1.0,
            confidence: 1.0,
            timestamp: 0,
            intensity: 0.5,
        });
        let mut new = SurfelMap::new();
        new.push(Surfel {
            position: Point3::new(0.0, 0.0, 12.0),
            normal: Vec3::new(0.0, 0.0, -1.0),
            radius: 2.0,
            confidence: 1.0,
            timestamp: 1,
            intensity: 0.5,
        });
        let association = Association {
            pairs: vec![(0, 0)],
            unmatched: vec![],
        };
        fuse(&mut reference, &new, &association, &RigidPose::identity(), 1);
        let fused = reference.surfels()[0];
        assert_relative_eq!(fused.position, Point3::new(0.0, 0.0, 11.0), epsilon = 1e-12);
        assert_relative_eq!(fused.confidence, 2.0);
        assert_eq!(fused.timestamp, 1);

        // c_ref=3, c_t=1, r_ref=1, r_t=2 -> 1.25
        reference.surfels[0].confidence = 3.0;
        reference.surfels[0].radius = 1.0;
        fuse(&mut reference, &new, &association, &RigidPose::identity(), 2);
        assert_relative_eq!(reference.surfels()[0].radius, (3.0 + 2.0) / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn integrate_same_frame_twice_is_geometry_idempotent() {
        let k = test_intrinsics();
        let scene = generate_scene(&SceneSpec::default());
        let cam = RigidPose::from_translation(0.0, 0.0, -100.0);
        let frame = render_frame(&scene, &cam, &k).unwrap();
        let thresholds = AssociationThresholds::default();
        let mut map = SurfelMap::new();
        integrate_frame(&mut map, &frame.depth, &frame.left, &k, &RigidPose::identity(), 0, &thresholds)
            .unwrap();
        let count = map.len();
        let confidences: Vec<f64> = map.surfels().iter().map(|s| s.confidence).collect();
        integrate_frame(&mut map, &frame.depth, &frame.left, &k, &RigidPose::identity(), 1, &thresholds)
            .unwrap();
        assert_eq!(map.len(), count);
        for (s, c0) in map.surfels().iter().zip(confidences) {
            assert_relative_eq!(s.confidence, 2.0 * c0, epsilon = 1e-9);
        }
    }

    #[test]
    fn first_frame_inserts_all_surfels() {
        let k = test_intrinsics();
        let scene = generate_scene(&SceneSpec::default());
        let cam = RigidPose::from_translation(0.0, 0.0, -100.0);
        let frame = render_frame(&scene, &cam, &k).unwrap();
        let created = create_surfels(&frame.depth, &frame.left, &k, 0).unwrap();
        let mut map = SurfelMap::new();
        integrate_frame(
            &mut map,
            &frame.depth,
            &frame.left,
            &k,
            &RigidPose::identity(),
            0,
            &AssociationThresholds::default(),
        )
        .unwrap();
        assert_eq!(map.len(), created.len());
    }

    #[test]
    fn two_plane_frames_fuse_onto_the_plane() {
        // Flat scene seen from two poses; fused model must stay on the
        // plane z=100 of the first camera frame.
        let k = test_intrinsics();
        let scene = generate_scene(&SceneSpec {
            bumps: 0,
            ..SceneSpec::default()
        });
        let cam0 = RigidPose::from_translation(0.0, 0.0, -100.0);
        let cam1 = RigidPose::from_translation(2.0, 1.0, -99.0);
        let f0 = render_frame(&scene, &cam0, &k).unwrap();
        let f1 = render_frame(&scene, &cam1, &k).unwrap();
        // camera-from-reference for each frame, reference = first camera
        let t0 = RigidPose::identity();
        let t1 = cam1.inverse().compose(&cam0);
        let thresholds = AssociationThresholds::default();
        let mut map = SurfelMap::new();
        integrate_frame(&mut map, &f0.depth, &f0.left, &k, &t0, 0, &thresholds).unwrap();
        integrate_frame(&mut map, &f1.depth, &f1.left, &k, &t1, 1, &thresholds).unwrap();
        let mse: f64 = map
            .surfels()
            .iter()
            .map(|s| (s.position.z - 100.0).powi(2))
            .sum::<f64>()
            / map.len() as f64;
        assert!(mse.sqrt() < 0.1, "plane RMSE {}", mse.sqrt());
    }

    #[test]
    fn association_is_invariant_to_rigid_motion_of_the_model() {
        let k = test_intrinsics();
        let scene = generate_scene(&SceneSpec::default());
        let cam = RigidPose::from_translation(0.0, 0.0, -100.0);
        let frame = render_frame(&scene, &cam, &k).unwrap();
        let new = create_surfels(&frame.depth, &frame.left, &k, 1).unwrap();
        let mut reference = SurfelMap::new();
        integrate_frame(
            &mut reference,
            &frame.depth,
            &frame.left,
            &k,
            &RigidPose::identity(),
            0,
            &AssociationThresholds::default(),
        )
        .unwrap();

        let pose = RigidPose::identity();
        let g = RigidPose::from_axis_angle(&Vec3::new(0.3, 1.0, -0.2), 0.4)
            .compose(&RigidPose::from_translation(5.0, -2.0, 8.0));
        let moved_reference = reference.transformed(&g);
        let moved_pose = pose.compose(&g.inverse());

        let a = associate(&new, &reference, &pose, &k, &AssociationThresholds::default());
        let b = associate(
            &new,
            &moved_reference,
            &moved_pose,
            &k,
            &AssociationThresholds::default(),
        );
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.unmatched, b.unmatched);
    }
}
