//! Coarse-to-fine camera localization against a reconstructed map.
//!
//! Map building projects the reconstruction's 3D points into selected
//! keyframes and stores the surviving pixel/point correspondences together
//! with a global image descriptor per keyframe. A query is localized by
//! retrieving its nearest keyframes in descriptor space, clustering them by
//! co-observed 3D points, and, largest cluster first, matching local
//! features to collect 3D-2D pairs for a RANSAC-verified minimal-solver
//! pose; the first valid pose terminates the search.

mod features;
mod pnp;

pub use features::{
    detect_local_features, detect_local_features_with, match_features, BinaryDescriptor,
    FeatureConfig, LocalFeature,
};
pub use pnp::{solve_p3p, solve_pnp_ransac, PnpError, PnpResult, RansacConfig};

use std::collections::HashSet;

use thiserror::Error;

use crate::fusion::{render_model, SurfelMap};
use crate::geometry::{Intrinsics, Pixel, Point3, RigidPose};
use crate::io::{GrayImage, PointRecord};

#[derive(Debug, Error)]
pub enum LocalizationError {
    #[error("reconstruction is empty; cannot build a map")]
    EmptyReconstruction,
    #[error("keyframe images and poses differ in length: {images} vs {poses}")]
    LengthMismatch { images: usize, poses: usize },
    #[error("no cluster produced a valid pose (tried {clusters_tried})")]
    NoValidPose { clusters_tried: usize },
    #[error("query image has no usable features")]
    FeaturelessQuery,
    #[error("map is empty")]
    EmptyMap,
}

/// A stored map frame: pose, image, the projected 3D points it observes,
/// and its global descriptor.
#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: u32,
    /// World(reference)-to-camera transform.
    pub pose: RigidPose,
    pub image: GrayImage,
    /// Sub-pixel projections of the observed 3D points.
    pub keypoints: Vec<Pixel>,
    /// Parallel list of indices into the map's point table.
    pub point_ids: Vec<u32>,
    /// L2-normalized global descriptor.
    pub global_descriptor: Vec<f32>,
}

/// The localization substrate: keyframes plus the shared 3D point table.
#[derive(Debug, Clone, Default)]
pub struct GlobalMap {
    pub points: Vec<PointRecord>,
    pub keyframes: Vec<Keyframe>,
}

impl GlobalMap {
    /// Checks the structural invariant that every referenced point id
    /// exists in the point table.
    pub fn validate(&self) -> Result<(), String> {
        for kf in &self.keyframes {
            if kf.keypoints.len() != kf.point_ids.len() {
                return Err(format!(
                    "keyframe {}: {} keypoints vs {} point ids",
                    kf.id,
                    kf.keypoints.len(),
                    kf.point_ids.len()
                ));
            }
            if let Some(bad) = kf.point_ids.iter().find(|id| **id as usize >= self.points.len()) {
                return Err(format!("keyframe {}: point id {bad} out of range", kf.id));
            }
            let norm: f32 = kf.global_descriptor.iter().map(|v| v * v).sum::<f32>().sqrt();
            if !kf.global_descriptor.is_empty() && (norm - 1.0).abs() > 1e-4 && norm > 1e-6 {
                return Err(format!("keyframe {}: descriptor norm {norm}", kf.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MapBuildConfig {
    /// Every stride-th frame becomes a keyframe.
    pub keyframe_stride: usize,
    /// Depth consistency gate against the rendered model, mm.
    pub gamma_depth: f64,
    /// Target upper bound on stored correspondences per keyframe; the
    /// point table is thinned by a uniform id stride to stay near it.
    pub max_points_per_keyframe: usize,
}

impl Default for MapBuildConfig {
    fn default() -> Self {
        Self {
            keyframe_stride: 5,
            gamma_depth: 10.0,
            max_points_per_keyframe: 4000,
        }
    }
}

/// Builds the global map from the reconstruction: every stride-th frame
/// becomes a keyframe holding the surfel points that are in front of it,
/// in bounds, and depth-consistent with the rendered model.
pub fn build_global_map(
    images: &[GrayImage],
    poses: &[RigidPose],
    surfels: &SurfelMap,
    k: &Intrinsics,
    config: &MapBuildConfig,
) -> Result<GlobalMap, LocalizationError> {
    if surfels.is_empty() || images.is_empty() {
        return Err(LocalizationError::EmptyReconstruction);
    }
    if images.len() != poses.len() {
        return Err(LocalizationError::LengthMismatch {
            images: images.len(),
            poses: poses.len(),
        });
    }
    let points = surfels.to_point_records(0.0);
    let id_stride = (points.len() / config.max_points_per_keyframe.max(1)).max(1);

    let mut keyframes = Vec::new();
    for frame in (0..images.len()).step_by(config.keyframe_stride.max(1)) {
        let pose = &poses[frame];
        let render = render_model(surfels, pose, k);
        let mut keypoints = Vec::new();
        let mut point_ids = Vec::new();
        for id in (0..points.len()).step_by(id_stride) {
            let camera_point = pose.transform_point(&points[id].position);
            if camera_point.z <= 0.0 {
                continue;
            }
            let Ok(pixel) = k.project(&camera_point) else { continue };
            let (ux, uy) = (pixel.x.round(), pixel.y.round());
            if ux < 0.0 || uy < 0.0 || ux >= k.width as f64 || uy >= k.height as f64 {
                continue;
            }
            // Occlusion check against the rendered model depth.
            match render.depth.get(ux as u32, uy as u32) {
                Some(depth) if (depth - camera_point.z).abs() <= config.gamma_depth => {}
                _ => continue,
            }
            keypoints.push(pixel);
            point_ids.push(id as u32);
        }
        keyframes.push(Keyframe {
            id: frame as u32,
            pose: *pose,
            image: images[frame].clone(),
            keypoints,
            point_ids,
            global_descriptor: compute_global_descriptor(&images[frame]),
        });
    }
    Ok(GlobalMap { points, keyframes })
}

/// Deterministic global image descriptor: a 4x4 spatial grid of 8-bin
/// gradient-orientation histograms weighted by gradient magnitude, 128-d,
/// L2-normalized. A constant image yields the zero vector.
pub fn compute_global_descriptor(image: &GrayImage) -> Vec<f32> {
    const GRID: usize = 4;
    const BINS: usize = 8;
    let w = image.width() as usize;
    let h = image.height() as usize;
    let mut descriptor = vec![0.0f32; GRID * GRID * BINS];
    if w < 3 || h < 3 {
        return descriptor;
    }
    for y in 1..h - 1 {
        let cell_y = (y * GRID / h).min(GRID - 1);
        for x in 1..w - 1 {
            let gx = 0.5 * (image.at(x as u32 + 1, y as u32) - image.at(x as u32 - 1, y as u32));
            let gy = 0.5 * (image.at(x as u32, y as u32 + 1) - image.at(x as u32, y as u32 - 1));
            let magnitude = (gx * gx + gy * gy).sqrt();
            if magnitude <= 1e-12 {
                continue;
            }
            let angle = (gy as f64).atan2(gx as f64);
            let mut bin = ((angle + std::f64::consts::PI) / (std::f64::consts::TAU / BINS as f64))
                as usize;
            if bin >= BINS {
                bin = BINS - 1;
            }
            let cell_x = (x * GRID / w).min(GRID - 1);
            descriptor[(cell_y * GRID + cell_x) * BINS + bin] += magnitude;
        }
    }
    let norm: f32 = descriptor.iter().map(|v| v * v).sum::<f32>().sqrt();
    if norm > 1e-12 {
        for v in &mut descriptor {
            *v /= norm;
        }
    }
    descriptor
}

fn descriptor_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// The `k` keyframes nearest to the query descriptor by Euclidean
/// distance (exhaustive search), ascending; ties break on keyframe index.
pub fn retrieve_nearest(query: &[f32], map: &GlobalMap, k: usize) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = map
        .keyframes
        .iter()
        .enumerate()
        .map(|(i, kf)| (i, descriptor_distance(query, &kf.global_descriptor)))
        .collect();
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Connected components of the covisibility graph over the retrieved
/// keyframes (edge: at least `min_shared` co-observed point ids), largest
/// cluster first.
pub fn cluster_by_covisibility(
    retrieved: &[usize],
    map: &GlobalMap,
    min_shared: usize,
) -> Vec<Vec<usize>> {
    let sets: Vec<HashSet<u32>> = retrieved
        .iter()
        .map(|&i| map.keyframes[i].point_ids.iter().copied().collect())
        .collect();
    let n = retrieved.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in i + 1..n {
            let shared = sets[i].intersection(&sets[j]).count();
            if shared >= min_shared {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    for (i, &keyframe) in retrieved.iter().enumerate() {
        let root = find(&mut parent, i);
        match roots.iter().position(|r| *r == root) {
            Some(pos) => clusters[pos].push(keyframe),
            None => {
                roots.push(root);
                clusters.push(vec![keyframe]);
            }
        }
    }
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    clusters
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LocalizeConfig {
    /// Retrieved nearest keyframes.
    pub k_nearest: usize,
    /// Covisibility edge threshold, co-observed points.
    pub min_shared: usize,
    /// Feature matching ratio-test threshold.
    pub match_ratio: f64,
    /// Snap radius when tying a matched keyframe feature to a stored
    /// keypoint, pixels.
    pub snap_radius_px: f64,
    pub ransac: RansacConfig,
    /// Largest accepted inlier reprojection RMSE for a valid pose, px.
    pub max_inlier_rmse_px: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            k_nearest: 5,
            min_shared: 10,
            match_ratio: 0.8,
            snap_radius_px: 2.0,
            ransac: RansacConfig::default(),
            max_inlier_rmse_px: 2.0,
        }
    }
}

/// Localizes a query image against the map. Deterministic for a fixed
/// RANSAC seed; concurrent calls on a shared map are safe.
pub fn localize(
    query: &GrayImage,
    map: &GlobalMap,
    k: &Intrinsics,
    config: &LocalizeConfig,
) -> Result<RigidPose, LocalizationError> {
    if map.keyframes.is_empty() {
        return Err(LocalizationError::EmptyMap);
    }
    let descriptor = compute_global_descriptor(query);
    let retrieved: Vec<usize> = retrieve_nearest(&descriptor, map, config.k_nearest)
        .into_iter()
        .map(|(i, _)| i)
        .collect();
    let clusters = cluster_by_covisibility(&retrieved, map, config.min_shared);

    let query_features = detect_local_features(query);
    if query_features.is_empty() {
        return Err(LocalizationError::FeaturelessQuery);
    }

    let mut clusters_tried = 0;
    for cluster in &clusters {
        clusters_tried += 1;
        let mut pairs: Vec<(Point3, Pixel)> = Vec::new();
        let mut seen: HashSet<(u32, usize)> = HashSet::new();
        for &kf_index in cluster {
            let kf = &map.keyframes[kf_index];
            let kf_features = detect_local_features(&kf.image);
            for (qi, ri) in match_features(&query_features, &kf_features, config.match_ratio) {
                let feature_pixel = &kf_features[ri].keypoint;
                // Tie the matched keyframe feature to the nearest stored
                // projection, which carries the 3D point id.
                let mut best: Option<(f64, usize)> = None;
                for (slot, stored) in kf.keypoints.iter().enumerate() {
                    let d = stored.distance(feature_pixel);
                    if d <= config.snap_radius_px && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, slot));
                    }
                }
                let Some((_, slot)) = best else { continue };
                let point_id = kf.point_ids[slot];
                if seen.insert((point_id, qi)) {
                    // Transfer the snap offset onto the query pixel: the
                    // stored keypoint is where this 3D point actually
                    // projects, so an exact revisit reprojects exactly and
                    // nearby views keep only a second-order error.
                    let stored = &kf.keypoints[slot];
                    let q = &query_features[qi].keypoint;
                    let corrected = Pixel::new(
                        q.x + (stored.x - feature_pixel.x),
                        q.y + (stored.y - feature_pixel.y),
                    );
                    pairs.push((map.points[point_id as usize].position, corrected));
                }
            }
        }
        if pairs.len() < 4 {
            continue;
        }
        match solve_pnp_ransac(&pairs, k, &config.ransac) {
            Ok(result) if result.rmse_px <= config.max_inlier_rmse_px => {
                return Ok(result.pose);
            }
            _ => continue,
        }
    }
    Err(LocalizationError::NoValidPose { clusters_tried })
}
