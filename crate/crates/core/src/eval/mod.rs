//! Trajectory and reconstruction accuracy metrics.
//!
//! Trajectory accuracy: ATE is the RMS translational residual after a
//! closed-form rigid alignment of the estimate onto the ground truth; RTE
//! and RRE measure the translation and rotation of per-step relative-motion
//! discrepancies, so they are invariant to any global rigid transform of
//! either trajectory. Reconstruction accuracy: a landmark-seeded rigid
//! registration refined by point-to-point ICP, scored as RMS
//! nearest-neighbor distance.

mod kdtree;

pub use kdtree::KdTree;

use thiserror::Error;

use crate::geometry::{
    points_are_collinear, rigid_align_points, GeometryError, Point3, RigidPose,
};
use crate::io::Trajectory;
use crate::parallel;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {required} associated poses, found {found}")]
    TooFewPoses { required: usize, found: usize },
    #[error("landmark correspondences are degenerate (collinear or too few)")]
    DegenerateLandmarks,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Ground-truth / estimate pose pairs associated by timestamp.
#[derive(Debug, Clone)]
pub struct TrajectoryPair {
    gt: Vec<RigidPose>,
    est: Vec<RigidPose>,
}

impl TrajectoryPair {
    /// Associates entries whose timestamps agree within `tolerance`
    /// seconds (nearest match, each estimate entry used at most once).
    pub fn associate(
        gt: &Trajectory,
        est: &Trajectory,
        tolerance: f64,
    ) -> Result<TrajectoryPair, EvalError> {
        let est_entries = est.entries();
        let mut pair = TrajectoryPair {
            gt: Vec::new(),
            est: Vec::new(),
        };
        let mut cursor = 0usize;
        for (t, gt_pose) in gt.entries() {
            while cursor + 1 < est_entries.len()
                && (est_entries[cursor + 1].0 - t).abs() <= (est_entries[cursor].0 - t).abs()
            {
                cursor += 1;
            }
            if cursor < est_entries.len() && (est_entries[cursor].0 - t).abs() <= tolerance {
                pair.gt.push(*gt_pose);
                pair.est.push(est_entries[cursor].1);
                cursor = (cursor + 1).min(est_entries.len().saturating_sub(1));
            }
        }
        if pair.gt.len() < 2 {
            return Err(EvalError::TooFewPoses {
                required: 2,
                found: pair.gt.len(),
            });
        }
        Ok(pair)
    }

    /// Pairs two equally long pose lists directly.
    pub fn from_poses(gt: Vec<RigidPose>, est: Vec<RigidPose>) -> Result<TrajectoryPair, EvalError> {
        if gt.len() != est.len() || gt.len() < 2 {
            return Err(EvalError::TooFewPoses {
                required: 2,
                found: gt.len().min(est.len()),
            });
        }
        Ok(TrajectoryPair { gt, est })
    }

    pub fn len(&self) -> usize {
        self.gt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }
}

/// The rigid transform aligning the estimate's translations onto the
/// ground truth's in the least-squares sense (no scale).
pub fn align_trajectories(pair: &TrajectoryPair) -> Result<RigidPose, EvalError> {
    let est: Vec<Point3> = pair.est.iter().map(|p| Point3::from(p.translation())).collect();
    let gt: Vec<Point3> = pair.gt.iter().map(|p| Point3::from(p.translation())).collect();
    Ok(rigid_align_points(&est, &gt)?)
}

/// Absolute trajectory error: RMS translational residual after alignment,
/// millimeters.
pub fn ate(pair: &TrajectoryPair) -> Result<f64, EvalError> {
    let alignment = align_trajectories(pair)?;
    let sum_sq: f64 = pair
        .gt
        .iter()
        .zip(&pair.est)
        .map(|(q, p)| {
            let residual = q
                .inverse()
                .compose(&alignment)
                .compose(p)
                .translation();
            residual.norm_squared()
        })
        .sum();
    Ok((sum_sq / pair.len() as f64).sqrt())
}

fn relative_motions(pair: &TrajectoryPair) -> Vec<RigidPose> {
    (0..pair.len() - 1)
        .map(|i| {
            let gt_step = pair.gt[i].inverse().compose(&pair.gt[i + 1]);
            let est_step = pair.est[i].inverse().compose(&pair.est[i + 1]);
            gt_step.inverse().compose(&est_step)
        })
        .collect()
}

/// Relative translation error: RMS translation of per-step motion
/// discrepancies, millimeters.
pub fn rte(pair: &TrajectoryPair) -> Result<f64, EvalError> {
    let errors = relative_motions(pair);
    let sum_sq: f64 = errors.iter().map(|e| e.translation().norm_squared()).sum();
    Ok((sum_sq / errors.len() as f64).sqrt())
}

/// Relative rotation error: mean rotation angle of per-step motion
/// discrepancies, degrees.
pub fn rre(pair: &TrajectoryPair) -> Result<f64, EvalError> {
    let errors = relative_motions(pair);
    let sum: f64 = errors.iter().map(|e| e.rotation_angle().to_degrees()).sum();
    Ok(sum / errors.len() as f64)
}

/// Closed-form rigid transform from hand-picked correspondences; requires
/// at least three non-collinear source points.
pub fn register_landmarks(pairs: &[(Point3, Point3)]) -> Result<RigidPose, EvalError> {
    if pairs.len() < 3 {
        return Err(EvalError::DegenerateLandmarks);
    }
    let src: Vec<Point3> = pairs.iter().map(|(s, _)| *s).collect();
    let dst: Vec<Point3> = pairs.iter().map(|(_, d)| *d).collect();
    if points_are_collinear(&src) || points_are_collinear(&dst) {
        return Err(EvalError::DegenerateLandmarks);
    }
    Ok(rigid_align_points(&src, &dst)?)
}

#[derive(Debug, Clone, Copy)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the relative RMSE change.
    pub rel_tolerance: f64,
    /// Pairing distance cutoff, mm; defaults to 10x the destination
    /// cloud's median point spacing.
    pub distance_cutoff: Option<f64>,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            rel_tolerance: 1e-6,
            distance_cutoff: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RegistrationResult {
    pub transform: RigidPose,
    pub rmse: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Median nearest-neighbor spacing, sampled over at most 1000 points.
pub fn median_spacing(points: &[Point3], tree: &KdTree) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    let stride = (points.len() / 1000).max(1);
    let mut spacings: Vec<f64> = points
        .iter()
        .step_by(stride)
        .map(|p| tree.nearest2(p)[1].1)
        .filter(|d| d.is_finite())
        .collect();
    if spacings.is_empty() {
        return 1.0;
    }
    let mid = spacings.len() / 2;
    spacings.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    spacings[mid]
}

/// Point-to-point ICP from an initial guess. Pairs within the distance
/// cutoff drive a closed-form rigid update per iteration; iterations stop
/// when the RMSE change falls below `rel_tolerance`, it would increase, or
/// the budget runs out. No pairs within the cutoff yields a non-converged
/// result.
pub fn icp_refine(
    src: &[Point3],
    dst: &[Point3],
    init: &RigidPose,
    config: &IcpConfig,
) -> Result<RegistrationResult, EvalError> {
    if src.is_empty() || dst.is_empty() {
        return Err(EvalError::EmptyCloud);
    }
    let tree = KdTree::build(dst);
    let cutoff = config
        .distance_cutoff
        .unwrap_or_else(|| 10.0 * median_spacing(dst, &tree));

    let mut transform = *init;
    let mut matched = match_within(src, &tree, dst, &transform, cutoff);
    if matched.len() < 3 {
        return Ok(RegistrationResult {
            transform,
            rmse: f64::INFINITY,
            iterations: 0,
            converged: false,
        });
    }
    let mut rmse = pair_rmse(&matched, &transform);
    let mut iterations = 0;
    let mut converged = false;

    for iter in 1..=config.max_iterations {
        iterations = iter;
        let src_pts: Vec<Point3> = matched.iter().map(|(s, _)| *s).collect();
        let dst_pts: Vec<Point3> = matched.iter().map(|(_, d)| *d).collect();
        let Ok(next) = rigid_align_points(&src_pts, &dst_pts) else {
            break;
        };
        let matched_next = match_within(src, &tree, dst, &next, cutoff);
        if matched_next.len() < 3 {
            break;
        }
        let rmse_next = pair_rmse(&matched_next, &next);
        if rmse_next > rmse {
            // Re-pairing regressed; keep the accepted state. An RMSE both
            // at numerical zero counts as converged rather than stalled.
            converged = rmse < 1e-12;
            break;
        }
        let improvement = rmse - rmse_next;
        transform = next;
        matched = matched_next;
        rmse = rmse_next;
        if improvement <= config.rel_tolerance * rmse.max(1e-12) {
            converged = true;
            break;
        }
    }

    Ok(RegistrationResult {
        transform,
        rmse,
        iterations,
        converged,
    })
}

fn match_within(
    src: &[Point3],
    tree: &KdTree,
    dst: &[Point3],
    transform: &RigidPose,
    cutoff: f64,
) -> Vec<(Point3, Point3)> {
    parallel::map_chunks(src, parallel::REDUCE_CHUNK, |_, chunk| {
        chunk
            .iter()
            .filter_map(|s| {
                let warped = transform.transform_point(s);
                let (idx, dist) = tree.nearest(&warped)?;
                (dist <= cutoff).then(|| (*s, dst[idx]))
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

fn pair_rmse(pairs: &[(Point3, Point3)], transform: &RigidPose) -> f64 {
    let sum_sq: f64 = pairs
        .iter()
        .map(|(s, d)| (transform.transform_point(s) - d).norm_squared())
        .sum();
    (sum_sq / pairs.len() as f64).sqrt()
}

/// RMS nearest-neighbor distance from the transformed source cloud to the
/// destination cloud, millimeters.
pub fn cloud_rmse(src: &[Point3], dst: &[Point3], transform: &RigidPose) -> Result<f64, EvalError> {
    if src.is_empty() || dst.is_empty() {
        return Err(EvalError::EmptyCloud);
    }
    let tree = KdTree::build(dst);
    let sums = parallel::map_chunks(src, parallel::REDUCE_CHUNK, |_, chunk| {
        chunk
            .iter()
            .map(|s| {
                let warped = transform.transform_point(s);
                let (_, dist) = tree.nearest(&warped).expect("non-empty tree");
                dist * dist
            })
            .sum::<f64>()
    });
    let total: f64 = sums.into_iter().sum();
    Ok((total / src.len() as f64).sqrt())
}
