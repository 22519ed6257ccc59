//! Camera pose from 3D-2D correspondences: a minimal three-point solver
//! inside a seeded RANSAC loop, followed by Gauss-Newton refinement of the
//! reprojection error over the inlier set.
//!
//! The minimal solver recovers the three point distances along the viewing
//! rays (Grunert's quartic in the distance ratio), converts them to
//! camera-frame points, and closes with an exact rigid alignment. Each
//! RANSAC sample carries a fourth point to pick among the up-to-four
//! solutions.

use nalgebra::{Matrix4, Matrix6, Vector2, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{
    points_are_collinear, rigid_align_points, Intrinsics, Pixel, Point3, RigidPose, Vec3,
};

#[derive(Debug, Error)]
pub enum PnpError {
    #[error("need at least 4 matches, found {found}")]
    TooFewMatches { found: usize },
    #[error("no valid pose: best hypothesis had {best_inliers} inliers (need {required})")]
    NoValidPose {
        best_inliers: usize,
        required: usize,
    },
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier reprojection threshold, pixels.
    pub inlier_px: f64,
    /// Minimum inliers for a pose to count as valid.
    pub min_inliers: usize,
    pub seed: u64,
    /// Early-exit confidence for the adaptive iteration bound.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            inlier_px: 3.0,
            min_inliers: 12,
            seed: 0,
            confidence: 0.999,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PnpResult {
    /// World-to-camera transform.
    pub pose: RigidPose,
    pub inliers: Vec<usize>,
    /// Reprojection RMSE over the inliers, pixels.
    pub rmse_px: f64,
}

/// Minimal pose solver: world points and unit bearing vectors of three
/// correspondences yield up to four world-to-camera candidates.
pub fn solve_p3p(world: &[Point3; 3], bearings: &[Vec3; 3]) -> Vec<RigidPose> {
    if points_are_collinear(world) {
        return Vec::new();
    }
    let a2 = (world[1] - world[2]).norm_squared();
    let b2 = (world[0] - world[2]).norm_squared();
    let c2 = (world[0] - world[1]).norm_squared();
    if b2 < 1e-12 {
        return Vec::new();
    }
    let ca = bearings[1].dot(&bearings[2]);
    let cb = bearings[0].dot(&bearings[2]);
    let cg = bearings[0].dot(&bearings[1]);
    // side ratios normalized by b^2
    let aa = a2 / b2;
    let cc = c2 / b2;

    let a4 = aa * aa - 2.0 * aa * cc - 2.0 * aa + cc * cc - 4.0 * cc * ca * ca + 2.0 * cc + 1.0;
    let a3 = -4.0
        * (aa * aa * cb - 2.0 * aa * cc * cb - aa * ca * cg - aa * cb + cc * cc * cb
            - 2.0 * cc * ca * ca * cb
            - cc * ca * cg
            + cc * cb
            + ca * cg);
    let a2c = 2.0
        * (2.0 * aa * aa * cb * cb + aa * aa - 4.0 * aa * cc * cb * cb - 2.0 * aa * cc
            - 4.0 * aa * ca * cb * cg
            - 2.0 * aa * cg * cg
            + 2.0 * cc * cc * cb * cb
            + cc * cc
            - 2.0 * cc * ca * ca
            - 4.0 * cc * ca * cb * cg
            + 2.0 * ca * ca
            + 2.0 * cg * cg
            - 1.0);
    let a1 = -4.0
        * (aa * aa * cb - 2.0 * aa * cc * cb - aa * ca * cg - 2.0 * aa * cb * cg * cg + aa * cb
            + cc * cc * cb
            - cc * ca * cg
            - cc * cb
            + ca * cg);
    let a0 = aa * aa - 2.0 * aa * cc - 4.0 * aa * cg * cg + 2.0 * aa + cc * cc - 2.0 * cc + 1.0;

    let b = b2.sqrt();
    let mut poses = Vec::new();
    for v in real_quartic_roots(a4, a3, a2c, a1, a0) {
        if v.is_nan() || v <= 0.0 {
            continue;
        }
        let denom = 2.0 * (ca * v - cg);
        if denom.abs() < 1e-12 {
            continue;
        }
        let u = (2.0 * aa * cb * v - aa * v * v - aa - 2.0 * cc * cb * v + cc * v * v + cc
            + v * v
            - 1.0)
            / denom;
        if u.is_nan() || u <= 0.0 {
            continue;
        }
        let s1_sq = 1.0 + v * v - 2.0 * v * cb;
        if s1_sq <= 1e-12 {
            continue;
        }
        let s1 = b / s1_sq.sqrt();
        let camera = [
            Point3::from(bearings[0] * s1),
            Point3::from(bearings[1] * (u * s1)),
            Point3::from(bearings[2] * (v * s1)),
        ];
        if let Ok(pose) = rigid_align_points(world, &camera) {
            poses.push(pose);
        }
    }
    poses
}

/// Real roots of a quartic via the companion-matrix eigenvalues.
fn real_quartic_roots(a4: f64, a3: f64, a2: f64, a1: f64, a0: f64) -> Vec<f64> {
    let scale = a4.abs().max(a3.abs()).max(a2.abs()).max(a1.abs()).max(a0.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    if a4.abs() < 1e-12 * scale {
        // Degenerate leading coefficient: fall back to the cubic/quadratic.
        return real_cubic_roots(a3, a2, a1, a0);
    }
    let companion = Matrix4::new(
        -a3 / a4, -a2 / a4, -a1 / a4, -a0 / a4,
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    );
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|c| c.im.abs() < 1e-8 * (1.0 + c.re.abs()))
        .map(|c| c.re)
        .collect()
}

fn real_cubic_roots(a3: f64, a2: f64, a1: f64, a0: f64) -> Vec<f64> {
    let scale = a3.abs().max(a2.abs()).max(a1.abs()).max(a0.abs());
    if scale == 0.0 || a3.abs() < 1e-12 * scale {
        // quadratic or lower
        if a2.abs() < 1e-12 * scale {
            if a1.abs() < 1e-12 * scale {
                return Vec::new();
            }
            return vec![-a0 / a1];
        }
        let disc = a1 * a1 - 4.0 * a2 * a0;
        if disc < 0.0 {
            return Vec::new();
        }
        let sq = disc.sqrt();
        return vec![(-a1 + sq) / (2.0 * a2), (-a1 - sq) / (2.0 * a2)];
    }
    let companion = nalgebra::Matrix3::new(
        -a2 / a3, -a1 / a3, -a0 / a3,
        1.0, 0.0, 0.0,
        0.0, 1.0, 0.0,
    );
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|c| c.im.abs() < 1e-8 * (1.0 + c.re.abs()))
        .map(|c| c.re)
        .collect()
}

fn bearing(pixel: &Pixel, k: &Intrinsics) -> Vec3 {
    Vec3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0).normalize()
}

fn reprojection_error(pose: &RigidPose, point: &Point3, pixel: &Pixel, k: &Intrinsics) -> f64 {
    let p = pose.transform_point(point);
    if p.z <= 0.0 {
        return f64::INFINITY;
    }
    match k.project(&p) {
        Ok(projected) => projected.distance(pixel),
        Err(_) => f64::INFINITY,
    }
}

/// RANSAC over minimal three-point hypotheses (a fourth sampled point
/// disambiguates), followed by reprojection refinement on the inliers.
/// Deterministic for a fixed `config.seed`.
pub fn solve_pnp_ransac(
    matches: &[(Point3, Pixel)],
    k: &Intrinsics,
    config: &RansacConfig,
) -> Result<PnpResult, PnpError> {
    if matches.len() < 4 {
        return Err(PnpError::TooFewMatches {
            found: matches.len(),
        });
    }
    let bearings: Vec<Vec3> = matches.iter().map(|(_, pix)| bearing(pix, k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = matches.len();

    let mut best_inliers: Vec<usize> = Vec::new();
    let mut best_pose = RigidPose::identity();
    let mut allowed = config.iterations;
    let mut iter = 0;
    while iter < allowed {
        iter += 1;
        let sample = sample_distinct(&mut rng, n, 4);
        let world = [matches[sample[0]].0, matches[sample[1]].0, matches[sample[2]].0];
        let rays = [bearings[sample[0]], bearings[sample[1]], bearings[sample[2]]];
        let candidates = solve_p3p(&world, &rays);
        if candidates.is_empty() {
            continue;
        }
        // The fourth point picks the physically consistent candidate.
        let (probe_point, probe_pixel) = &matches[sample[3]];
        let Some(pose) = candidates.into_iter().min_by(|a, b| {
            let ea = reprojection_error(a, probe_point, probe_pixel, k);
            let eb = reprojection_error(b, probe_point, probe_pixel, k);
            ea.partial_cmp(&eb).unwrap_or(std::cmp::Ordering::Equal)
        }) else {
            continue;
        };
        let inliers: Vec<usize> = matches
            .iter()
            .enumerate()
            .filter(|(i, (point, pixel))| {
                let _ = i;
                reprojection_error(&pose, point, pixel, k) < config.inlier_px
            })
            .map(|(i, _)| i)
            .collect();
        if inliers.len() > best_inliers.len() {
            best_inliers = inliers;
            best_pose = pose;
            // Adaptive bound from the observed inlier ratio.
            let w = best_inliers.len() as f64 / n as f64;
            let p_fail = 1.0 - config.confidence;
            let p_good = w.powi(4);
            if p_good > 1e-9 && p_good < 1.0 {
                let needed = (p_fail.ln() / (1.0 - p_good).ln()).ceil() as usize;
                allowed = allowed.min(needed.max(iter));
            }
        }
    }

    if best_inliers.len() < config.min_inliers.max(4) {
        return Err(PnpError::NoValidPose {
            best_inliers: best_inliers.len(),
            required: config.min_inliers.max(4),
        });
    }

    // Refine, then re-harvest inliers once with the polished pose.
    let refined = refine_reprojection(matches, &best_inliers, k, &best_pose);
    let inliers: Vec<usize> = matches
        .iter()
        .enumerate()
        .filter(|(_, (point, pixel))| reprojection_error(&refined, point, pixel, k) < config.inlier_px)
        .map(|(i, _)| i)
        .collect();
    let (mut final_pose, mut final_inliers) = if inliers.len() >= best_inliers.len() {
        (refine_reprojection(matches, &inliers, k, &refined), inliers)
    } else {
        (refined, best_inliers)
    };

    // Polish on the tightest residual core: when a subset of matches is an
    // order of magnitude more consistent than the rest (an exact revisit
    // against mixed-quality correspondences), the final pose should follow
    // that core rather than average over everything.
    let mut residuals: Vec<f64> = final_inliers
        .iter()
        .map(|&i| {
            let (point, pixel) = &matches[i];
            reprojection_error(&final_pose, point, pixel, k)
        })
        .collect();
    if !residuals.is_empty() {
        let mid = residuals.len() / 2;
        residuals.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
        let tight = (3.0 * residuals[mid]).max(1e-2);
        if tight < config.inlier_px {
            let core: Vec<usize> = final_inliers
                .iter()
                .copied()
                .filter(|&i| {
                    let (point, pixel) = &matches[i];
                    reprojection_error(&final_pose, point, pixel, k) <= tight
                })
                .collect();
            if core.len() >= config.min_inliers.max(4) {
                final_pose = refine_reprojection(matches, &core, k, &final_pose);
                final_inliers = matches
                    .iter()
                    .enumerate()
                    .filter(|(_, (point, pixel))| {
                        reprojection_error(&final_pose, point, pixel, k) < config.inlier_px
                    })
                    .map(|(i, _)| i)
                    .collect();
            }
        }
    }

    if final_inliers.len() < config.min_inliers.max(4) {
        return Err(PnpError::NoValidPose {
            best_inliers: final_inliers.len(),
            required: config.min_inliers.max(4),
        });
    }
    let rmse_px = inlier_rmse(matches, &final_inliers, k, &final_pose);
    Ok(PnpResult {
        pose: final_pose,
        inliers: final_inliers,
        rmse_px,
    })
}

fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    let mut picked = Vec::with_capacity(count);
    while picked.len() < count {
        let candidate = rng.random_range(0..n);
        if !picked.contains(&candidate) {
            picked.push(candidate);
        }
    }
    picked
}

fn inlier_rmse(
    matches: &[(Point3, Pixel)],
    inliers: &[usize],
    k: &Intrinsics,
    pose: &RigidPose,
) -> f64 {
    if inliers.is_empty() {
        return f64::INFINITY;
    }
    let sum: f64 = inliers
        .iter()
        .map(|&i| {
            let (point, pixel) = &matches[i];
            let e = reprojection_error(pose, point, pixel, k);
            e * e
        })
        .sum();
    (sum / inliers.len() as f64).sqrt()
}

/// Gauss-Newton on the pixel reprojection residuals of the inlier set,
/// parameterized by a left-multiplied twist on the world-to-camera pose.
fn refine_reprojection(
    matches: &[(Point3, Pixel)],
    inliers: &[usize],
    k: &Intrinsics,
    init: &RigidPose,
) -> RigidPose {
    let mut pose = *init;
    let mut prev_cost = f64::INFINITY;
    for _ in 0..20 {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        let mut cost = 0.0;
        for &i in inliers {
            let (point, pixel) = &matches[i];
            let p = pose.transform_point(point);
            if p.z <= 0.0 {
                continue;
            }
            let Ok(projected) = k.project(&p) else { continue };
            let r = Vector2::new(projected.x - pixel.x, projected.y - pixel.y);
            cost += r.norm_squared();
            let z_inv = 1.0 / p.z;
            // d(pixel)/d(p) rows
            let du = Vec3::new(k.fx * z_inv, 0.0, -k.fx * p.x * z_inv * z_inv);
            let dv = Vec3::new(0.0, k.fy * z_inv, -k.fy * p.y * z_inv * z_inv);
            let j_u = jac_row(&p.coords, &du);
            let j_v = jac_row(&p.coords, &dv);
            h += j_u * j_u.transpose() + j_v * j_v.transpose();
            g += j_u * r.x + j_v * r.y;
        }
        if cost >= prev_cost * (1.0 - 1e-12) && prev_cost.is_finite() {
            break;
        }
        prev_cost = cost;
        let Some(step) = h.cholesky().map(|c| c.solve(&(-g))) else {
            break;
        };
        pose = RigidPose::exp(&step).compose(&pose);
        if step.norm() < 1e-12 {
            break;
        }
    }
    pose
}

/// Row of the reprojection Jacobian for one pixel coordinate whose
/// gradient against the camera-frame point is `grad`:
/// `dr/domega = p x grad`, `dr/dv = grad`.
fn jac_row(p: &Vec3, grad: &Vec3) -> Vector6<f64> {
    let rot = p.cross(grad);
    Vector6::new(rot.x, rot.y, rot.z, grad.x, grad.y, grad.z)
}
