//! Frame-to-frame pose estimation.
//!
//! The relative pose between consecutive frames minimizes a joint
//! objective: a point-to-plane term over projectively associated surfel
//! pairs plus a weighted photometric term over the current frame's surfel
//! pixels warped into the previous image. Minimization is Gauss-Newton on
//! the 6-dof increment with a step-halving line search, re-association
//! every iteration, and a coarse-to-fine image pyramid. Residual and
//! Jacobian accumulation is chunked so the parallel and sequential builds
//! produce identical sums.

use nalgebra::{Matrix6, Vector6};
use thiserror::Error;

use crate::fusion::{render_model, zbuffer, ModelRender, SurfelMap, NO_SURFEL};
use crate::geometry::{Intrinsics, Pixel, Point3, RigidPose, Vec3};
use crate::io::GrayImage;
use crate::parallel;

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("not enough correspondences for a 6-dof solve (found {found})")]
    InsufficientCorrespondences { found: usize },
    #[error("normal equations are rank-deficient; the geometry does not constrain all 6 dof")]
    DegenerateNormalEquations,
    #[error("invalid tracking config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TrackingConfig {
    /// Photometric term weight in [0, 10].
    pub w_photo: f64,
    /// Gauss-Newton iterations per pyramid level.
    pub max_iterations: usize,
    /// Convergence threshold on the accepted update norm.
    pub convergence_tol: f64,
    pub pyramid_levels: u32,
    /// Association gate: point distance, mm.
    pub gate_distance: f64,
    /// Association gate: normal angle, radians.
    pub gate_angle: f64,
    /// Huber scale as a multiple of the residual MAD.
    pub huber_scale: f64,
    /// Cap on correspondences per level (uniform surfel stride above it).
    pub max_correspondences: usize,
    /// Cap on rendered model points (uniform stride above it).
    pub max_model_points: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            w_photo: 1.0,
            max_iterations: 10,
            convergence_tol: 1e-6,
            pyramid_levels: 3,
            gate_distance: 10.0,
            gate_angle: 30f64.to_radians(),
            huber_scale: 3.0,
            max_correspondences: 10_000,
            max_model_points: 120_000,
        }
    }
}

impl TrackingConfig {
    fn validate(&self) -> Result<(), TrackingError> {
        if !(0.0..=10.0).contains(&self.w_photo) {
            return Err(TrackingError::InvalidConfig(format!(
                "w_photo must lie in [0, 10], got {}",
                self.w_photo
            )));
        }
        if self.pyramid_levels == 0 {
            return Err(TrackingError::InvalidConfig("pyramid_levels must be >= 1".into()));
        }
        Ok(())
    }
}

/// One gated surfel pair: the new surfel (current camera frame) and its
/// model counterpart (previous camera frame).
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub point_cur: Point3,
    pub pixel_cur: Pixel,
    pub point_prev: Point3,
    pub normal_prev: Vec3,
}

#[derive(Debug, Clone, Default)]
pub struct CorrespondenceSet {
    pub items: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Projective association at a given warp: each current surfel is warped
/// into the previous camera, looked up in the rendered model, and gated on
/// point distance and normal angle. `render_stride` maps rendered indices
/// back to positions in the (strided) model arrays.
#[allow(clippy::too_many_arguments)]
fn associate_at_warp(
    render: &ModelRender,
    render_stride: usize,
    model_positions: &[Point3],
    model_normals: &[Vec3],
    current: &SurfelMap,
    stride: usize,
    warp: &RigidPose,
    k: &Intrinsics,
    config: &TrackingConfig,
) -> CorrespondenceSet {
    let cos_gate = config.gate_angle.cos();
    let indexed: Vec<&crate::fusion::Surfel> =
        current.surfels().iter().step_by(stride.max(1)).collect();
    let found = parallel::map_chunks(&indexed, parallel::REDUCE_CHUNK, |_, chunk| {
        let mut out = Vec::new();
        for s in chunk {
            let warped = warp.transform_point(&s.position);
            if warped.z <= 0.0 {
                continue;
            }
            let Ok(pix) = k.project(&warped) else { continue };
            let (ux, uy) = (pix.x.round() as i64, pix.y.round() as i64);
            if ux < 0 || uy < 0 || ux >= k.width as i64 || uy >= k.height as i64 {
                continue;
            }
            let idx = render.indices[(uy as u32 * k.width + ux as u32) as usize];
            if idx == NO_SURFEL {
                continue;
            }
            let midx = idx as usize * render_stride;
            let m_position = model_positions[midx];
            if (warped - m_position).norm() > config.gate_distance {
                continue;
            }
            let warped_normal = warp.rotate_vector(&s.normal);
            let m_normal = model_normals[midx];
            if warped_normal.dot(&m_normal) < cos_gate {
                continue;
            }
            let Ok(pixel_cur) = k.project(&s.position) else {
                continue;
            };
            out.push(Correspondence {
                point_cur: s.position,
                pixel_cur,
                point_prev: m_position,
                normal_prev: m_normal,
            });
        }
        out
    });
    CorrespondenceSet {
        items: found.into_iter().flatten().collect(),
    }
}

/// Association at the identity warp, the small-motion initialization.
pub fn build_correspondences(
    model_prev: &SurfelMap,
    current: &SurfelMap,
    k: &Intrinsics,
    config: &TrackingConfig,
) -> CorrespondenceSet {
    let render = render_model(model_prev, &RigidPose::identity(), k);
    let (positions, normals) = model_arrays(model_prev, &RigidPose::identity(), 1);
    associate_at_warp(
        &render,
        1,
        &positions,
        &normals,
        current,
        1,
        &RigidPose::identity(),
        k,
        config,
    )
}

/// Model positions and normals mapped into another frame, as compact
/// parallel arrays.
fn model_arrays(
    model: &SurfelMap,
    pose: &RigidPose,
    stride: usize,
) -> (Vec<Point3>, Vec<Vec3>) {
    let picked: Vec<&crate::fusion::Surfel> =
        model.surfels().iter().step_by(stride.max(1)).collect();
    parallel::map_chunks(&picked, parallel::REDUCE_CHUNK, |_, chunk| {
        chunk
            .iter()
            .map(|s| (pose.transform_point(&s.position), pose.rotate_vector(&s.normal)))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .unzip()
}

/// Point-to-plane objective: `sum ((delta^-1 * v_t - v') . n')^2`.
pub fn geometric_error(set: &CorrespondenceSet, delta: &RigidPose) -> f64 {
    let warp = delta.inverse();
    set.items
        .iter()
        .map(|c| {
            let r = (warp.transform_point(&c.point_cur) - c.point_prev).dot(&c.normal_prev);
            r * r
        })
        .sum()
}

/// Photometric objective: squared intensity difference between each surfel
/// pixel in the current image and its warp into the previous image, with
/// bilinear interpolation; out-of-bounds warps contribute nothing.
pub fn photometric_error(
    current_image: &GrayImage,
    prev_image: &GrayImage,
    current: &SurfelMap,
    k: &Intrinsics,
    delta: &RigidPose,
) -> f64 {
    let warp = delta.inverse();
    current
        .surfels()
        .iter()
        .filter_map(|s| {
            let pix = k.project(&s.position).ok()?;
            let intensity = current_image.sample_bilinear(pix.x, pix.y)?;
            let warped = warp.transform_point(&s.position);
            if warped.z <= 0.0 {
                return None;
            }
            let target = k.project(&warped).ok()?;
            let reference = prev_image.sample_bilinear(target.x, target.y)?;
            let r = intensity - reference;
            Some(r * r)
        })
        .sum()
}

/// Gradient of [`geometric_error`] with respect to a left-multiplied twist
/// on the warp `delta^-1` (rotation components first).
pub fn geometric_error_gradient(set: &CorrespondenceSet, delta: &RigidPose) -> Vector6<f64> {
    let warp = delta.inverse();
    let mut g = Vector6::zeros();
    for c in &set.items {
        let p = warp.transform_point(&c.point_cur);
        let r = (p - c.point_prev).dot(&c.normal_prev);
        let j = point_to_plane_jacobian(&p, &c.normal_prev);
        g += j * (2.0 * r);
    }
    g
}

/// Gradient of [`photometric_error`] under the same parameterization.
pub fn photometric_error_gradient(
    current_image: &GrayImage,
    prev_image: &GrayImage,
    current: &SurfelMap,
    k: &Intrinsics,
    delta: &RigidPose,
) -> Vector6<f64> {
    let warp = delta.inverse();
    let mut g = Vector6::zeros();
    for s in current.surfels() {
        let Ok(pix) = k.project(&s.position) else { continue };
        let Some(intensity) = current_image.sample_bilinear(pix.x, pix.y) else {
            continue;
        };
        let p = warp.transform_point(&s.position);
        if p.z <= 0.0 {
            continue;
        }
        let Ok(target) = k.project(&p) else { continue };
        let Some((reference, dx, dy)) = prev_image.sample_bilinear_with_grad(target.x, target.y)
        else {
            continue;
        };
        let r = intensity - reference;
        let j = photometric_jacobian(&p, dx, dy, k);
        g += j * (2.0 * r);
    }
    g
}

/// d/dxi of `(exp(xi) p) . n` at xi = 0: `[p x n, n]`.
fn point_to_plane_jacobian(p: &Point3, n: &Vec3) -> Vector6<f64> {
    let rot = p.coords.cross(n);
    Vector6::new(rot.x, rot.y, rot.z, n.x, n.y, n.z)
}

/// d/dxi of `-L_prev(pi(exp(xi) p))` at xi = 0, given the image gradient
/// at the warped pixel.
fn photometric_jacobian(p: &Point3, dx: f64, dy: f64, k: &Intrinsics) -> Vector6<f64> {
    let z_inv = 1.0 / p.z;
    // gradient of the projection composed with the image
    let gx = dx * k.fx * z_inv;
    let gy = dy * k.fy * z_inv;
    let gz = -(dx * k.fx * p.x + dy * k.fy * p.y) * z_inv * z_inv;
    let grad_p = Vec3::new(gx, gy, gz);
    // residual = L_t - L_prev(pi(p)); dp/domega = -[p]x, dp/dv = I
    let rot = -p.coords.cross(&grad_p);
    let trans = -grad_p;
    Vector6::new(rot.x, rot.y, rot.z, trans.x, trans.y, trans.z)
}

/// Chains the increment into the global pose: `T_t = delta * T_{t-1}`.
pub fn update_global_pose(prev: &RigidPose, delta: &RigidPose) -> RigidPose {
    delta.compose(prev)
}

/// Per-level `(before, after)` objective values of each accepted
/// Gauss-Newton step, for monotonicity checks.
#[derive(Debug, Clone, Default)]
pub struct TrackingDiagnostics {
    pub level_steps: Vec<Vec<(f64, f64)>>,
    pub correspondences: usize,
}

enum ResidualKind {
    Geometric { point_prev: Point3, normal_prev: Vec3 },
    Photometric { intensity: f64 },
}

struct Residual {
    jacobian: Vector6<f64>,
    value: f64,
    weight: f64,
    point_cur: Point3,
    kind: ResidualKind,
}

impl Residual {
    fn is_photometric(&self) -> bool {
        matches!(self.kind, ResidualKind::Photometric { .. })
    }
}

/// Estimates the relative pose `delta` from the previous frame to the
/// current one, starting at `init`. The model is given in the previous
/// camera frame.
pub fn estimate_relative_pose(
    model_prev: &SurfelMap,
    prev_image: &GrayImage,
    current: &SurfelMap,
    current_image: &GrayImage,
    k: &Intrinsics,
    init: &RigidPose,
    config: &TrackingConfig,
) -> Result<RigidPose, TrackingError> {
    estimate_relative_pose_with_diagnostics(
        model_prev,
        &RigidPose::identity(),
        prev_image,
        current,
        current_image,
        k,
        init,
        config,
    )
    .map(|(delta, _)| delta)
}

/// Variant for callers whose model lives in another frame: `model_pose`
/// maps model coordinates into the previous camera.
#[allow(clippy::too_many_arguments)]
pub fn estimate_relative_pose_from(
    model: &SurfelMap,
    model_pose: &RigidPose,
    prev_image: &GrayImage,
    current: &SurfelMap,
    current_image: &GrayImage,
    k: &Intrinsics,
    init: &RigidPose,
    config: &TrackingConfig,
) -> Result<RigidPose, TrackingError> {
    estimate_relative_pose_with_diagnostics(
        model,
        model_pose,
        prev_image,
        current,
        current_image,
        k,
        init,
        config,
    )
    .map(|(delta, _)| delta)
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_relative_pose_with_diagnostics(
    model: &SurfelMap,
    model_pose: &RigidPose,
    prev_image: &GrayImage,
    current: &SurfelMap,
    current_image: &GrayImage,
    k: &Intrinsics,
    init: &RigidPose,
    config: &TrackingConfig,
) -> Result<(RigidPose, TrackingDiagnostics), TrackingError> {
    config.validate()?;
    let mut warp = init.inverse();
    let mut diagnostics = TrackingDiagnostics::default();

    // Image pyramids, finest first.
    let mut prev_pyr = vec![prev_image.clone()];
    let mut cur_pyr = vec![current_image.clone()];
    for _ in 1..config.pyramid_levels {
        prev_pyr.push(prev_pyr.last().unwrap().downsample_half());
        cur_pyr.push(cur_pyr.last().unwrap().downsample_half());
    }

    // Model geometry is fixed for the whole solve; only the camera
    // pyramid level changes the rendering. Oversized models are thinned by
    // a uniform stride before anything else touches them.
    let model_stride = (model.len() / config.max_model_points.max(1)).max(1);
    let (model_positions, model_normals) = model_arrays(model, model_pose, model_stride);

    for level in (0..config.pyramid_levels).rev() {
        let k_level = k.pyramid_level(level);
        let prev_img = &prev_pyr[level as usize];
        let cur_img = &cur_pyr[level as usize];

        // Coarse levels render a strided model; their rasters are small
        // enough that a sparser model still covers them.
        let render_stride = 4usize.pow(level);
        let render = if render_stride == 1 {
            zbuffer(&model_positions, &k_level)
        } else {
            let strided: Vec<Point3> = model_positions
                .iter()
                .step_by(render_stride)
                .copied()
                .collect();
            zbuffer(&strided, &k_level)
        };

        let mut stride = 4usize.pow(level);
        let visible = current.len() / stride.max(1);
        if visible > config.max_correspondences {
            stride *= visible.div_ceil(config.max_correspondences);
        }

        let mut steps = Vec::new();
        for _ in 0..config.max_iterations {
            let set = associate_at_warp(
                &render,
                render_stride,
                &model_positions,
                &model_normals,
                current,
                stride,
                &warp,
                &k_level,
                config,
            );
            if level == 0 {
                diagnostics.correspondences = set.len();
            }
            if set.len() < 6 {
                if level == 0 {
                    return Err(TrackingError::InsufficientCorrespondences { found: set.len() });
                }
                break;
            }
            let residuals = build_residuals(&set, cur_img, prev_img, &warp, &k_level, config);
            let (h, g, cost) = accumulate_normal_equations(&residuals, config.w_photo);
            let step = solve_preconditioned(&h, &g).ok_or(TrackingError::DegenerateNormalEquations);
            let step = match step {
                Ok(s) => s,
                Err(e) => {
                    if level == 0 {
                        return Err(e);
                    }
                    break;
                }
            };

            // Step-halving line search on the fixed residual set.
            let mut alpha = 1.0f64;
            let mut accepted = None;
            for _ in 0..8 {
                let candidate = RigidPose::exp(&(step * alpha)).compose(&warp);
                let c = cost_at(&residuals, &candidate, prev_img, &k_level, config.w_photo);
                if c < cost {
                    accepted = Some((candidate, c, alpha));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((next, c, alpha)) = accepted else { break };
            warp = next;
            steps.push((cost, c));
            if (step * alpha).norm() < config.convergence_tol {
                break;
            }
        }
        diagnostics.level_steps.push(steps);
    }

    Ok((warp.inverse(), diagnostics))
}

fn build_residuals(
    set: &CorrespondenceSet,
    cur_img: &GrayImage,
    prev_img: &GrayImage,
    warp: &RigidPose,
    k: &Intrinsics,
    config: &TrackingConfig,
) -> Vec<Residual> {
    let chunks = parallel::map_chunks(&set.items, parallel::REDUCE_CHUNK, |_, chunk| {
        let mut out = Vec::with_capacity(chunk.len() * 2);
        for c in chunk {
            let p = warp.transform_point(&c.point_cur);
            let r_geo = (p - c.point_prev).dot(&c.normal_prev);
            out.push(Residual {
                jacobian: point_to_plane_jacobian(&p, &c.normal_prev),
                value: r_geo,
                weight: 1.0,
                point_cur: c.point_cur,
                kind: ResidualKind::Geometric {
                    point_prev: c.point_prev,
                    normal_prev: c.normal_prev,
                },
            });
            if config.w_photo > 0.0 {
                if let Some(intensity) = cur_img.sample_bilinear(c.pixel_cur.x, c.pixel_cur.y) {
                    if p.z > 0.0 {
                        if let Ok(target) = k.project(&p) {
                            if let Some((reference, dx, dy)) =
                                prev_img.sample_bilinear_with_grad(target.x, target.y)
                            {
                                out.push(Residual {
                                    jacobian: photometric_jacobian(&p, dx, dy, k),
                                    value: intensity - reference,
                                    weight: 1.0,
                                    point_cur: c.point_cur,
                                    kind: ResidualKind::Photometric { intensity },
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    });
    let mut residuals: Vec<Residual> = chunks.into_iter().flatten().collect();
    apply_huber_weights(&mut residuals, config.huber_scale);
    residuals
}

/// Huber IRLS weights with the scale set per residual type from the median
/// absolute deviation.
fn apply_huber_weights(residuals: &mut [Residual], scale: f64) {
    for photometric in [false, true] {
        let mut magnitudes: Vec<f64> = residuals
            .iter()
            .filter(|r| r.is_photometric() == photometric)
            .map(|r| r.value.abs())
            .collect();
        if magnitudes.is_empty() {
            continue;
        }
        let mid = magnitudes.len() / 2;
        magnitudes.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
        let delta = (scale * magnitudes[mid]).max(1e-9);
        for r in residuals
            .iter_mut()
            .filter(|r| r.is_photometric() == photometric)
        {
            let a = r.value.abs();
            r.weight = if a <= delta { 1.0 } else { delta / a };
        }
    }
}

fn accumulate_normal_equations(
    residuals: &[Residual],
    w_photo: f64,
) -> (Matrix6<f64>, Vector6<f64>, f64) {
    let partials = parallel::map_chunks(residuals, parallel::REDUCE_CHUNK, |_, chunk| {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        let mut cost = 0.0;
        for r in chunk {
            let w = r.weight * if r.is_photometric() { w_photo } else { 1.0 };
            h += r.jacobian * r.jacobian.transpose() * w;
            g += r.jacobian * (w * r.value);
            cost += w * r.value * r.value;
        }
        (h, g, cost)
    });
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    let mut cost = 0.0;
    for (hp, gp, cp) in partials {
        h += hp;
        g += gp;
        cost += cp;
    }
    (h, g, cost)
}

/// Weighted cost of the fixed residual set at a candidate warp. A
/// photometric term whose warp leaves the previous image keeps its
/// linearization-point residual, so escaping the image cannot lower the
/// cost.
fn cost_at(
    residuals: &[Residual],
    warp: &RigidPose,
    prev_img: &GrayImage,
    k: &Intrinsics,
    w_photo: f64,
) -> f64 {
    let partials = parallel::map_chunks(residuals, parallel::REDUCE_CHUNK, |_, chunk| {
        let mut cost = 0.0;
        for r in chunk {
            let w = r.weight * if r.is_photometric() { w_photo } else { 1.0 };
            let p = warp.transform_point(&r.point_cur);
            let value = match &r.kind {
                ResidualKind::Geometric {
                    point_prev,
                    normal_prev,
                } => (p - point_prev).dot(normal_prev),
                ResidualKind::Photometric { intensity } => {
                    if p.z <= 0.0 {
                        r.value
                    } else {
                        match k.project(&p) {
                            Ok(target) => match prev_img.sample_bilinear(target.x, target.y) {
                                Some(reference) => intensity - reference,
                                None => r.value,
                            },
                            Err(_) => r.value,
                        }
                    }
                }
            };
            cost += w * value * value;
        }
        cost
    });
    partials.into_iter().sum()
}

/// Jacobi-preconditioned solve of `H x = -g` with a rank guard: any
/// near-zero diagonal or a preconditioned eigenvalue below 1e-9 reports a
/// degenerate system.
fn solve_preconditioned(h: &Matrix6<f64>, g: &Vector6<f64>) -> Option<Vector6<f64>> {
    let diag = h.diagonal();
    let max_diag = diag.max();
    if max_diag.is_nan() || max_diag <= 0.0 {
        return None;
    }
    let mut d_inv_sqrt = Vector6::zeros();
    for i in 0..6 {
        if diag[i] <= 1e-12 * max_diag {
            return None;
        }
        d_inv_sqrt[i] = 1.0 / diag[i].sqrt();
    }
    let mut h_tilde = *h;
    for i in 0..6 {
        for j in 0..6 {
            h_tilde[(i, j)] *= d_inv_sqrt[i] * d_inv_sqrt[j];
        }
    }
    let eigen = nalgebra::SymmetricEigen::new(h_tilde);
    let max_eig = eigen.eigenvalues.max();
    if eigen.eigenvalues.min() < 1e-9 * max_eig.max(1.0) {
        return None;
    }
    let rhs = -Vector6::from_fn(|i, _| g[i] * d_inv_sqrt[i]);
    let y = eigen.eigenvectors
        * (eigen.eigenvectors.transpose() * rhs).component_div(&eigen.eigenvalues);
    Some(Vector6::from_fn(|i, _| y[i] * d_inv_sqrt[i]))
}
