//! Local features: Harris-style corners with an intensity-centroid
//! orientation and a 256-bit rotated patch-comparison descriptor, matched
//! by Hamming distance with a ratio and mutual-best check.
//!
//! The comparison pattern is generated once from a fixed seed, so feature
//! extraction is deterministic across runs and platforms.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Pixel;
use crate::io::GrayImage;

/// Patch half-width the comparison pattern is drawn from.
const PATCH_RADIUS: i32 = 13;
/// Image border inside which no feature is emitted: rotated pattern reach
/// plus the smoothing window.
const BORDER: i32 = 21;
const PATTERN_SEED: u64 = 0x0B5E_55ED_FEA7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryDescriptor(pub [u64; 4]);

impl BinaryDescriptor {
    pub fn hamming(&self, other: &BinaryDescriptor) -> u32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LocalFeature {
    pub keypoint: Pixel,
    pub scale: f64,
    pub orientation: f64,
    pub descriptor: BinaryDescriptor,
}

#[derive(Debug, Clone, Copy)]
pub struct FeatureConfig {
    pub max_features: usize,
    /// Corner response threshold relative to the frame maximum.
    pub quality: f64,
    /// Non-maximum suppression radius, pixels.
    pub nms_radius: u32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            max_features: 500,
            quality: 0.01,
            nms_radius: 3,
        }
    }
}

fn comparison_pattern() -> &'static [(i32, i32, i32, i32); 256] {
    static PATTERN: OnceLock<[(i32, i32, i32, i32); 256]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(PATTERN_SEED);
        let mut out = [(0, 0, 0, 0); 256];
        for slot in &mut out {
            *slot = (
                rng.random_range(-PATCH_RADIUS..=PATCH_RADIUS),
                rng.random_range(-PATCH_RADIUS..=PATCH_RADIUS),
                rng.random_range(-PATCH_RADIUS..=PATCH_RADIUS),
                rng.random_range(-PATCH_RADIUS..=PATCH_RADIUS),
            );
        }
        out
    })
}

pub fn detect_local_features(image: &GrayImage) -> Vec<LocalFeature> {
    detect_local_features_with(image, &FeatureConfig::default())
}

pub fn detect_local_features_with(image: &GrayImage, config: &FeatureConfig) -> Vec<LocalFeature> {
    let w = image.width() as i32;
    let h = image.height() as i32;
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return Vec::new();
    }
    let response = harris_response(image);
    let max_response = response.iter().cloned().fold(0.0f32, f32::max);
    if max_response <= 0.0 {
        return Vec::new();
    }
    let threshold = (config.quality as f32) * max_response;
    let r = config.nms_radius as i32;

    let mut corners: Vec<(f32, i32, i32)> = Vec::new();
    for y in BORDER..h - BORDER {
        'pixel: for x in BORDER..w - BORDER {
            let v = response[(y * w + x) as usize];
            if v < threshold {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = response[((y + dy) * w + x + dx) as usize];
                    if n > v || (n == v && (dy < 0 || (dy == 0 && dx < 0))) {
                        continue 'pixel;
                    }
                }
            }
            corners.push((v, x, y));
        }
    }
    corners.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    corners.truncate(config.max_features);

    corners
        .into_iter()
        .map(|(_, x, y)| {
            let orientation = intensity_centroid_angle(image, x, y);
            let (dx, dy) = subpixel_offset(&response, w, x, y);
            LocalFeature {
                keypoint: Pixel::new(x as f64 + dx, y as f64 + dy),
                scale: 1.0,
                orientation,
                descriptor: describe(image, x, y, orientation),
            }
        })
        .collect()
}

/// Per-axis parabola fit on the corner response around a peak.
fn subpixel_offset(response: &[f32], w: i32, x: i32, y: i32) -> (f64, f64) {
    let at = |x: i32, y: i32| response[(y * w + x) as usize] as f64;
    let axis = |prev: f64, center: f64, next: f64| -> f64 {
        let denom = prev + next - 2.0 * center;
        if denom.abs() < 1e-12 {
            0.0
        } else {
            (0.5 * (prev - next) / denom).clamp(-1.0, 1.0)
        }
    };
    (
        axis(at(x - 1, y), at(x, y), at(x + 1, y)),
        axis(at(x, y - 1), at(x, y), at(x, y + 1)),
    )
}

/// Harris corner response with a 5x5 box-smoothed structure tensor,
/// computed on a lightly blurred copy so hard edges give one smooth peak.
fn harris_response(image: &GrayImage) -> Vec<f32> {
    let w = image.width() as i32;
    let h = image.height() as i32;
    let blurred = binomial_blur(image);
    let at = |x: i32, y: i32| blurred[(y * w + x) as usize];
    let mut ixx = vec![0.0f32; (w * h) as usize];
    let mut iyy = vec![0.0f32; (w * h) as usize];
    let mut ixy = vec![0.0f32; (w * h) as usize];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
            let gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
            let i = (y * w + x) as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let mut response = vec![0.0f32; (w * h) as usize];
    for y in 2..h - 2 {
        for x in 2..w - 2 {
            let mut sxx = 0.0;
            let mut syy = 0.0;
            let mut sxy = 0.0;
            for dy in -2..=2i32 {
                for dx in -2..=2i32 {
                    let i = ((y + dy) * w + x + dx) as usize;
                    sxx += ixx[i];
                    syy += iyy[i];
                    sxy += ixy[i];
                }
            }
            let det = sxx * syy - sxy * sxy;
            let trace = sxx + syy;
            response[(y * w + x) as usize] = det - 0.04 * trace * trace;
        }
    }
    response
}

/// Orientation from the patch intensity centroid in a radius-7 disc.
/// 3x3 binomial blur, borders copied.
fn binomial_blur(image: &GrayImage) -> Vec<f32> {
    let w = image.width() as i32;
    let h = image.height() as i32;
    let mut out: Vec<f32> = image.data().to_vec();
    const KERNEL: [f32; 3] = [0.25, 0.5, 0.25];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = 0.0;
            for (ky, wy) in KERNEL.iter().enumerate() {
                for (kx, wx) in KERNEL.iter().enumerate() {
                    acc += wy * wx * image.at((x + kx as i32 - 1) as u32, (y + ky as i32 - 1) as u32);
                }
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

fn intensity_centroid_angle(image: &GrayImage, x: i32, y: i32) -> f64 {
    const R: i32 = 7;
    let mut m10 = 0.0f64;
    let mut m01 = 0.0f64;
    for dy in -R..=R {
        for dx in -R..=R {
            if dx * dx + dy * dy > R * R {
                continue;
            }
            let v = image.at((x + dx) as u32, (y + dy) as u32) as f64;
            m10 += dx as f64 * v;
            m01 += dy as f64 * v;
        }
    }
    if m10 == 0.0 && m01 == 0.0 {
        0.0
    } else {
        m01.atan2(m10)
    }
}

/// Mean intensity over a 3x3 window.
fn smoothed(image: &GrayImage, x: i32, y: i32) -> f32 {
    let mut sum = 0.0;
    for dy in -1..=1 {
        for dx in -1..=1 {
            sum += image.at((x + dx) as u32, (y + dy) as u32);
        }
    }
    sum / 9.0
}

fn describe(image: &GrayImage, x: i32, y: i32, orientation: f64) -> BinaryDescriptor {
    let (sin, cos) = orientation.sin_cos();
    let rotate = |dx: i32, dy: i32| -> (i32, i32) {
        let rx = cos * dx as f64 - sin * dy as f64;
        let ry = sin * dx as f64 + cos * dy as f64;
        (rx.round() as i32, ry.round() as i32)
    };
    let mut bits = [0u64; 4];
    for (i, (ax, ay, bx, by)) in comparison_pattern().iter().enumerate() {
        let (adx, ady) = rotate(*ax, *ay);
        let (bdx, bdy) = rotate(*bx, *by);
        let a = smoothed(image, x + adx, y + ady);
        let b = smoothed(image, x + bdx, y + bdy);
        if a < b {
            bits[i / 64] |= 1u64 << (i % 64);
        }
    }
    BinaryDescriptor(bits)
}

/// Nearest/second-nearest Hamming matching with a ratio test and a
/// mutual-best check; returns `(query index, reference index)` pairs.
pub fn match_features(
    query: &[LocalFeature],
    reference: &[LocalFeature],
    ratio: f64,
) -> Vec<(usize, usize)> {
    if query.is_empty() || reference.is_empty() {
        return Vec::new();
    }
    let nearest_two = |desc: &BinaryDescriptor, pool: &[LocalFeature]| -> (usize, u32, u32) {
        let mut best = (usize::MAX, u32::MAX);
        let mut second = u32::MAX;
        for (i, f) in pool.iter().enumerate() {
            let d = desc.hamming(&f.descriptor);
            if d < best.1 {
                second = best.1;
                best = (i, d);
            } else if d < second {
                second = d;
            }
        }
        (best.0, best.1, second)
    };

    let mut matches = Vec::new();
    for (qi, q) in query.iter().enumerate() {
        let (ri, d1, d2) = nearest_two(&q.descriptor, reference);
        if ri == usize::MAX {
            continue;
        }
        if (d1 as f64) >= ratio * (d2 as f64) {
            continue;
        }
        // mutual best
        let (back, _, _) = nearest_two(&reference[ri].descriptor, query);
        if back == qi {
            matches.push((qi, ri));
        }
    }
    matches
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, render_frame, SceneSpec};
    use crate::geometry::{Intrinsics, RigidPose};

    fn checkerboard(w: u32, h: u32, square: u32) -> GrayImage {
        let mut data = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                let v = ((x / square + y / square) % 2) as f32;
                data.push(v);
            }
        }
        GrayImage::from_data(w, h, data).unwrap()
    }

    fn rendered_image() -> GrayImage {
        let scene = generate_scene(&SceneSpec {
            texture_cells: 40.0,
            ..SceneSpec::default()
        });
        let k = Intrinsics::new(200.0, 200.0, 99.5, 79.5, 200, 160, Some(5.0)).unwrap();
        render_frame(&scene, &RigidPose::from_translation(0.0, 0.0, -100.0), &k)
            .unwrap()
            .left
    }

    #[test]
    fn constant_image_yields_no_features() {
        let flat = GrayImage::from_data(100, 100, vec![0.4; 10000]).unwrap();
        assert!(detect_local_features(&flat).is_empty());
    }

    #[test]
    fn checkerboard_corners_at_intersections() {
        let img = checkerboard(200, 160, 16);
        let features = detect_local_features(&img);
        assert!(features.len() > 20, "found {}", features.len());
        for f in &features {
            // Intersections sit at half-pixel lattice positions (the corner
            // lies between pixels), so allow 1 px.
            let fx = f.keypoint.x / 16.0;
            let fy = f.keypoint.y / 16.0;
            let ex = fx.round() * 16.0;
            let ey = fy.round() * 16.0;
            let dist = ((f.keypoint.x - ex).powi(2) + (f.keypoint.y - ey).powi(2)).sqrt();
            assert!(dist <= 1.5, "corner at ({}, {})", f.keypoint.x, f.keypoint.y);
        }
    }

    #[test]
    fn detection_is_deterministic() {
        let img = rendered_image();
        let a = detect_local_features(&img);
        let b = detect_local_features(&img);
        assert_eq!(a.len(), b.len());
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(fa.keypoint, fb.keypoint);
            assert_eq!(fa.descriptor, fb.descriptor);
        }
        assert!(a.len() > 50);
    }

    #[test]
    fn self_matching_is_identity() {
        let img = rendered_image();
        let features = detect_local_features(&img);
        let matches = match_features(&features, &features, 0.8);
        assert!(matches.len() as f64 > 0.9 * features.len() as f64);
        for (q, r) in matches {
            assert_eq!(q, r);
        }
    }

    #[test]
    fn empty_reference_gives_no_matches() {
        let img = rendered_image();
        let features = detect_local_features(&img);
        assert!(match_features(&features, &[], 0.8).is_empty());
    }
}
