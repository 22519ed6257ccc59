//! Stereo depth from rectified pairs.
//!
//! The built-in matcher is winner-take-all ZNCC block matching with
//! sub-pixel parabolic refinement and a left-right consistency check. It
//! stands behind the [`DepthProvider`] interface so precomputed depth (for
//! example from a learned network) can feed the same pipeline through
//! [`FileDepthProvider`].
//!
//! ZNCC is evaluated with box-filtered window sums: per-image sums are
//! computed once and only the left-right product plane is rebuilt per
//! disparity candidate, so the cost is O(width * height) per candidate.

use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::Intrinsics;
use crate::io::{read_depth_map, DepthMap, GrayImage, IoError};
use crate::parallel;

#[derive(Debug, Error)]
pub enum StereoError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(u32, u32, u32, u32),
    #[error("intrinsics have no stereo baseline")]
    MissingBaseline,
    #[error("invalid stereo parameters: {0}")]
    InvalidParams(String),
    #[error("depth file for frame {frame} not found under {dir}")]
    MissingFrame { frame: usize, dir: PathBuf },
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Block-matching parameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct StereoParams {
    /// Largest disparity candidate, pixels.
    pub max_disparity: u32,
    /// Half-width of the correlation window.
    pub window_radius: u32,
    /// Minimum accepted ZNCC score in [-1, 1].
    pub zncc_threshold: f64,
    /// Left-right consistency tolerance, pixels.
    pub lr_consistency_tol: f64,
}

impl Default for StereoParams {
    fn default() -> Self {
        Self {
            max_disparity: 128,
            window_radius: 4,
            zncc_threshold: 0.6,
            lr_consistency_tol: 1.0,
        }
    }
}

impl StereoParams {
    fn validate(&self) -> Result<(), StereoError> {
        if self.max_disparity < 1 {
            return Err(StereoError::InvalidParams("max_disparity must be >= 1".into()));
        }
        if self.window_radius < 1 {
            return Err(StereoError::InvalidParams("window_radius must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-pixel horizontal disparity; invalid pixels are NaN.
#[derive(Debug, Clone)]
pub struct DisparityMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DisparityMap {
    pub fn invalid(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![f32::NAN; (width * height) as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        let v = self.data[(y * self.width + x) as usize];
        v.is_finite().then_some(v as f64)
    }

    pub fn set(&mut self, x: u32, y: u32, d: f32) {
        self.data[(y * self.width + x) as usize] = d;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_finite()).count()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Estimates the left-reference disparity field: for each left pixel the
/// horizontal offset to its right-image correspondence.
pub fn estimate_disparity(
    left: &GrayImage,
    right: &GrayImage,
    params: &StereoParams,
) -> Result<DisparityMap, StereoError> {
    estimate_disparity_pair(left, right, params).map(|(l, _)| l)
}

/// Right-reference counterpart of [`estimate_disparity`], used for the
/// consistency check.
pub fn estimate_right_disparity(
    left: &GrayImage,
    right: &GrayImage,
    params: &StereoParams,
) -> Result<DisparityMap, StereoError> {
    estimate_disparity_pair(left, right, params).map(|(_, r)| r)
}

/// Winner bookkeeping per pixel: best score, its disparity, and the scores
/// one candidate below and above for the sub-pixel parabola.
struct Winner {
    best: Vec<f32>,
    best_d: Vec<i32>,
    before: Vec<f32>,
    after: Vec<f32>,
}

impl Winner {
    fn new(len: usize) -> Self {
        Self {
            best: vec![f32::NEG_INFINITY; len],
            best_d: vec![-1; len],
            before: vec![f32::NAN; len],
            after: vec![f32::NAN; len],
        }
    }
}

/// Both disparity maps from one scan. A left pixel `x` matched at
/// disparity `d` and the right pixel `x - d` matched at the same `d` share
/// the same correlation window pair, so each candidate score feeds the
/// winner state of both maps. Rows are processed in bands with the whole
/// disparity sweep kept row-local, which keeps the winner state in cache.
pub fn estimate_disparity_pair(
    left: &GrayImage,
    right: &GrayImage,
    params: &StereoParams,
) -> Result<(DisparityMap, DisparityMap), StereoError> {
    params.validate()?;
    if left.width() != right.width() || left.height() != right.height() {
        return Err(StereoError::SizeMismatch(
            left.width(),
            left.height(),
            right.width(),
            right.height(),
        ));
    }
    let w = left.width() as usize;
    let h = left.height() as usize;
    let r = params.window_radius as usize;
    if w < 2 * r + 2 || h < 2 * r + 2 {
        return Ok((
            DisparityMap::invalid(left.width(), left.height()),
            DisparityMap::invalid(left.width(), left.height()),
        ));
    }
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let min_varsum = n * 1e-6; // per-pixel std below 1e-3 counts as textureless
    // Candidates beyond this leave no room for a full window pair.
    let max_d = (params.max_disparity as usize).min(w.saturating_sub(2 * r + 1));

    let left_f: &[f32] = left.data();
    let right_f: &[f32] = right.data();

    // Window sums and inverse deviations, one-time per image. Planes are
    // stored f32 for bandwidth; all accumulation happens in f64.
    let (sum_l, inv_l) = window_stats(left_f, w, h, r, min_varsum);
    let (sum_r, inv_r) = window_stats(right_f, w, h, r, min_varsum);

    let mut winner_l = Winner::new(w * h);
    let mut winner_r = Winner::new(w * h);

    const BAND_ROWS: usize = 32;
    let bands: Vec<_> = winner_l
        .best
        .chunks_mut(BAND_ROWS * w)
        .zip(winner_l.best_d.chunks_mut(BAND_ROWS * w))
        .zip(winner_l.before.chunks_mut(BAND_ROWS * w))
        .zip(winner_l.after.chunks_mut(BAND_ROWS * w))
        .zip(winner_r.best.chunks_mut(BAND_ROWS * w))
        .zip(winner_r.best_d.chunks_mut(BAND_ROWS * w))
        .zip(winner_r.before.chunks_mut(BAND_ROWS * w))
        .zip(winner_r.after.chunks_mut(BAND_ROWS * w))
        .enumerate()
        .map(|(b, (((((((lb, ld), lsb), lsa), rb), rd), rsb), rsa))| {
            (b, lb, ld, lsb, lsa, rb, rd, rsb, rsa)
        })
        .collect();

    let sum_l = &sum_l;
    let sum_r = &sum_r;
    let inv_l = &inv_l;
    let inv_r = &inv_r;
    process_rows(bands, move |(band, lb, ld, lsb, lsa, rb, rd, rsb, rsa)| {
        let y_lo = (band * BAND_ROWS).max(r);
        let y_hi = ((band + 1) * BAND_ROWS).min(h - r);
        if y_lo >= y_hi {
            return;
        }
        // Column sums of the product window per disparity, maintained as a
        // sliding sum over rows.
        let mut acc = vec![0.0f64; (max_d + 1) * w];
        let mut scratch = vec![0.0f32; w];
        for v in y_lo - r..=y_lo + r {
            for d in 0..=max_d {
                product_row_sums(left_f, right_f, w, r, d, v, &mut scratch);
                let acc_d = &mut acc[d * w..(d + 1) * w];
                for (a, s) in acc_d.iter_mut().zip(&scratch) {
                    *a += *s as f64;
                }
            }
        }

        let mut row_plane = vec![f32::NAN; w];
        for y in y_lo..y_hi {
            if y > y_lo {
                for d in 0..=max_d {
                    product_row_sums(left_f, right_f, w, r, d, y - 1 - r, &mut scratch);
                    let acc_d = &mut acc[d * w..(d + 1) * w];
                    for (a, s) in acc_d.iter_mut().zip(&scratch) {
                        *a -= *s as f64;
                    }
                    product_row_sums(left_f, right_f, w, r, d, y + r, &mut scratch);
                    let acc_d = &mut acc[d * w..(d + 1) * w];
                    for (a, s) in acc_d.iter_mut().zip(&scratch) {
                        *a += *s as f64;
                    }
                }
            }
            row_plane.iter_mut().for_each(|v| *v = f32::NAN);
            let local = (y - band * BAND_ROWS) * w;
            let base = y * w;
            let lb = &mut lb[local..local + w];
            let ld = &mut ld[local..local + w];
            let lsb = &mut lsb[local..local + w];
            let lsa = &mut lsa[local..local + w];
            let rb = &mut rb[local..local + w];
            let rd = &mut rd[local..local + w];
            let rsb = &mut rsb[local..local + w];
            let rsa = &mut rsa[local..local + w];

            for d in 0..=max_d {
                let d_i = d as i32;
                let acc_d = &acc[d * w..(d + 1) * w];
                let mut prev_left_m1 = f32::NAN;
                // Columns left of r + d have no full window pair; they only
                // need the bookkeeping for a NaN score.
                for x in r..(r + d).min(w - r) {
                    let before = row_plane[x];
                    if ld[x] == d_i - 1 {
                        lsa[x] = f32::NAN;
                    }
                    if x >= d && rd[x - d] == d_i - 1 {
                        rsa[x - d] = f32::NAN;
                    }
                    row_plane[x] = f32::NAN;
                    prev_left_m1 = before;
                }
                for x in (r + d).max(r)..w - r {
                    let before = row_plane[x];
                    let j = x - d;
                    let il = inv_l[base + x] as f64;
                    let ir = inv_r[base + j] as f64;
                    let s = if il > 0.0 && ir > 0.0 {
                        let cov = acc_d[x] - sum_l[base + x] as f64 * sum_r[base + j] as f64 / n;
                        (cov * il * ir) as f32
                    } else {
                        f32::NAN
                    };

                    // left winner at x
                    if ld[x] == d_i - 1 {
                        lsa[x] = s;
                    }
                    if s.is_finite() && s > lb[x] {
                        lb[x] = s;
                        ld[x] = d_i;
                        lsb[x] = before;
                        lsa[x] = f32::NAN;
                    }
                    // right winner at x - d sees the same window pair
                    let u = x - d;
                    if rd[u] == d_i - 1 {
                        rsa[u] = s;
                    }
                    if s.is_finite() && s > rb[u] {
                        rb[u] = s;
                        rd[u] = d_i;
                        rsb[u] = prev_left_m1;
                        rsa[u] = f32::NAN;
                    }
                    row_plane[x] = s;
                    prev_left_m1 = before;
                }
            }
        }
    });

    Ok((
        finalize_disparities(&winner_l, w, h, params.zncc_threshold, left.width(), left.height()),
        finalize_disparities(&winner_r, w, h, params.zncc_threshold, left.width(), left.height()),
    ))
}

/// Horizontal sliding window sums of `left(x) * right(x - d)` for one row;
/// zero where the window leaves either image.
fn product_row_sums(
    left: &[f32],
    right: &[f32],
    w: usize,
    r: usize,
    d: usize,
    y: usize,
    out: &mut [f32],
) {
    let lrow = &left[y * w..(y + 1) * w];
    let rrow = &right[y * w..(y + 1) * w];
    let x0 = r + d;
    out[..x0.min(w)].iter_mut().for_each(|v| *v = 0.0);
    if x0 + r >= w {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut acc = 0.0f64;
    for u in x0 - r..=x0 + r {
        acc += lrow[u] as f64 * rrow[u - d] as f64;
    }
    out[x0] = acc as f32;
    for x in x0 + 1..w - r {
        acc += lrow[x + r] as f64 * rrow[x + r - d] as f64
            - lrow[x - r - 1] as f64 * rrow[x - r - 1 - d] as f64;
        out[x] = acc as f32;
    }
    out[w - r..].iter_mut().for_each(|v| *v = 0.0);
}

fn finalize_disparities(
    winner: &Winner,
    w: usize,
    _h: usize,
    threshold: f64,
    width: u32,
    height: u32,
) -> DisparityMap {
    let mut out = DisparityMap::invalid(width, height);
    parallel::for_each_row_mut(out.data.as_mut_slice(), w, |y, row| {
        for (x, slot) in row.iter_mut().enumerate() {
            let i = y * w + x;
            if winner.best_d[i] < 0 || (winner.best[i] as f64) < threshold {
                continue;
            }
            let mut disparity = winner.best_d[i] as f64;
            let (p, b, q) = (
                winner.before[i] as f64,
                winner.best[i] as f64,
                winner.after[i] as f64,
            );
            if p.is_finite() && q.is_finite() {
                let denom = p + q - 2.0 * b;
                if denom < -1e-9 {
                    disparity += (0.5 * (p - q) / denom).clamp(-0.5, 0.5);
                }
            }
            *slot = disparity as f32;
        }
    });
    out
}

/// Box sums of the image plus the inverse windowed standard deviation sum
/// (`1 / sqrt(sum_sq - sum^2/n)`), zero where the window leaves the image
/// or the texture falls under `min_varsum`.
fn window_stats(src: &[f32], w: usize, h: usize, r: usize, min_varsum: f64) -> (Vec<f32>, Vec<f32>) {
    let sq: Vec<f32> = src.iter().map(|v| v * v).collect();
    let sums = box_sums(src, w, h, r);
    let sums_sq = box_sums(&sq, w, h, r);
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut inv = vec![0.0f32; w * h];
    parallel::for_each_row_mut(&mut inv, w, |y, row| {
        if y < r || y + r >= h {
            return;
        }
        for (x, slot) in row.iter_mut().enumerate().take(w - r).skip(r) {
            let i = y * w + x;
            let varsum = sums_sq[i] as f64 - sums[i] as f64 * sums[i] as f64 / n;
            if varsum >= min_varsum {
                *slot = (1.0 / varsum.sqrt()) as f32;
            }
        }
    });
    (sums, inv)
}

#[cfg(feature = "parallel")]
fn process_rows<T: Send, F: Fn(T) + Sync + Send>(rows: Vec<T>, f: F) {
    use rayon::prelude::*;
    rows.into_par_iter().for_each(f);
}

#[cfg(not(feature = "parallel"))]
fn process_rows<T: Send, F: Fn(T) + Sync + Send>(rows: Vec<T>, f: F) {
    rows.into_iter().for_each(f);
}

/// Windowed sums with half-width `r`; entries whose window leaves the image
/// are zero. Horizontal pass is per-row, vertical pass is a sliding
/// accumulator over rows.
fn box_sums(src: &[f32], w: usize, h: usize, r: usize) -> Vec<f32> {
    let mut tmp = vec![0.0f32; w * h];
    parallel::for_each_row_mut(&mut tmp, w, |y, row| {
        let src_row = &src[y * w..(y + 1) * w];
        let mut acc: f64 = src_row[..2 * r + 1].iter().map(|v| *v as f64).sum();
        row[r] = acc as f32;
        for x in r + 1..w - r {
            acc += src_row[x + r] as f64 - src_row[x - r - 1] as f64;
            row[x] = acc as f32;
        }
    });
    let mut out = vec![0.0f32; w * h];
    let mut acc = vec![0.0f64; w];
    for row in tmp.chunks(w).take(2 * r + 1) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += *v as f64;
        }
    }
    for (slot, a) in out[r * w..(r + 1) * w].iter_mut().zip(&acc) {
        *slot = *a as f32;
    }
    for y in r + 1..h - r {
        let add = &tmp[(y + r) * w..(y + r + 1) * w];
        let sub = &tmp[(y - r - 1) * w..(y - r) * w];
        let out_row = &mut out[y * w..(y + 1) * w];
        for (((a, o), hi), lo) in acc.iter_mut().zip(out_row).zip(add).zip(sub) {
            *a += (*hi - *lo) as f64;
            *o = *a as f32;
        }
    }
    out
}

/// Keeps a left pixel iff the right-reference disparity at its match
/// position agrees within `tol` pixels. An infinite tolerance keeps every
/// valid left pixel.
pub fn left_right_consistency_filter(
    dl: &DisparityMap,
    dr: &DisparityMap,
    tol: f64,
) -> DisparityMap {
    let mut out = DisparityMap::invalid(dl.width(), dl.height());
    if tol.is_infinite() {
        out.data.copy_from_slice(&dl.data);
        return out;
    }
    let w = dl.width() as usize;
    let dl_data = dl.data();
    let dr_data = dr.data();
    crate::parallel::for_each_row_mut(out.data.as_mut_slice(), w, |y, row| {
        let dl_row = &dl_data[y * w..(y + 1) * w];
        let dr_row = &dr_data[y * w..(y + 1) * w];
        for x in 0..w {
            let d = dl_row[x];
            if !d.is_finite() {
                continue;
            }
            let xr = (x as f64 - d as f64).round();
            if xr < 0.0 || xr >= w as f64 {
                continue;
            }
            let dr_val = dr_row[xr as usize];
            if dr_val.is_finite() && (d as f64 - dr_val as f64).abs() <= tol {
                row[x] = d;
            }
        }
    });
    out
}

/// Depth from disparity: `z = fx * baseline / d`. Zero or invalid
/// disparity yields an invalid depth pixel.
pub fn disparity_to_depth(d: &DisparityMap, k: &Intrinsics) -> Result<DepthMap, StereoError> {
    let baseline = k.baseline.ok_or(StereoError::MissingBaseline)?;
    let mut depth = DepthMap::new(d.width(), d.height());
    for y in 0..d.height() {
        for x in 0..d.width() {
            if let Some(disp) = d.get(x, y) {
                if disp > 0.0 {
                    depth.set(x, y, (k.fx * baseline / disp) as f32);
                }
            }
        }
    }
    Ok(depth)
}

/// Inverse of [`disparity_to_depth`] on valid pixels.
pub fn depth_to_disparity(depth: &DepthMap, k: &Intrinsics) -> Result<DisparityMap, StereoError> {
    let baseline = k.baseline.ok_or(StereoError::MissingBaseline)?;
    let mut d = DisparityMap::invalid(depth.width(), depth.height());
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if let Some(z) = depth.get(x, y) {
                d.set(x, y, (k.fx * baseline / z) as f32);
            }
        }
    }
    Ok(d)
}

/// Source of per-frame depth maps; implementations are consumed by a single
/// pipeline at a time.
pub trait DepthProvider {
    fn depth_map(
        &mut self,
        frame: usize,
        left: &GrayImage,
        right: &GrayImage,
        k: &Intrinsics,
    ) -> Result<DepthMap, StereoError>;

    fn name(&self) -> &'static str;
}

/// Computes depth with the ZNCC matcher and consistency filter.
pub struct ZnccDepthProvider {
    pub params: StereoParams,
}

impl DepthProvider for ZnccDepthProvider {
    fn depth_map(
        &mut self,
        _frame: usize,
        left: &GrayImage,
        right: &GrayImage,
        k: &Intrinsics,
    ) -> Result<DepthMap, StereoError> {
        let (dl, dr) = estimate_disparity_pair(left, right, &self.params)?;
        let filtered = left_right_consistency_filter(&dl, &dr, self.params.lr_consistency_tol);
        disparity_to_depth(&filtered, k)
    }

    fn name(&self) -> &'static str {
        "zncc"
    }
}

/// Serves precomputed depth files named `{frame:06}.dpth` or
/// `{frame:06}.png` from a directory, in frame order.
pub struct FileDepthProvider {
    dir: PathBuf,
}

impl FileDepthProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn frame_path(&self, frame: usize) -> Option<PathBuf> {
        for ext in ["dpth", "png"] {
            let path = self.dir.join(format!("{frame:06}.{ext}"));
            if path.exists() {
                return Some(path);
            }
        }
        None
    }
}

impl DepthProvider for FileDepthProvider {
    fn depth_map(
        &mut self,
        frame: usize,
        _left: &GrayImage,
        _right: &GrayImage,
        _k: &Intrinsics,
    ) -> Result<DepthMap, StereoError> {
        let path = self.frame_path(frame).ok_or_else(|| StereoError::MissingFrame {
            frame,
            dir: self.dir.clone(),
        })?;
        Ok(read_depth_map(&path)?)
    }

    fn name(&self) -> &'static str {
        "files"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneSpec};

    fn frame_file_name(frame: usize, ext: &str) -> String {
        format!("{frame:06}.{ext}")
    }

    /// Deterministic textured test image from seeded value noise.
    fn textured(w: u32, h: u32, shift: i64) -> GrayImage {
        let scene = generate_scene(&SceneSpec {
            bumps: 0,
            texture_cells: 30.0,
            texture_contrast: 0.9,
            extent: 100.0,
            ..SceneSpec::default()
        });
        let mut data = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                data.push(scene.albedo((x as i64 + shift) as f64 * 0.5, y as f64 * 0.5) as f32);
            }
        }
        GrayImage::from_data(w, h, data).unwrap()
    }

    fn small_params() -> StereoParams {
        StereoParams {
            max_disparity: 24,
            window_radius: 3,
            zncc_threshold: 0.6,
            lr_consistency_tol: 1.0,
        }
    }

    fn test_intrinsics() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 40.0, 30.0, 80, 60, Some(5.0)).unwrap()
    }

    #[test]
    fn constant_shift_recovers_disparity() {
        let left = textured(80, 60, 0);
        let right = textured(80, 60, 8); // left(x) matches right(x - 8)
        let d = estimate_disparity(&left, &right, &small_params()).unwrap();
        let mut checked = 0;
        for y in 4..56 {
            for x in 12..76 {
                if let Some(v) = d.get(x, y) {
                    assert!((v - 8.0).abs() < 0.5, "disparity {v} at ({x},{y})");
                    checked += 1;
                }
            }
        }
        assert!(checked > 2000, "only {checked} valid pixels");
    }

    #[test]
    fn constant_image_is_all_invalid() {
        let flat = GrayImage::from_data(60, 40, vec![0.5; 2400]).unwrap();
        let d = estimate_disparity(&flat, &flat, &small_params()).unwrap();
        assert_eq!(d.valid_count(), 0);
    }

    #[test]
    fn identical_images_give_zero_disparity() {
        let img = textured(80, 60, 0);
        let d = estimate_disparity(&img, &img, &small_params()).unwrap();
        let mut checked = 0;
        for y in 4..56 {
            for x in 4..76 {
                if let Some(v) = d.get(x, y) {
                    assert!(v.abs() < 0.25, "disparity {v} at ({x},{y})");
                    checked += 1;
                }
            }
        }
        assert!(checked > 2000);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let a = textured(60, 40, 0);
        let b = textured(61, 40, 0);
        assert!(matches!(
            estimate_disparity(&a, &b, &small_params()),
            Err(StereoError::SizeMismatch(..))
        ));
    }

    #[test]
    fn translation_covariance() {
        // Shifting both images horizontally by k shifts the disparity field.
        let k = 5u32;
        let left = textured(80, 60, 0);
        let right = textured(80, 60, 8);
        let left_shift = textured(80, 60, k as i64);
        let right_shift = textured(80, 60, 8 + k as i64);
        let d0 = estimate_disparity(&left, &right, &small_params()).unwrap();
        let d1 = estimate_disparity(&left_shift, &right_shift, &small_params()).unwrap();
        let mut compared = 0;
        for y in 10..50 {
            for x in 20..70 {
                if let (Some(a), Some(b)) = (d0.get(x, y), d1.get(x - k, y)) {
                    assert!((a - b).abs() < 0.3, "{a} vs {b} at ({x},{y})");
                    compared += 1;
                }
            }
        }
        assert!(compared > 1000);
    }

    #[test]
    fn lr_filter_consistent_pair_keeps_pixels() {
        let left = textured(80, 60, 0);
        let right = textured(80, 60, 8);
        let params = small_params();
        let dl = estimate_disparity(&left, &right, &params).unwrap();
        let dr = estimate_right_disparity(&left, &right, &params).unwrap();
        let kept = left_right_consistency_filter(&dl, &dr, params.lr_consistency_tol);
        assert!(kept.valid_count() as f64 > 0.9 * dl.valid_count() as f64);
    }

    #[test]
    fn lr_filter_zeroed_right_invalidates_large_disparities() {
        let left = textured(80, 60, 0);
        let right = textured(80, 60, 8);
        let params = small_params();
        let dl = estimate_disparity(&left, &right, &params).unwrap();
        let mut dr = DisparityMap::invalid(80, 60);
        for y in 0..60 {
            for x in 0..80 {
                dr.set(x, y, 0.0);
            }
        }
        let tol = 1.0;
        let kept = left_right_consistency_filter(&dl, &dr, tol);
        for y in 0..60 {
            for x in 0..80 {
                if let Some(v) = kept.get(x, y) {
                    assert!(v <= tol);
                }
            }
        }
    }

    #[test]
    fn lr_filter_infinite_tolerance_is_identity() {
        let left = textured(80, 60, 0);
        let right = textured(80, 60, 8);
        let dl = estimate_disparity(&left, &right, &small_params()).unwrap();
        let dr = DisparityMap::invalid(80, 60);
        let kept = left_right_consistency_filter(&dl, &dr, f64::INFINITY);
        assert_eq!(kept.valid_count(), dl.valid_count());
    }

    #[test]
    fn disparity_depth_conversion() {
        let k = test_intrinsics();
        let mut d = DisparityMap::invalid(80, 60);
        d.set(10, 10, 10.0);
        d.set(11, 10, 0.0);
        let depth = disparity_to_depth(&d, &k).unwrap();
        assert_eq!(depth.get(10, 10), Some(50.0)); // 100 * 5 / 10
        assert!(!depth.is_valid(11, 10));

        // Doubling the baseline doubles depth.
        let mut k2 = k;
        k2.baseline = Some(10.0);
        let depth2 = disparity_to_depth(&d, &k2).unwrap();
        assert_eq!(depth2.get(10, 10), Some(100.0));
    }

    #[test]
    fn disparity_depth_round_trip() {
        let k = test_intrinsics();
        let left = textured(80, 60, 0);
        let right = textured(80, 60, 8);
        let d = estimate_disparity(&left, &right, &small_params()).unwrap();
        let depth = disparity_to_depth(&d, &k).unwrap();
        let back = depth_to_disparity(&depth, &k).unwrap();
        for y in 0..60 {
            for x in 0..80 {
                match (d.get(x, y), back.get(x, y)) {
                    (Some(a), Some(b)) if a > 0.0 => assert!((a - b).abs() < 1e-4),
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let mut k = test_intrinsics();
        k.baseline = None;
        let d = DisparityMap::invalid(80, 60);
        assert!(matches!(
            disparity_to_depth(&d, &k),
            Err(StereoError::MissingBaseline)
        ));
    }

    #[test]
    fn provider_depth_tracks_rendered_ground_truth() {
        // Median absolute depth error below 2% of depth on textured pixels
        // of a rendered stereo pair.
        let scene = generate_scene(&SceneSpec::default());
        let k = Intrinsics::new(210.0, 210.0, 159.5, 119.5, 320, 240, Some(5.0)).unwrap();
        let frame = crate::synth::render_frame(
            &scene,
            &crate::geometry::RigidPose::from_translation(0.0, 0.0, -100.0),
            &k,
        )
        .unwrap();
        let mut provider = ZnccDepthProvider {
            params: StereoParams {
                max_disparity: 24,
                ..StereoParams::default()
            },
        };
        let estimated = provider.depth_map(0, &frame.left, &frame.right, &k).unwrap();
        let mut rel_errors: Vec<f64> = Vec::new();
        for y in 0..k.height {
            for x in 0..k.width {
                if let (Some(est), Some(gt)) = (estimated.get(x, y), frame.depth.get(x, y)) {
                    rel_errors.push((est - gt).abs() / gt);
                }
            }
        }
        assert!(rel_errors.len() > 20_000, "only {} valid pixels", rel_errors.len());
        let mid = rel_errors.len() / 2;
        rel_errors.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
        assert!(
            rel_errors[mid] < 0.02,
            "median relative depth error {}",
            rel_errors[mid]
        );
    }

    #[test]
    fn file_provider_serves_frames_and_reports_missing() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = DepthMap::new(4, 4);
        map.set(1, 1, 42.0);
        for frame in [0usize, 1, 2, 4] {
            crate::io::write_depth_map_raw(&map, &dir.path().join(frame_file_name(frame, "dpth")))
                .unwrap();
        }
        let mut provider = FileDepthProvider::new(dir.path());
        let dummy = GrayImage::new(4, 4);
        let k = test_intrinsics();
        let served = provider.depth_map(1, &dummy, &dummy, &k).unwrap();
        assert_eq!(served, map);
        assert!(matches!(
            provider.depth_map(3, &dummy, &dummy, &k),
            Err(StereoError::MissingFrame { frame: 3, .. })
        ));
    }
}
