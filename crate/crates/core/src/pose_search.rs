//! Planar-rectangle pose search in the wide-angle image.
//!
//! A pallet front face or a calibration panel is a known planar rectangle
//! (optionally with interior hole outlines).  Its position and yaw are
//! found by a coarse-to-fine grid search: each candidate pose projects the
//! model's edge segments through the fisheye camera and scores the
//! fraction of projected samples that land within 2 px of an image edge
//! pixel (a one-sided chamfer match against a precomputed distance
//! transform).  Pitch and roll are not searched here; the caller supplies
//! the model's base orientation and only yaw sweeps around it.
//!
//! The coarse stage approximates projection linearly around octant
//! centers (the fisheye mapping is smooth; the approximation error across
//! a 75 mm octant stays under a pixel), which keeps the quarter-million
//! coarse poses cheap.  The two refinement stages, with steps halved each
//! time, project exactly.  Ties on the similarity score are broken first
//! by mean edge distance, then by grid order, making the argmax unique
//! and deterministic.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::edges::DEFAULT_EDGE_THRESHOLD;
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, RotationMatrix};
use crate::raster::GrayImage;

/// Distance (px) within which a projected sample counts as matched.
pub const CHAMFER_MATCH_PX: f64 = 2.0;

/// Distance-transform clamp, px: beyond this every miss looks equal.
pub const CHAMFER_CLAMP_PX: f32 = 16.0;

/// Default minimum similarity for a detection.
pub const DEFAULT_DETECT_THRESHOLD: f64 = 0.6;

/// An axis-aligned interior hole outline, model-plane mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoleRect {
    /// Hole center, mm from the rectangle center (in-plane x).
    pub cx: f64,
    /// Hole center, mm from the rectangle center (in-plane y).
    pub cy: f64,
    /// Hole width, mm.
    pub w: f64,
    /// Hole height, mm.
    pub h: f64,
}

/// A planar rectangle model: outline plus optional interior holes, with
/// the model frame origin at the rectangle center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarModel {
    pub width_mm: f64,
    pub height_mm: f64,
    #[serde(default)]
    pub holes: Vec<HoleRect>,
}

impl PlanarModel {
    /// A plain rectangle without holes.
    pub fn rectangle(width_mm: f64, height_mm: f64) -> Self {
        PlanarModel {
            width_mm,
            height_mm,
            holes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width_mm > 0.0) || !(self.height_mm > 0.0) {
            return Err(Error::config("model rectangle needs positive dimensions"));
        }
        for hole in &self.holes {
            if !(hole.w > 0.0) || !(hole.h > 0.0) {
                return Err(Error::config("model holes need positive dimensions"));
            }
            let inside = hole.cx.abs() + hole.w / 2.0 <= self.width_mm / 2.0
                && hole.cy.abs() + hole.h / 2.0 <= self.height_mm / 2.0;
            if !inside {
                return Err(Error::config("model holes must lie inside the rectangle"));
            }
        }
        Ok(())
    }

    /// All edge segments (outline + holes) as model-plane endpoint pairs.
    pub fn segments(&self) -> Vec<(Vector2<f64>, Vector2<f64>)> {
        let mut segments = Vec::new();
        let mut add_rect = |cx: f64, cy: f64, w: f64, h: f64| {
            let (x0, x1) = (cx - w / 2.0, cx + w / 2.0);
            let (y0, y1) = (cy - h / 2.0, cy + h / 2.0);
            let c = [
                Vector2::new(x0, y0),
                Vector2::new(x1, y0),
                Vector2::new(x1, y1),
                Vector2::new(x0, y1),
            ];
            for i in 0..4 {
                segments.push((c[i], c[(i + 1) % 4]));
            }
        };
        add_rect(0.0, 0.0, self.width_mm, self.height_mm);
        for hole in &self.holes {
            add_rect(hole.cx, hole.cy, hole.w, hole.h);
        }
        segments
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let model: PlanarModel = serde_json::from_str(json)?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One pose candidate or search result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseHypothesis {
    /// Model-center position in the camera frame, mm.
    pub position_mm: Vector3<f64>,
    /// Yaw around the camera vertical, degrees, relative to the base
    /// orientation.
    pub yaw_deg: f64,
    /// Fraction of template samples within [`CHAMFER_MATCH_PX`] of an
    /// image edge.
    pub similarity: f64,
}

impl PoseHypothesis {
    pub fn at(position_mm: Vector3<f64>, yaw_deg: f64) -> Self {
        PoseHypothesis {
            position_mm,
            yaw_deg,
            similarity: 0.0,
        }
    }
}

/// Grid extents and coarse steps of the search; refinement halves the
/// steps twice.
#[derive(Debug, Clone, Copy)]
pub struct SearchGrid {
    /// Half-extent of the position grid around the prior, mm.
    pub position_extent_mm: f64,
    /// Coarse position step, mm.
    pub position_step_mm: f64,
    /// Half-extent of the yaw sweep around the prior, degrees.
    pub yaw_extent_deg: f64,
    /// Coarse yaw step, degrees.
    pub yaw_step_deg: f64,
    /// Similarity below which the search reports no detection.
    pub detect_threshold: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            position_extent_mm: 150.0,
            position_step_mm: 10.0,
            yaw_extent_deg: 5.0,
            yaw_step_deg: 1.0,
            detect_threshold: DEFAULT_DETECT_THRESHOLD,
        }
    }
}

impl SearchGrid {
    fn validate(&self) -> Result<()> {
        let ok = self.position_extent_mm >= 0.0
            && self.position_step_mm > 0.0
            && self.yaw_extent_deg >= 0.0
            && self.yaw_step_deg > 0.0
            && self.detect_threshold.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::config("search grid extents and steps must be positive"))
        }
    }
}

/// Clamped Euclidean distance field to the image's edge set.
///
/// Edge pixels are Sobel responses at or above the threshold.  Each is
/// refined to a subpixel edge position by a parabola fit to the
/// gradient magnitude sampled one pixel to either side along the
/// gradient direction, and the refined positions are rasterized onto a
/// double-resolution grid before the distance transform.  The distance
/// valleys then bottom out at the measured edge position instead of
/// spanning a flat floor between the two integer pixels that flank it;
/// a flat floor would let the pose argmax trade sub-pixel residue
/// between position axes and yaw.
pub struct EdgeDistanceField {
    width2: usize,
    height2: usize,
    /// Distances in original-pixel units on the 2x grid.
    dist: Vec<f32>,
}

impl EdgeDistanceField {
    /// Builds the field from `image` using the given edge threshold.
    pub fn new(image: &GrayImage, edge_threshold: f64) -> Self {
        let w = image.width();
        let h = image.height();
        let width2 = (w * 2).max(1);
        let height2 = (h * 2).max(1);
        let mut mag = vec![0.0f32; w * h];
        let mut grad = vec![(0.0f32, 0.0f32); w * h];
        if w >= 3 && h >= 3 {
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let p = |dx: usize, dy: usize| image.get(x + dx - 1, y + dy - 1) as f64;
                    let gx =
                        (p(2, 0) + 2.0 * p(2, 1) + p(2, 2)) - (p(0, 0) + 2.0 * p(0, 1) + p(0, 2));
                    let gy =
                        (p(0, 2) + 2.0 * p(1, 2) + p(2, 2)) - (p(0, 0) + 2.0 * p(1, 0) + p(2, 0));
                    mag[y * w + x] = ((gx * gx + gy * gy).sqrt() / 4.0) as f32;
                    grad[y * w + x] = (gx as f32, gy as f32);
                }
            }
        }
        let sample_mag = |u: f64, v: f64| -> f64 {
            let uc = u.clamp(0.0, (w - 1) as f64);
            let vc = v.clamp(0.0, (h - 1) as f64);
            let x0 = uc.floor() as usize;
            let y0 = vc.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = uc - x0 as f64;
            let fy = vc - y0 as f64;
            let at = |x: usize, y: usize| mag[y * w + x] as f64;
            let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
            let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
            top * (1.0 - fy) + bottom * fy
        };
        let mut mask2 = vec![false; width2 * height2];
        for y in 0..h {
            for x in 0..w {
                let m = mag[y * w + x] as f64;
                if m < edge_threshold {
                    continue;
                }
                let (gx, gy) = grad[y * w + x];
                let norm = ((gx * gx + gy * gy) as f64).sqrt();
                let (du, dv) = if norm > 1e-9 {
                    (gx as f64 / norm, gy as f64 / norm)
                } else {
                    (0.0, 0.0)
                };
                let before = sample_mag(x as f64 - du, y as f64 - dv);
                let after = sample_mag(x as f64 + du, y as f64 + dv);
                let denom = before - 2.0 * m + after;
                let delta = if denom.abs() > 1e-9 {
                    ((before - after) / (2.0 * denom)).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                let eu = ((x as f64 + delta * du) * 2.0).round() as i64;
                let ev = ((y as f64 + delta * dv) * 2.0).round() as i64;
                let eu = eu.clamp(0, width2 as i64 - 1) as usize;
                let ev = ev.clamp(0, height2 as i64 - 1) as usize;
                mask2[ev * width2 + eu] = true;
            }
        }
        let dist = squared_distance_transform(&mask2, width2, height2)
            .into_iter()
            .map(|d2| (d2.sqrt() * 0.5).min(CHAMFER_CLAMP_PX))
            .collect();
        EdgeDistanceField {
            width2,
            height2,
            dist,
        }
    }

    /// Nearest-cell distance lookup, clamped to the image border.
    pub fn nearest(&self, u: f64, v: f64) -> f32 {
        let x = ((u * 2.0).round() as i64).clamp(0, self.width2 as i64 - 1) as usize;
        let y = ((v * 2.0).round() as i64).clamp(0, self.height2 as i64 - 1) as usize;
        self.dist[y * self.width2 + x]
    }

    /// Bilinear distance lookup, clamped to the image border.
    pub fn sample(&self, u: f64, v: f64) -> f32 {
        let uc = (u * 2.0).clamp(0.0, (self.width2 - 1) as f64);
        let vc = (v * 2.0).clamp(0.0, (self.height2 - 1) as f64);
        let x0 = uc.floor() as usize;
        let y0 = vc.floor() as usize;
        let x1 = (x0 + 1).min(self.width2 - 1);
        let y1 = (y0 + 1).min(self.height2 - 1);
        let fx = (uc - x0 as f64) as f32;
        let fy = (vc - y0 as f64) as f32;
        let at = |x: usize, y: usize| self.dist[y * self.width2 + x];
        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
        let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

const DT_INF: f32 = 1.0e12;

/// Two-pass exact Euclidean squared distance transform (row scan of the
/// lower envelope of parabolas, then column scan).
fn squared_distance_transform(mask: &[bool], width: usize, height: usize) -> Vec<f32> {
    let mut grid: Vec<f32> = mask
        .iter()
        .map(|&edge| if edge { 0.0 } else { DT_INF })
        .collect();
    let n = width.max(height);
    let mut f = vec![0.0f32; n];
    let mut d = vec![0.0f32; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f32; n + 1];
    for row in 0..height {
        let offset = row * width;
        f[..width].copy_from_slice(&grid[offset..offset + width]);
        dt_1d(&f[..width], &mut d, &mut v, &mut z);
        grid[offset..offset + width].copy_from_slice(&d[..width]);
    }
    for col in 0..width {
        for row in 0..height {
            f[row] = grid[row * width + col];
        }
        dt_1d(&f[..height], &mut d, &mut v, &mut z);
        for row in 0..height {
            grid[row * width + col] = d[row];
        }
    }
    grid
}

/// One-dimensional squared distance transform of sampled function `f`.
fn dt_1d(f: &[f32], d: &mut [f32], v: &mut [usize], z: &mut [f32]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -DT_INF;
    z[1] = DT_INF;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f32) - (f[p] + (p * p) as f32))
                / (2 * (q - p)) as f32;
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = DT_INF;
                break;
            }
        }
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f32 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f32 - p as f32;
        d[q] = dq * dq + f[p];
    }
}

/// Samples every model segment at `spacing_mm` intervals (endpoints
/// included).
fn sample_model(model: &PlanarModel, spacing_mm: f64) -> Vec<Vector2<f64>> {
    let mut samples = Vec::new();
    for (a, b) in model.segments() {
        let len = (b - a).norm();
        let count = (len / spacing_mm).ceil().max(1.0) as usize;
        for i in 0..=count {
            samples.push(a + (b - a) * (i as f64 / count as f64));
        }
    }
    samples
}

/// World point of a model sample under (rotation, position).
#[inline]
fn model_point(
    rotation: &RotationMatrix,
    position: &Vector3<f64>,
    sample: &Vector2<f64>,
) -> Vector3<f64> {
    position + rotation.matrix() * Vector3::new(sample.x, sample.y, 0.0)
}

/// Estimates image scale (px per mm) around the model center.
fn px_per_mm(
    camera: &CameraModel,
    rotation: &RotationMatrix,
    position: &Vector3<f64>,
    use_shift: bool,
) -> f64 {
    let center = camera.project_point(position, use_shift);
    let dx = camera.project_point(&model_point(rotation, position, &Vector2::new(10.0, 0.0)), use_shift);
    let dy = camera.project_point(&model_point(rotation, position, &Vector2::new(0.0, 10.0)), use_shift);
    let mut best: f64 = 0.0;
    if let Ok((u0, v0)) = center {
        for d in [dx, dy].into_iter().flatten() {
            let px = ((d.0 - u0).powi(2) + (d.1 - v0).powi(2)).sqrt() / 10.0;
            best = best.max(px);
        }
    }
    if best > 1e-6 {
        best
    } else {
        0.5
    }
}

/// Projects the model's edge segments and rasterizes them 1 px wide.
///
/// `rotation` is the full model-to-camera rotation (yaw already applied).
/// Fails with an out-of-view error when not a single sample lands inside
/// the image.
pub fn render_model_projection(
    model: &PlanarModel,
    camera: &CameraModel,
    rotation: &RotationMatrix,
    position: &Vector3<f64>,
    use_shift: bool,
) -> Result<GrayImage> {
    model.validate()?;
    let scale = px_per_mm(camera, rotation, position, use_shift);
    let spacing_mm = 0.5 / scale;
    let mut image = GrayImage::new(camera.width, camera.height, 0);
    let mut any = false;
    for sample in sample_model(model, spacing_mm) {
        let point = model_point(rotation, position, &sample);
        if let Ok((u, v)) = camera.project_point(&point, use_shift) {
            let x = u.round() as i64;
            let y = v.round() as i64;
            if x >= 0 && y >= 0 && (x as usize) < image.width() && (y as usize) < image.height() {
                image.set(x as usize, y as usize, 255);
                any = true;
            }
        }
    }
    if !any {
        let theta = (position.y.powi(2) + position.z.powi(2))
            .sqrt()
            .atan2(position.x);
        return Err(Error::OutOfFieldOfView {
            theta_deg: theta.to_degrees(),
        });
    }
    Ok(image)
}

/// Exact chamfer score of one pose: (similarity, mean clamped distance).
fn score_pose(
    dt: &EdgeDistanceField,
    camera: &CameraModel,
    samples: &[Vector2<f64>],
    rotation: &RotationMatrix,
    position: &Vector3<f64>,
    use_shift: bool,
) -> (f64, f64) {
    let mut matched = 0usize;
    let mut total_d = 0.0f64;
    for sample in samples {
        let point = model_point(rotation, position, sample);
        let d = match camera.project_point(&point, use_shift) {
            Ok((u, v)) => dt.sample(u, v) as f64,
            Err(_) => CHAMFER_CLAMP_PX as f64,
        };
        if d <= CHAMFER_MATCH_PX {
            matched += 1;
        }
        total_d += d;
    }
    let n = samples.len().max(1) as f64;
    (matched as f64 / n, total_d / n)
}

/// Public exact re-scoring helper: similarity of `model` at the given
/// full rotation and position against `image`'s edges.
pub fn pose_similarity(
    image: &GrayImage,
    model: &PlanarModel,
    camera: &CameraModel,
    rotation: &RotationMatrix,
    position: &Vector3<f64>,
    use_shift: bool,
) -> Result<f64> {
    model.validate()?;
    let dt = EdgeDistanceField::new(image, DEFAULT_EDGE_THRESHOLD);
    let scale = px_per_mm(camera, rotation, position, use_shift);
    let samples = sample_model(model, 0.5 / scale);
    Ok(score_pose(&dt, camera, &samples, rotation, position, use_shift).0)
}

/// Running argmax with the deterministic tie-break chain: similarity
/// (desc), mean distance (asc), then lexicographic (X, Y, Z, yaw)
/// ascending — the result does not depend on grid visit order.
struct BestPose {
    similarity: f64,
    mean_d: f64,
    position: Vector3<f64>,
    yaw_deg: f64,
}

impl BestPose {
    fn new() -> Self {
        BestPose {
            similarity: -1.0,
            mean_d: f64::INFINITY,
            position: Vector3::zeros(),
            yaw_deg: 0.0,
        }
    }

    fn offer(&mut self, similarity: f64, mean_d: f64, position: Vector3<f64>, yaw_deg: f64) {
        let wins = if similarity != self.similarity {
            similarity > self.similarity
        } else if (mean_d - self.mean_d).abs() > 1e-12 {
            mean_d < self.mean_d
        } else {
            let candidate = [position.x, position.y, position.z, yaw_deg];
            let held = [self.position.x, self.position.y, self.position.z, self.yaw_deg];
            candidate < held
        };
        if wins {
            self.similarity = similarity;
            self.mean_d = mean_d;
            self.position = position;
            self.yaw_deg = yaw_deg;
        }
    }
}

/// Symmetric value ladder `center + k*step` for `k in -n..=n`.
fn axis_values(center: f64, extent: f64, step: f64) -> Vec<f64> {
    let n = (extent / step).round() as i64;
    (-n..=n).map(|k| center + k as f64 * step).collect()
}

/// Coarse stage: linearized projection around octant centers.
///
/// For each yaw candidate and each octant of the position grid, the
/// projection of every sample is linearized (numeric Jacobian, 1 mm
/// deltas) around the octant center; grid cells then cost six
/// multiply-adds and a nearest-distance lookup per sample.
#[allow(clippy::too_many_arguments)]
fn coarse_stage(
    dt: &EdgeDistanceField,
    camera: &CameraModel,
    samples: &[Vector2<f64>],
    base: &RotationMatrix,
    prior: &PoseHypothesis,
    grid: &SearchGrid,
    use_shift: bool,
    best: &mut BestPose,
) {
    let yaws = axis_values(prior.yaw_deg, grid.yaw_extent_deg, grid.yaw_step_deg);
    let xs = axis_values(prior.position_mm.x, grid.position_extent_mm, grid.position_step_mm);
    let ys = axis_values(prior.position_mm.y, grid.position_extent_mm, grid.position_step_mm);
    let zs = axis_values(prior.position_mm.z, grid.position_extent_mm, grid.position_step_mm);
    let half = grid.position_extent_mm / 2.0;
    for &yaw in &yaws {
        let rotation = RotationMatrix::about_z(yaw.to_radians()).compose(base);
        // Octant centers at +-extent/2 in each axis.
        for octant in 0..8 {
            let sign = |bit: usize| if octant >> bit & 1 == 1 { 1.0 } else { -1.0 };
            let center = prior.position_mm + Vector3::new(sign(0) * half, sign(1) * half, sign(2) * half);
            // Linearization: u(t) ~= u0 + J (t - center).
            let mut u0 = Vec::with_capacity(samples.len());
            let mut jac = Vec::with_capacity(samples.len());
            let delta = 1.0;
            let project = |position: &Vector3<f64>, sample: &Vector2<f64>| {
                camera
                    .project_point(&model_point(&rotation, position, sample), use_shift)
                    .unwrap_or((f64::NAN, f64::NAN))
            };
            for sample in samples {
                let p0 = project(&center, sample);
                let px = project(&(center + Vector3::new(delta, 0.0, 0.0)), sample);
                let py = project(&(center + Vector3::new(0.0, delta, 0.0)), sample);
                let pz = project(&(center + Vector3::new(0.0, 0.0, delta)), sample);
                u0.push(p0);
                jac.push([
                    ((px.0 - p0.0) / delta, (px.1 - p0.1) / delta),
                    ((py.0 - p0.0) / delta, (py.1 - p0.1) / delta),
                    ((pz.0 - p0.0) / delta, (pz.1 - p0.1) / delta),
                ]);
            }
            let in_octant = |value: f64, c: f64| value >= c - half - 1e-9 && value <= c + half + 1e-9;
            for &x in xs.iter().filter(|&&x| in_octant(x, center.x)) {
                let dx = x - center.x;
                for &y in ys.iter().filter(|&&y| in_octant(y, center.y)) {
                    let dy = y - center.y;
                    for &z in zs.iter().filter(|&&z| in_octant(z, center.z)) {
                        let dz = z - center.z;
                        let mut matched = 0usize;
                        let mut total_d = 0.0f64;
                        for (p0, j) in u0.iter().zip(&jac) {
                            let u = p0.0 + j[0].0 * dx + j[1].0 * dy + j[2].0 * dz;
                            let v = p0.1 + j[0].1 * dx + j[1].1 * dy + j[2].1 * dz;
                            let d = if u.is_finite() && v.is_finite() {
                                dt.sample(u, v) as f64
                            } else {
                                CHAMFER_CLAMP_PX as f64
                            };
                            if d <= CHAMFER_MATCH_PX {
                                matched += 1;
                            }
                            total_d += d;
                        }
                        let n = samples.len().max(1) as f64;
                        best.offer(matched as f64 / n, total_d / n, Vector3::new(x, y, z), yaw);
                    }
                }
            }
        }
    }
}

/// Exact grid sweep: position box around `position_center`, yaw ladder
/// around `yaw_center`. A zero yaw extent keeps yaw fixed at the center.
#[allow(clippy::too_many_arguments)]
fn sweep_stage(
    dt: &EdgeDistanceField,
    camera: &CameraModel,
    samples: &[Vector2<f64>],
    base: &RotationMatrix,
    position_center: &Vector3<f64>,
    position_extent: f64,
    position_step: f64,
    yaw_center: f64,
    yaw_extent: f64,
    yaw_step: f64,
    use_shift: bool,
) -> BestPose {
    let mut best = BestPose::new();
    let yaws = if yaw_extent > 0.0 {
        axis_values(yaw_center, yaw_extent, yaw_step)
    } else {
        vec![yaw_center]
    };
    let rotations: Vec<(f64, RotationMatrix)> = yaws
        .iter()
        .map(|&yaw| (yaw, RotationMatrix::about_z(yaw.to_radians()).compose(base)))
        .collect();
    let xs = axis_values(position_center.x, position_extent, position_step);
    let ys = axis_values(position_center.y, position_extent, position_step);
    let zs = axis_values(position_center.z, position_extent, position_step);
    for &x in &xs {
        for &y in &ys {
            for &z in &zs {
                let position = Vector3::new(x, y, z);
                for (yaw, rotation) in &rotations {
                    let (similarity, mean_d) =
                        score_pose(dt, camera, samples, rotation, &position, use_shift);
                    best.offer(similarity, mean_d, position, *yaw);
                }
            }
        }
    }
    best
}

/// Full position + yaw search; see the module docs for the staging.
///
/// `base` is the model-to-camera rotation at zero yaw; the search sweeps
/// yaw around `prior.yaw_deg` on top of it.
pub fn search_planar_pose(
    image: &GrayImage,
    model: &PlanarModel,
    camera: &CameraModel,
    base: &RotationMatrix,
    prior: &PoseHypothesis,
    grid: &SearchGrid,
    use_shift: bool,
) -> Result<PoseHypothesis> {
    model.validate()?;
    grid.validate()?;
    let dt = EdgeDistanceField::new(image, DEFAULT_EDGE_THRESHOLD);
    let base_rotation =
        RotationMatrix::about_z(prior.yaw_deg.to_radians()).compose(base);
    let scale = px_per_mm(camera, &base_rotation, &prior.position_mm, use_shift);

    let mut best = BestPose::new();
    let coarse_samples = sample_model(model, 4.0 / scale);
    coarse_stage(&dt, camera, &coarse_samples, base, prior, grid, use_shift, &mut best);

    // Yaw trades off against the position quantization residue on
    // near-tied score plateaus, so an early-stage yaw winner is
    // unreliable and can drag the position center with it.  Both
    // refinement sweeps therefore re-sweep yaw over the full range
    // (around the prior), and the half-step stages keep position boxes
    // wide enough to cover the drift of the stage before them.
    let mid_samples = sample_model(model, 1.0 / scale);
    let step_b = grid.position_step_mm / 2.0;
    let yaw_b = grid.yaw_step_deg / 2.0;
    let best = sweep_stage(
        &dt,
        camera,
        &mid_samples,
        base,
        &best.position,
        grid.position_step_mm * 1.5,
        step_b,
        prior.yaw_deg,
        grid.yaw_extent_deg,
        yaw_b,
        use_shift,
    );

    // This stage only needs to localize position to a couple of final
    // steps — the fine polish re-derives yaw at full resolution — so it
    // keeps the half-step yaw ladder.
    let step_c = grid.position_step_mm / 4.0;
    let yaw_c = grid.yaw_step_deg / 4.0;
    let best = sweep_stage(
        &dt,
        camera,
        &mid_samples,
        base,
        &best.position,
        step_b * 2.0,
        step_c,
        prior.yaw_deg,
        grid.yaw_extent_deg,
        yaw_b,
        use_shift,
    );

    // Exact polish at fine sampling: a small position box around the
    // mid-sampled winner, but the full yaw range again — mid-sampled
    // yaw ranking is too noisy at the final step to pin a window on.
    let fine_samples = sample_model(model, 0.5 / scale);
    let best = sweep_stage(
        &dt,
        camera,
        &fine_samples,
        base,
        &best.position,
        step_c * 2.0,
        step_c,
        prior.yaw_deg,
        grid.yaw_extent_deg,
        yaw_c,
        use_shift,
    );

    // Exact final score at fine sampling.
    let rotation = RotationMatrix::about_z(best.yaw_deg.to_radians()).compose(base);
    let (similarity, _) = score_pose(&dt, camera, &fine_samples, &rotation, &best.position, use_shift);
    let result = PoseHypothesis {
        position_mm: best.position,
        yaw_deg: best.yaw_deg,
        similarity,
    };
    if similarity < grid.detect_threshold {
        return Err(Error::NotDetected {
            best_similarity: similarity,
        });
    }
    Ok(result)
}

/// Position-only search with the full rotation frozen.
pub fn search_position_only(
    image: &GrayImage,
    model: &PlanarModel,
    camera: &CameraModel,
    rotation: &RotationMatrix,
    prior_position: &Vector3<f64>,
    grid: &SearchGrid,
    use_shift: bool,
) -> Result<PoseHypothesis> {
    let frozen = SearchGrid {
        yaw_extent_deg: 0.0,
        ..*grid
    };
    let prior = PoseHypothesis::at(*prior_position, 0.0);
    search_planar_pose(image, model, camera, rotation, &prior, &frozen, use_shift)
}
