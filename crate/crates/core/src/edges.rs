//! Edge extraction inside predicted panorama regions.
//!
//! The line-direction search never scans a whole panorama: the pallet pose
//! estimate predicts where each edge of interest must appear, and only
//! those rectangular regions are searched.  A [`PredictedRegion`] is the
//! axis-aligned bounding box of the projected 3-D edge endpoints (over the
//! family of candidate attitudes the search must cover), dilated by a
//! margin; it also remembers the projected pixel length of the nominal
//! edge, which later normalizes Hough vote counts into score ratios.
//!
//! Edges are 3x3 Sobel responses.  Gradients are normalized by the kernel
//! weight sum (4) so the threshold is in intensity units: a hard step of
//! height `s` produces a magnitude of about `s`.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::panorama::{PanoramaImage, PanoramaSpec};

/// Default Sobel magnitude threshold (intensity units, 0-255 scale).
pub const DEFAULT_EDGE_THRESHOLD: f64 = 40.0;

/// Default region dilation margin, pixels.
pub const DEFAULT_REGION_MARGIN_PX: usize = 8;

/// A rectangular search window in panorama pixels (inclusive bounds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedRegion {
    pub u_min: usize,
    pub u_max: usize,
    pub v_min: usize,
    pub v_max: usize,
    /// Projected pixel length of the nominal edge; the ideal number of edge
    /// pixels a fully visible line contributes.
    pub expected_line_height: f64,
}

impl PredictedRegion {
    /// Builds the region for one 3-D edge.
    ///
    /// `nominal` is the edge's endpoint pair (camera frame, millimetres)
    /// under the nominal attitude; `variants` are the same endpoints under
    /// every extreme attitude the downstream search must cover.  All
    /// projections are boxed, dilated by `margin_px` and clamped to the
    /// panorama; an empty intersection is [`Error::RegionOutOfPanorama`].
    pub fn from_edge(
        spec: &PanoramaSpec,
        nominal: (Vector3<f64>, Vector3<f64>),
        variants: &[(Vector3<f64>, Vector3<f64>)],
        margin_px: usize,
    ) -> Result<Self> {
        let project = |p: &Vector3<f64>| spec.ray_to_pixel(p);
        let n0 = project(&nominal.0)?;
        let n1 = project(&nominal.1)?;
        let expected = ((n1.u - n0.u).powi(2) + (n1.v - n0.v).powi(2)).sqrt();

        let mut u_min = f64::INFINITY;
        let mut u_max = f64::NEG_INFINITY;
        let mut v_min = f64::INFINITY;
        let mut v_max = f64::NEG_INFINITY;
        for (a, b) in std::iter::once(&nominal).chain(variants.iter()) {
            for p in [a, b] {
                let c = project(p)?;
                if c.at_pole {
                    return Err(Error::RegionOutOfPanorama);
                }
                u_min = u_min.min(c.u);
                u_max = u_max.max(c.u);
                v_min = v_min.min(c.v);
                v_max = v_max.max(c.v);
            }
        }
        let m = margin_px as f64;
        let width = spec.width() as f64;
        let height = spec.height() as f64;
        let u_lo = (u_min - m).max(0.0);
        let u_hi = (u_max + m).min(width - 1.0);
        let v_lo = (v_min - m).max(0.0);
        let v_hi = (v_max + m).min(height - 1.0);
        if u_lo > u_hi || v_lo > v_hi {
            return Err(Error::RegionOutOfPanorama);
        }
        Ok(PredictedRegion {
            u_min: u_lo.floor() as usize,
            u_max: u_hi.ceil() as usize,
            v_min: v_lo.floor() as usize,
            v_max: v_hi.ceil() as usize,
            expected_line_height: expected,
        })
    }

    pub fn width(&self) -> usize {
        self.u_max - self.u_min + 1
    }

    pub fn height(&self) -> usize {
        self.v_max - self.v_min + 1
    }
}

/// Sobel edges of one panorama region: per-pixel gradient magnitude and
/// orientation plus the thresholded edge mask.
#[derive(Debug, Clone)]
pub struct EdgeMap {
    spec: PanoramaSpec,
    region: PredictedRegion,
    magnitude: Vec<f32>,
    orientation: Vec<f32>,
    mask: Vec<bool>,
    edge_pixels: Vec<(u32, u32)>,
}

impl EdgeMap {
    pub fn region(&self) -> &PredictedRegion {
        &self.region
    }

    pub fn spec(&self) -> &PanoramaSpec {
        &self.spec
    }

    /// Panorama coordinates of all edge pixels in the region.
    pub fn edge_pixels(&self) -> &[(u32, u32)] {
        &self.edge_pixels
    }

    fn index(&self, u: usize, v: usize) -> usize {
        (v - self.region.v_min) * self.region.width() + (u - self.region.u_min)
    }

    /// Gradient magnitude at panorama pixel `(u, v)` (inside the region).
    pub fn magnitude(&self, u: usize, v: usize) -> f32 {
        self.magnitude[self.index(u, v)]
    }

    /// Gradient orientation at `(u, v)`, radians (`atan2(gy, gx)`).
    pub fn orientation(&self, u: usize, v: usize) -> f32 {
        self.orientation[self.index(u, v)]
    }

    /// Whether `(u, v)` is an edge pixel.
    pub fn is_edge(&self, u: usize, v: usize) -> bool {
        self.mask[self.index(u, v)]
    }
}

/// Runs 3x3 Sobel over `region` of the panorama and thresholds the result.
///
/// A pixel needs its full 3x3 neighbourhood inside the panorama and
/// unmasked to produce a gradient; masked or border pixels yield no edges.
/// The threshold compares against `|g| / 4` so it is in intensity units.
pub fn detect_edges(
    pano: &PanoramaImage,
    region: &PredictedRegion,
    threshold: f64,
) -> Result<EdgeMap> {
    let spec = pano.spec();
    if region.u_max >= spec.width() || region.v_max >= spec.height() {
        return Err(Error::OutOfBounds {
            x: region.u_max as i64,
            y: region.v_max as i64,
            width: spec.width(),
            height: spec.height(),
        });
    }
    let rw = region.width();
    let rh = region.height();
    let mut magnitude = vec![0.0f32; rw * rh];
    let mut orientation = vec![0.0f32; rw * rh];
    let mut mask = vec![false; rw * rh];
    let mut edge_pixels = Vec::new();
    for v in region.v_min..=region.v_max {
        if v == 0 || v + 1 >= spec.height() {
            continue;
        }
        for u in region.u_min..=region.u_max {
            if u == 0 || u + 1 >= spec.width() {
                continue;
            }
            let mut valid = true;
            'neigh: for dv in 0..3 {
                for du in 0..3 {
                    if !pano.is_valid(u + du - 1, v + dv - 1) {
                        valid = false;
                        break 'neigh;
                    }
                }
            }
            if !valid {
                continue;
            }
            let p = |du: usize, dv: usize| pano.intensity(u + du - 1, v + dv - 1) as f64;
            let gx = (p(2, 0) + 2.0 * p(2, 1) + p(2, 2)) - (p(0, 0) + 2.0 * p(0, 1) + p(0, 2));
            let gy = (p(0, 2) + 2.0 * p(1, 2) + p(2, 2)) - (p(0, 0) + 2.0 * p(1, 0) + p(2, 0));
            let mag = (gx * gx + gy * gy).sqrt() / 4.0;
            let idx = (v - region.v_min) * rw + (u - region.u_min);
            magnitude[idx] = mag as f32;
            orientation[idx] = gy.atan2(gx) as f32;
            if mag >= threshold {
                mask[idx] = true;
                edge_pixels.push((u as u32, v as u32));
            }
        }
    }
    Ok(EdgeMap {
        spec: spec.clone(),
        region: *region,
        magnitude,
        orientation,
        mask,
        edge_pixels,
    })
}

/// Sobel edge mask over a whole raw image (used by the planar pose search).
///
/// Returns a row-major boolean mask; border pixels are never edges.
pub fn sobel_mask(image: &crate::raster::GrayImage, threshold: f64) -> Vec<bool> {
    let w = image.width();
    let h = image.height();
    let mut mask = vec![false; w * h];
    if w < 3 || h < 3 {
        return mask;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: usize, dy: usize| image.get(x + dx - 1, y + dy - 1) as f64;
            let gx = (p(2, 0) + 2.0 * p(2, 1) + p(2, 2)) - (p(0, 0) + 2.0 * p(0, 1) + p(0, 2));
            let gy = (p(0, 2) + 2.0 * p(1, 2) + p(2, 2)) - (p(0, 0) + 2.0 * p(1, 0) + p(2, 0));
            if (gx * gx + gy * gy).sqrt() / 4.0 >= threshold {
                mask[y * w + x] = true;
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AffineParams, CameraModel};
    use crate::panorama::{build_panorama, PanoAxis, PanoramaSpec};
    use crate::raster::GrayImage;
    use approx::assert_relative_eq;

    fn wide_camera() -> CameraModel {
        CameraModel::new(
            640,
            640,
            320.0,
            320.0,
            vec![0.0, 170.0],
            AffineParams::default(),
            100.0,
            None,
        )
        .unwrap()
    }

    /// A panorama holding a synthetic vertical step edge at a known column.
    fn step_panorama() -> (PanoramaImage, usize) {
        let camera = wide_camera();
        let spec = PanoramaSpec::for_axis(PanoAxis::Z, 512).unwrap();
        // Paint the source image so the panorama shows a step in longitude:
        // intensity depends on the sign of the ray's east component.
        let mut image = GrayImage::new(640, 640, 30);
        for y in 0..640 {
            for x in 0..640 {
                let ray = camera.pixel_to_ray(x as f64, y as f64, false);
                if let Ok(r) = ray {
                    if r.direction.y < 0.0 {
                        image.set(x, y, 200);
                    }
                }
            }
        }
        let pano = build_panorama(&image, &camera, &spec);
        // Camera -Y is east of the reference +X: the step sits at the
        // longitude-zero column, u = W/2 - 0.5 -> between columns 255/256.
        (pano, 256)
    }

    #[test]
    fn step_edge_is_detected_at_the_expected_column() {
        let (pano, step_u) = step_panorama();
        let region = PredictedRegion {
            u_min: step_u - 20,
            u_max: step_u + 20,
            v_min: 100,
            v_max: 210,
            expected_line_height: 111.0,
        };
        let edges = detect_edges(&pano, &region, DEFAULT_EDGE_THRESHOLD).unwrap();
        assert!(!edges.edge_pixels().is_empty());
        for &(u, _) in edges.edge_pixels() {
            assert!(
                (u as i64 - step_u as i64).abs() <= 1,
                "edge pixel at column {u}, expected near {step_u}"
            );
        }
        // A full-height step: every row in the region contributes.
        let rows: std::collections::BTreeSet<u32> =
            edges.edge_pixels().iter().map(|&(_, v)| v).collect();
        assert!(rows.len() >= region.height() - 4);
        // Horizontal step: gradient points along +-x.
        let (u, v) = edges.edge_pixels()[0];
        let orient = edges.orientation(u as usize, v as usize) as f64;
        assert!(orient.sin().abs() < 0.1, "gradient should be horizontal, got {orient}");
    }

    #[test]
    fn threshold_filters_weak_edges() {
        let (pano, step_u) = step_panorama();
        let region = PredictedRegion {
            u_min: step_u - 20,
            u_max: step_u + 20,
            v_min: 100,
            v_max: 210,
            expected_line_height: 111.0,
        };
        // The step is 170 intensity units tall; a 200-unit threshold kills it.
        let edges = detect_edges(&pano, &region, 200.0).unwrap();
        assert!(edges.edge_pixels().is_empty());
    }

    #[test]
    fn region_construction_boxes_projected_endpoints() {
        let spec = PanoramaSpec::for_axis(PanoAxis::Z, 2048).unwrap();
        // A vertical edge 1 m ahead, 0.5 m of extent.
        let p0 = nalgebra::Vector3::new(1000.0, 0.0, -250.0);
        let p1 = nalgebra::Vector3::new(1000.0, 0.0, 250.0);
        let region = PredictedRegion::from_edge(&spec, (p0, p1), &[], 8).unwrap();
        let c0 = spec.ray_to_pixel(&p0).unwrap();
        let c1 = spec.ray_to_pixel(&p1).unwrap();
        assert!(region.u_min as f64 <= c0.u - 7.0 && region.u_max as f64 >= c0.u + 7.0);
        assert!(region.v_min as f64 <= c1.v.min(c0.v));
        assert!(region.v_max as f64 >= c1.v.max(c0.v));
        let expected = ((c1.u - c0.u).powi(2) + (c1.v - c0.v).powi(2)).sqrt();
        assert_relative_eq!(region.expected_line_height, expected, epsilon = 1e-12);
    }

    #[test]
    fn region_fully_behind_the_camera_is_rejected() {
        let spec = PanoramaSpec::for_axis(PanoAxis::Z, 2048).unwrap();
        let p0 = nalgebra::Vector3::new(0.0, 0.0, -500.0);
        let p1 = nalgebra::Vector3::new(0.0, 0.0, 500.0);
        // Both endpoints on the panorama axis: poles, no usable region.
        assert!(matches!(
            PredictedRegion::from_edge(&spec, (p0, p1), &[], 8),
            Err(Error::RegionOutOfPanorama)
        ));
    }
}
