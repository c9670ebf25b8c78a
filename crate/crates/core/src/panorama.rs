//! Equirectangular panoramas about a chosen pseudo-vertical axis.
//!
//! A panorama re-grids the fisheye image so that 3-D lines parallel to a
//! chosen axis `a` become (pieces of) pixel columns: treating `a` as the
//! pole of a sphere, pixel `(u, v)` corresponds to longitude and latitude
//!
//! ```text
//! phi    = 2*pi*(u + 0.5)/W - pi          (longitude, west to east)
//! lambda = pi/2 - pi*(v + 0.5)/H          (latitude, +pole at v = -0.5)
//! ray    = sin(lambda)*a + cos(lambda)*(cos(phi)*b + sin(phi)*(a x b))
//! ```
//!
//! where `b` is the reference direction mapped to longitude zero (the
//! centre column).  `W = 2*H` so that both angular axes share one scale.
//! A 3-D line parallel to `a` projects onto a single meridian: every point
//! `p0 + t*a` keeps the same component perpendicular to `a`, hence the same
//! longitude.  That property is what the line-direction search exploits.
//!
//! Rays that leave the camera's calibrated field of view are masked rather
//! than extrapolated, and the pole itself (where longitude degenerates) is
//! flagged so callers can treat it explicitly.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, UnitVec3};
use crate::raster::GrayImage;

/// Default panorama width, pixels (height is always half the width).
pub const DEFAULT_PANO_WIDTH: usize = 2048;

/// Panorama pixel coordinates produced by [`PanoramaSpec::ray_to_pixel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PanoCoord {
    pub u: f64,
    pub v: f64,
    /// Set when the ray is within 1e-12 of the pole, where longitude is
    /// undefined; `u` is 0 by convention in that case.
    pub at_pole: bool,
}

/// Geometry of an equirectangular panorama: pole axis, reference direction
/// and pixel dimensions (`width == 2 * height`).
#[derive(Debug, Clone, PartialEq)]
pub struct PanoramaSpec {
    axis: UnitVec3,
    reference: UnitVec3,
    east: Vector3<f64>,
    width: usize,
    height: usize,
}

/// Which standard panorama a pipeline stage wants, by pole axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanoAxis {
    /// Pole along camera `X` (optical axis); reference `-Z` (downward).
    X,
    /// Pole along camera `Y` (lateral); reference `X` (forward).
    Y,
    /// Pole along camera `Z` (vertical); reference `X` (forward).
    Z,
}

impl PanoramaSpec {
    /// Builds a spec; `reference` must be perpendicular to `axis` and
    /// `width` must equal `2 * height` with `height >= 2`.
    pub fn new(axis: UnitVec3, reference: UnitVec3, width: usize) -> Result<Self> {
        if axis.vec().dot(&reference.vec()).abs() > 1e-9 {
            return Err(Error::config("panorama reference must be perpendicular to the axis"));
        }
        if width < 4 || width % 2 != 0 {
            return Err(Error::config("panorama width must be an even number >= 4"));
        }
        let east = axis.vec().cross(&reference.vec());
        Ok(PanoramaSpec { axis, reference, east, width, height: width / 2 })
    }

    /// Standard panorama for `axis` at the given width.
    pub fn for_axis(axis: PanoAxis, width: usize) -> Result<Self> {
        match axis {
            PanoAxis::X => Self::new(UnitVec3::x_axis(), UnitVec3::z_axis().flipped(), width),
            PanoAxis::Y => Self::new(UnitVec3::y_axis(), UnitVec3::x_axis(), width),
            PanoAxis::Z => Self::new(UnitVec3::z_axis(), UnitVec3::x_axis(), width),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// The pole axis `a`.
    pub fn axis(&self) -> &UnitVec3 {
        &self.axis
    }

    /// The longitude-zero reference direction `b`.
    pub fn reference(&self) -> &UnitVec3 {
        &self.reference
    }

    /// Camera-frame unit ray for panorama coordinates `(u, v)`.
    ///
    /// Accepts fractional coordinates; `u` wraps modulo the width.
    pub fn pixel_to_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let two_pi = 2.0 * std::f64::consts::PI;
        let phi = two_pi * (u + 0.5) / self.width as f64 - std::f64::consts::PI;
        let lambda = std::f64::consts::FRAC_PI_2 - std::f64::consts::PI * (v + 0.5) / self.height as f64;
        let (sin_lat, cos_lat) = lambda.sin_cos();
        let (sin_lon, cos_lon) = phi.sin_cos();
        sin_lat * self.axis.vec() + cos_lat * (cos_lon * self.reference.vec() + sin_lon * self.east)
    }

    /// Panorama coordinates of a camera-frame ray (need not be unit length).
    pub fn ray_to_pixel(&self, ray: &Vector3<f64>) -> Result<PanoCoord> {
        let n = ray.norm();
        if n < 1e-12 {
            return Err(Error::config("cannot map a zero ray to the panorama"));
        }
        let r = ray / n;
        let polar = r.dot(&self.axis.vec()).clamp(-1.0, 1.0);
        let lambda = polar.asin();
        let v = (std::f64::consts::FRAC_PI_2 - lambda) * self.height as f64
            / std::f64::consts::PI
            - 0.5;
        if polar.abs() > 1.0 - 1e-12 {
            return Ok(PanoCoord { u: 0.0, v, at_pole: true });
        }
        let phi = r.dot(&self.east).atan2(r.dot(&self.reference.vec()));
        let u = (phi + std::f64::consts::PI) * self.width as f64
            / (2.0 * std::f64::consts::PI)
            - 0.5;
        Ok(PanoCoord { u, v, at_pole: false })
    }
}

/// A resampled panorama with a per-pixel validity mask.
#[derive(Debug, Clone)]
pub struct PanoramaImage {
    spec: PanoramaSpec,
    pixels: Vec<u8>,
    mask: Vec<bool>,
}

impl PanoramaImage {
    pub fn spec(&self) -> &PanoramaSpec {
        &self.spec
    }

    #[inline]
    pub fn intensity(&self, u: usize, v: usize) -> u8 {
        self.pixels[v * self.spec.width + u]
    }

    /// Whether panorama pixel `(u, v)` maps into the camera field of view.
    #[inline]
    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.mask[v * self.spec.width + u]
    }

    /// The panorama as a plain image (masked pixels are zero).
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_raw(self.spec.width, self.spec.height, self.pixels.clone())
            .expect("panorama buffer is consistent")
    }
}

/// Resamples the fisheye image into the panorama described by `spec`.
///
/// Every panorama pixel's ray is projected through the camera model and the
/// source image is sampled bilinearly (nearest-neighbour inside the outer
/// half-pixel border).  Rays outside the calibrated field of view, or
/// landing outside the source image, are masked and left at intensity 0.
pub fn build_panorama(
    image: &GrayImage,
    camera: &CameraModel,
    spec: &PanoramaSpec,
) -> PanoramaImage {
    let width = spec.width;
    let height = spec.height;
    let mut pixels = vec![0u8; width * height];
    let mut mask = vec![false; width * height];
    pixels
        .par_chunks_mut(width)
        .zip(mask.par_chunks_mut(width))
        .enumerate()
        .for_each(|(v, (row, mask_row))| {
            for u in 0..width {
                let ray = spec.pixel_to_ray(u as f64, v as f64);
                let dir = match UnitVec3::normalize(ray) {
                    Ok(d) => d,
                    Err(_) => continue,
                };
                let Ok((sx, sy)) = camera.project_ray_to_pixel(&dir) else {
                    continue;
                };
                if let Some(value) = image.sample_bilinear(sx, sy) {
                    row[u] = value.round().clamp(0.0, 255.0) as u8;
                    mask_row[u] = true;
                }
            }
        });
    PanoramaImage { spec: spec.clone(), pixels, mask }
}
