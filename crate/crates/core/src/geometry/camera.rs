//! Polynomial fisheye camera model.
//!
//! The model maps a ray's incidence angle `theta` (measured from the
//! optical axis, camera `+X`) to an image radius through a polynomial
//!
//! ```text
//! rho(theta) = k0 + k1*theta + k2*theta^2 + ...   [pixels, theta radians]
//! ```
//!
//! followed by an affine sensor transform `(c, d, e)` about the principal
//! point `(cx, cy)`:
//!
//! ```text
//! u = cx + c*a + d*b        a = rho * cos(azimuth)
//! v = cy + e*a +   b        b = rho * sin(azimuth)
//! ```
//!
//! Image `+u` corresponds to camera `-Y` and image `+v` to camera `-Z`
//! (right and down when looking along the optical axis with `Z` up).  The
//! forward map is closed-form; the inverse solves `rho(theta) = rho` by
//! bisection to 1e-9 rad, which is valid because the polynomial is required
//! to be strictly increasing over the calibrated field of view.
//!
//! Wide-angle lenses are not single-viewpoint devices: the effective
//! viewpoint slides forward along the optical axis as the incidence angle
//! grows.  [`ViewpointShiftCurve`] captures that as a sampled
//! `(angle, offset)` polyline, anchored at zero offset for the 45-degree
//! reference angle, interpolated linearly and clamped outside its sampled
//! range.  [`CameraModel::pixel_to_ray`] reports the per-ray origin offset
//! so that callers can trace metrically correct rays when it matters.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{deg_to_rad, rad_to_deg, UnitVec3};

/// Reference incidence angle at which the viewpoint offset is zero, degrees.
pub const SHIFT_REFERENCE_DEG: f64 = 45.0;

/// Axial viewpoint offset as a function of incidence angle.
///
/// Samples are `(incidence angle deg, forward offset mm)` with strictly
/// increasing angles.  Evaluation interpolates linearly between samples and
/// clamps to the first/last offset outside the sampled range.  The curve
/// must evaluate to 0 mm at the 45-degree reference angle.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewpointShiftCurve {
    samples: Vec<(f64, f64)>,
}

impl ViewpointShiftCurve {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("viewpoint shift curve has no samples"));
        }
        for pair in samples.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::config("shift curve angles must be strictly increasing"));
            }
        }
        if samples.iter().any(|(a, o)| !a.is_finite() || !o.is_finite()) {
            return Err(Error::config("shift curve contains non-finite values"));
        }
        let curve = ViewpointShiftCurve { samples };
        let at_ref = curve.offset_mm(deg_to_rad(SHIFT_REFERENCE_DEG));
        if at_ref.abs() > 1e-9 {
            return Err(Error::config(format!(
                "shift curve must be 0 mm at the {SHIFT_REFERENCE_DEG} deg reference (got {at_ref} mm)"
            )));
        }
        Ok(curve)
    }

    /// The sampled polyline.
    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Forward offset of the viewpoint, millimetres, for a ray at incidence
    /// angle `theta_rad`.
    pub fn offset_mm(&self, theta_rad: f64) -> f64 {
        let deg = rad_to_deg(theta_rad);
        let s = &self.samples;
        if deg <= s[0].0 {
            return s[0].1;
        }
        if deg >= s[s.len() - 1].0 {
            return s[s.len() - 1].1;
        }
        let i = s.partition_point(|(a, _)| *a <= deg) - 1;
        let (a0, o0) = s[i];
        let (a1, o1) = s[i + 1];
        o0 + (o1 - o0) * (deg - a0) / (a1 - a0)
    }
}

/// Affine sensor-plane parameters; identity when `c = 1, d = e = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl Default for AffineParams {
    fn default() -> Self {
        AffineParams { c: 1.0, d: 0.0, e: 0.0 }
    }
}

/// A ray recovered from a pixel: unit direction plus the origin offset of
/// the effective viewpoint (zero unless shift compensation was requested).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRay {
    /// Unit direction in the camera frame.
    pub direction: UnitVec3,
    /// Offset of the ray origin from the reference viewpoint, millimetres.
    pub origin_offset: Vector3<f64>,
}

/// Calibrated fisheye camera: image size, principal point, radial
/// polynomial, affine skew and optional viewpoint-shift curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub cx: f64,
    pub cy: f64,
    poly: Vec<f64>,
    pub affine: AffineParams,
    theta_max_rad: f64,
    shift: Option<ViewpointShiftCurve>,
    /// Radius of the image circle, `rho(theta_max)`.
    rho_max: f64,
}

impl CameraModel {
    /// Builds and validates a model.
    ///
    /// Fails with [`Error::NonInvertibleModel`] when the radial polynomial
    /// is not strictly increasing over `[0, theta_max]`, because the pixel
    /// to ray map would then be ambiguous.
    pub fn new(
        width: usize,
        height: usize,
        cx: f64,
        cy: f64,
        poly: Vec<f64>,
        affine: AffineParams,
        theta_max_deg: f64,
        shift: Option<ViewpointShiftCurve>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("image dimensions must be positive"));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::config("principal point must be finite"));
        }
        if poly.is_empty() || poly.iter().any(|k| !k.is_finite()) {
            return Err(Error::config("radial polynomial must be non-empty and finite"));
        }
        if !(0.0..180.0).contains(&theta_max_deg) || theta_max_deg <= 0.0 {
            return Err(Error::config("theta_max_deg must lie in (0, 180)"));
        }
        let det = affine.c - affine.d * affine.e;
        if det.abs() < 1e-12 {
            return Err(Error::config("affine parameters are singular"));
        }
        let theta_max_rad = deg_to_rad(theta_max_deg);
        let model = CameraModel {
            width,
            height,
            cx,
            cy,
            poly,
            affine,
            theta_max_rad,
            shift,
            rho_max: 0.0,
        };
        // Strict monotonicity probe over the calibrated range.
        let steps = 2048;
        let mut prev = model.eval_poly(0.0);
        if prev < 0.0 {
            return Err(Error::NonInvertibleModel);
        }
        for i in 1..=steps {
            let theta = theta_max_rad * i as f64 / steps as f64;
            let rho = model.eval_poly(theta);
            if rho <= prev {
                return Err(Error::NonInvertibleModel);
            }
            prev = rho;
        }
        Ok(CameraModel { rho_max: prev, ..model })
    }

    /// Maximum calibrated incidence angle, radians.
    pub fn theta_max_rad(&self) -> f64 {
        self.theta_max_rad
    }

    /// Maximum calibrated incidence angle, degrees.
    pub fn theta_max_deg(&self) -> f64 {
        rad_to_deg(self.theta_max_rad)
    }

    /// Radial polynomial coefficients `k0..kn`.
    pub fn poly(&self) -> &[f64] {
        &self.poly
    }

    /// The viewpoint-shift curve, if the calibration provides one.
    pub fn shift_curve(&self) -> Option<&ViewpointShiftCurve> {
        self.shift.as_ref()
    }

    fn eval_poly(&self, theta: f64) -> f64 {
        let mut rho = 0.0;
        for &k in self.poly.iter().rev() {
            rho = rho * theta + k;
        }
        rho
    }

    /// Axial viewpoint offset for incidence angle `theta_rad`, millimetres
    /// (zero when the calibration carries no shift curve).
    pub fn shift_offset_mm(&self, theta_rad: f64) -> f64 {
        self.shift.as_ref().map_or(0.0, |c| c.offset_mm(theta_rad))
    }

    /// Projects a camera-frame ray direction to pixel coordinates.
    ///
    /// Fails with [`Error::OutOfFieldOfView`] when the incidence angle
    /// exceeds the calibrated maximum.
    pub fn project_ray_to_pixel(&self, ray: &UnitVec3) -> Result<(f64, f64)> {
        let r = ray.vec();
        let lateral = (r.y * r.y + r.z * r.z).sqrt();
        let theta = lateral.atan2(r.x);
        if theta > self.theta_max_rad {
            return Err(Error::OutOfFieldOfView { theta_deg: rad_to_deg(theta) });
        }
        let rho = self.eval_poly(theta);
        let (a, b) = if lateral < 1e-15 {
            (0.0, 0.0)
        } else {
            // Image +u is camera -Y, image +v is camera -Z.
            (rho * (-r.y) / lateral, rho * (-r.z) / lateral)
        };
        let u = self.cx + self.affine.c * a + self.affine.d * b;
        let v = self.cy + self.affine.e * a + b;
        Ok((u, v))
    }

    /// Recovers the ray observed by pixel `(u, v)`.
    ///
    /// The direction inverts [`Self::project_ray_to_pixel`]; when
    /// `use_shift` is set, `origin_offset` carries the axial viewpoint
    /// offset for the recovered incidence angle, otherwise it is zero.
    pub fn pixel_to_ray(&self, u: f64, v: f64, use_shift: bool) -> Result<PixelRay> {
        if u < -0.5 || v < -0.5 || u >= self.width as f64 - 0.5 || v >= self.height as f64 - 0.5 {
            return Err(Error::OutOfImage { u, v });
        }
        let du = u - self.cx;
        let dv = v - self.cy;
        let det = self.affine.c - self.affine.d * self.affine.e;
        let a = (du - self.affine.d * dv) / det;
        let b = (self.affine.c * dv - self.affine.e * du) / det;
        let rho = (a * a + b * b).sqrt();
        if rho > self.rho_max {
            return Err(Error::OutOfFieldOfView {
                theta_deg: rad_to_deg(self.theta_max_rad),
            });
        }
        let theta = self.invert_radius(rho);
        let azimuth = b.atan2(a);
        let sin_t = theta.sin();
        let direction = UnitVec3::normalize(Vector3::new(
            theta.cos(),
            -sin_t * azimuth.cos(),
            -sin_t * azimuth.sin(),
        ))?;
        let origin_offset = if use_shift {
            Vector3::new(self.shift_offset_mm(theta), 0.0, 0.0)
        } else {
            Vector3::zeros()
        };
        Ok(PixelRay { direction, origin_offset })
    }

    /// Solves `rho(theta) = rho` by bisection on `[0, theta_max]`.
    fn invert_radius(&self, rho: f64) -> f64 {
        let mut lo = 0.0f64;
        let mut hi = self.theta_max_rad;
        if rho <= self.eval_poly(lo) {
            return lo;
        }
        while hi - lo > 1e-9 {
            let mid = 0.5 * (lo + hi);
            if self.eval_poly(mid) < rho {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Projects a scene point (camera frame, millimetres).
    ///
    /// With `use_shift` the projection honours the viewpoint shift by one
    /// fixed-point step: the incidence angle seen from the reference
    /// viewpoint selects an origin offset, and the point is projected from
    /// that offset origin.
    pub fn project_point(&self, point: &Vector3<f64>, use_shift: bool) -> Result<(f64, f64)> {
        let nominal = UnitVec3::normalize(*point)
            .map_err(|_| Error::config("cannot project the camera origin"))?;
        if !use_shift || self.shift.is_none() {
            return self.project_ray_to_pixel(&nominal);
        }
        let r = nominal.vec();
        let theta0 = (r.y * r.y + r.z * r.z).sqrt().atan2(r.x);
        let offset = Vector3::new(self.shift_offset_mm(theta0), 0.0, 0.0);
        let shifted = UnitVec3::normalize(point - offset)
            .map_err(|_| Error::config("scene point coincides with the shifted viewpoint"))?;
        self.project_ray_to_pixel(&shifted)
    }

    /// Reads a model from an intrinsics JSON file.
    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Parses a model from intrinsics JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CameraIntrinsicsFile = serde_json::from_str(text)?;
        file.into_model()
    }

    /// Serializes the model to intrinsics JSON text.
    pub fn to_json(&self) -> String {
        let file = CameraIntrinsicsFile {
            width: self.width,
            height: self.height,
            cx: self.cx,
            cy: self.cy,
            poly: self.poly.clone(),
            affine: Some(self.affine),
            theta_max_deg: self.theta_max_deg(),
            shift_curve: self
                .shift
                .as_ref()
                .map(|c| c.samples().iter().map(|&(a, o)| [a, o]).collect()),
        };
        serde_json::to_string_pretty(&file).expect("intrinsics serialize")
    }

    /// Writes the model to an intrinsics JSON file.
    pub fn to_json_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// On-disk intrinsics schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraIntrinsicsFile {
    pub width: usize,
    pub height: usize,
    pub cx: f64,
    pub cy: f64,
    pub poly: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<AffineParams>,
    pub theta_max_deg: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_curve: Option<Vec<[f64; 2]>>,
}

impl CameraIntrinsicsFile {
    pub fn into_model(self) -> Result<CameraModel> {
        let shift = match self.shift_curve {
            Some(samples) => Some(ViewpointShiftCurve::new(
                samples.into_iter().map(|[a, o]| (a, o)).collect(),
            )?),
            None => None,
        };
        CameraModel::new(
            self.width,
            self.height,
            self.cx,
            self.cy,
            self.poly,
            self.affine.unwrap_or_default(),
            self.theta_max_deg,
            shift,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Equidistant test model: rho = 500 * theta, 1920x1920, centred.
    fn equidistant() -> CameraModel {
        CameraModel::new(
            1920,
            1920,
            960.0,
            960.0,
            vec![0.0, 500.0],
            AffineParams::default(),
            100.0,
            None,
        )
        .unwrap()
    }

    #[test]
    fn axis_ray_hits_principal_point() {
        let cam = equidistant();
        let (u, v) = cam.project_ray_to_pixel(&UnitVec3::x_axis()).unwrap();
        assert_relative_eq!(u, 960.0, epsilon = 1e-9);
        assert_relative_eq!(v, 960.0, epsilon = 1e-9);
    }

    #[test]
    fn forty_five_degree_ray_lands_at_radius_392_699() {
        let cam = equidistant();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        // 45 deg incidence in the image-u azimuth: camera -Y.
        let (u, v) = cam
            .project_ray_to_pixel(&UnitVec3::normalize(Vector3::new(s, -s, 0.0)).unwrap())
            .unwrap();
        assert_relative_eq!(u, 960.0 + 392.699, epsilon = 1e-3);
        assert_relative_eq!(v, 960.0, epsilon = 1e-9);
        // Same incidence in the image-v azimuth: camera -Z.
        let (u, v) = cam
            .project_ray_to_pixel(&UnitVec3::normalize(Vector3::new(s, 0.0, -s)).unwrap())
            .unwrap();
        assert_relative_eq!(u, 960.0, epsilon = 1e-9);
        assert_relative_eq!(v, 960.0 + 392.699, epsilon = 1e-3);
    }

    #[test]
    fn beyond_field_of_view_is_rejected() {
        let cam = CameraModel::new(
            1920,
            1920,
            960.0,
            960.0,
            vec![0.0, 500.0],
            AffineParams::default(),
            90.0,
            None,
        )
        .unwrap();
        let ray = UnitVec3::normalize(Vector3::new(-0.1, 1.0, 0.0)).unwrap();
        match cam.project_ray_to_pixel(&ray) {
            Err(Error::OutOfFieldOfView { theta_deg }) => assert!(theta_deg > 90.0),
            other => panic!("expected OutOfFieldOfView, got {other:?}"),
        }
    }

    #[test]
    fn decreasing_polynomial_is_not_invertible() {
        let result = CameraModel::new(
            1920,
            1920,
            960.0,
            960.0,
            vec![0.0, 500.0, -400.0],
            AffineParams::default(),
            100.0,
            None,
        );
        assert!(matches!(result, Err(Error::NonInvertibleModel)));
    }

    #[test]
    fn projection_round_trip_is_tight() {
        // Mildly non-equidistant polynomial and non-trivial affine skew.
        let cam = CameraModel::new(
            1920,
            1920,
            955.0,
            962.0,
            vec![0.0, 520.0, 0.0, -18.0],
            AffineParams { c: 1.001, d: 2e-4, e: -3e-4 },
            95.0,
            None,
        )
        .unwrap();
        let mut worst = 0.0f64;
        for i in 0..200 {
            // Deterministic low-discrepancy sweep over the field of view.
            let theta = cam.theta_max_rad() * (i as f64 + 0.5) / 200.0;
            let azimuth = 2.399963 * i as f64; // golden-angle spiral
            let dir = UnitVec3::normalize(Vector3::new(
                theta.cos(),
                -theta.sin() * azimuth.cos(),
                -theta.sin() * azimuth.sin(),
            ))
            .unwrap();
            let (u, v) = cam.project_ray_to_pixel(&dir).unwrap();
            if !(0.0..cam.width as f64 - 1.0).contains(&u)
                || !(0.0..cam.height as f64 - 1.0).contains(&v)
            {
                continue;
            }
            let ray = cam.pixel_to_ray(u, v, false).unwrap();
            worst = worst.max(ray.direction.angle_to(&dir));
        }
        assert!(worst < 1e-6, "worst angular round-trip error {worst:.2e} rad");
    }

    #[test]
    fn shift_curve_interpolates_and_clamps() {
        let curve = ViewpointShiftCurve::new(vec![(45.0, 0.0), (80.0, 10.0)]).unwrap();
        assert_relative_eq!(curve.offset_mm(deg_to_rad(45.0)), 0.0, epsilon = 1e-12);
        assert_relative_eq!(curve.offset_mm(deg_to_rad(80.0)), 10.0, epsilon = 1e-12);
        assert_relative_eq!(curve.offset_mm(deg_to_rad(62.5)), 5.0, epsilon = 1e-12);
        // Clamped outside the sampled range.
        assert_relative_eq!(curve.offset_mm(deg_to_rad(30.0)), 0.0, epsilon = 1e-12);
        assert_relative_eq!(curve.offset_mm(deg_to_rad(89.0)), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn shift_curve_must_vanish_at_reference_angle() {
        assert!(ViewpointShiftCurve::new(vec![(45.0, 1.0), (80.0, 10.0)]).is_err());
        assert!(ViewpointShiftCurve::new(vec![(50.0, 2.0), (80.0, 10.0)]).is_err());
        // A curve starting past 45 deg is fine if it clamps to zero there.
        assert!(ViewpointShiftCurve::new(vec![(50.0, 0.0), (80.0, 10.0)]).is_ok());
    }

    #[test]
    fn pixel_at_80_degrees_reports_10_mm_offset() {
        let cam = CameraModel::new(
            1920,
            1920,
            960.0,
            960.0,
            vec![0.0, 500.0],
            AffineParams::default(),
            100.0,
            Some(ViewpointShiftCurve::new(vec![(45.0, 0.0), (80.0, 10.0)]).unwrap()),
        )
        .unwrap();
        let theta = deg_to_rad(80.0);
        let dir = UnitVec3::normalize(Vector3::new(theta.cos(), 0.0, -theta.sin())).unwrap();
        let (u, v) = cam.project_ray_to_pixel(&dir).unwrap();
        let ray = cam.pixel_to_ray(u, v, true).unwrap();
        assert_relative_eq!(ray.origin_offset, Vector3::new(10.0, 0.0, 0.0), epsilon = 1e-6);
        assert!(ray.direction.angle_to(&dir) < 1e-6);
        // Without shift compensation the offset is zero.
        let ray = cam.pixel_to_ray(u, v, false).unwrap();
        assert_relative_eq!(ray.origin_offset, Vector3::zeros(), epsilon = 1e-12);
    }

    #[test]
    fn intrinsics_json_round_trip() {
        let cam = CameraModel::new(
            1280,
            1024,
            640.5,
            512.25,
            vec![0.0, 430.0, 1.5],
            AffineParams { c: 0.999, d: 1e-4, e: -2e-4 },
            92.0,
            Some(ViewpointShiftCurve::new(vec![(45.0, 0.0), (80.0, 10.0)]).unwrap()),
        )
        .unwrap();
        let parsed = CameraModel::from_json(&cam.to_json()).unwrap();
        assert_eq!(parsed, cam);
    }

    #[test]
    fn minimal_intrinsics_json_defaults() {
        let cam = CameraModel::from_json(
            r#"{"width":1920,"height":1920,"cx":960,"cy":960,"poly":[0,500],"theta_max_deg":100}"#,
        )
        .unwrap();
        assert_eq!(cam.affine, AffineParams::default());
        assert!(cam.shift_curve().is_none());
        assert_relative_eq!(cam.shift_offset_mm(deg_to_rad(80.0)), 0.0, epsilon = 1e-12);
    }
}
