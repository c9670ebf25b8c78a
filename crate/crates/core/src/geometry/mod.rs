//! Frames, rotations and rigid transforms.
//!
//! Every 3-D quantity in this crate lives in one of four named frames:
//!
//! * **camera** — origin at the reference viewpoint of the lens, `X` along
//!   the optical axis (pointing into the scene), `Z` up, `Y` completing a
//!   right-handed triad (pointing left when looking along `+X`).
//! * **fork** — origin at the midpoint of the two fork tips, `Y` along the
//!   tip-to-tip line, `Z` normal to the fork top surface, `X = Y x Z`
//!   pointing forward along the tines.
//! * **pallet** — origin at the centre of the pallet front face, `X` into
//!   the pallet (insertion direction), `Y` lateral, `Z` up.
//! * **panel** — origin at the centre of the calibration panel, `X` toward
//!   the panel's front lateral edge, `Y` lateral, `Z` normal to the panel.
//!
//! Lengths are millimetres and internal angles radians; public interfaces
//! that speak degrees carry a `_deg` suffix.  Rotations are orthonormal
//! right-handed matrices validated on construction, and rigid transforms
//! carry their source and destination frame so that cross-frame mistakes
//! surface as [`Error::FrameMismatch`] instead of silently wrong numbers.

mod camera;

pub use camera::{AffineParams, CameraIntrinsicsFile, CameraModel, PixelRay, ViewpointShiftCurve};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Degrees-to-radians conversion.
#[inline]
pub fn deg_to_rad(deg: f64) -> f64 {
    deg * std::f64::consts::PI / 180.0
}

/// Radians-to-degrees conversion.
#[inline]
pub fn rad_to_deg(rad: f64) -> f64 {
    rad * 180.0 / std::f64::consts::PI
}

/// Named coordinate frames used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Camera,
    Fork,
    Pallet,
    Panel,
}

impl std::fmt::Display for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Frame::Camera => "camera",
            Frame::Fork => "fork",
            Frame::Pallet => "pallet",
            Frame::Panel => "panel",
        };
        f.write_str(name)
    }
}

/// A direction vector guaranteed to have unit norm (within 1e-9).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec3(Vector3<f64>);

impl UnitVec3 {
    /// Wraps `v` after checking it is already unit length (tolerance 1e-9).
    pub fn try_new(v: Vector3<f64>) -> Result<Self> {
        if (v.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("vector norm {} is not 1", v.norm())));
        }
        Ok(UnitVec3(v))
    }

    /// Normalizes `v`; fails on (near-)zero input.
    pub fn normalize(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if n < 1e-12 {
            return Err(Error::config("cannot normalize a zero vector"));
        }
        Ok(UnitVec3(v / n))
    }

    pub fn x_axis() -> Self {
        UnitVec3(Vector3::x())
    }

    pub fn y_axis() -> Self {
        UnitVec3(Vector3::y())
    }

    pub fn z_axis() -> Self {
        UnitVec3(Vector3::z())
    }

    /// The wrapped vector.
    #[inline]
    pub fn vec(&self) -> Vector3<f64> {
        self.0
    }

    /// Flips the direction.
    pub fn flipped(&self) -> Self {
        UnitVec3(-self.0)
    }

    /// Angle to another unit vector, radians in `[0, pi]`.
    pub fn angle_to(&self, other: &UnitVec3) -> f64 {
        self.0.dot(&other.0).clamp(-1.0, 1.0).acos()
    }
}

impl std::ops::Deref for UnitVec3 {
    type Target = Vector3<f64>;

    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

/// Which local axes a pair of measured directions corresponds to when
/// assembling a rotation with [`rotation_from_axes`].
///
/// The third axis is always the remaining one, oriented so the triad is
/// right-handed (`X x Y = Z` and cyclic).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisPair {
    /// Primary is local `X`, secondary local `Y` (third: `Z`).
    XY,
    /// Primary is local `Y`, secondary local `Z` (third: `X`).
    YZ,
    /// Primary is local `Z`, secondary local `X` (third: `Y`).
    ZX,
}

/// A 3x3 rotation matrix, orthonormal with determinant +1.
///
/// Every constructor validates orthonormality to 1e-9, so a value of this
/// type can be trusted not to shear or scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Validates and wraps `m`.
    pub fn try_new(m: Matrix3<f64>) -> Result<Self> {
        let residual = (m.transpose() * m - Matrix3::identity()).abs().max();
        if residual > 1e-9 {
            return Err(Error::config(format!(
                "matrix is not orthonormal (residual {residual:.2e})"
            )));
        }
        if m.determinant() < 0.0 {
            return Err(Error::config("matrix is a reflection, not a rotation"));
        }
        Ok(RotationMatrix(m))
    }

    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Rotation of `angle_rad` about an arbitrary unit axis (right-hand rule).
    pub fn from_axis_angle(axis: &UnitVec3, angle_rad: f64) -> Self {
        let m = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_unchecked(axis.vec()),
            angle_rad,
        );
        RotationMatrix(m.into_inner())
    }

    /// Rotation about the `X` axis.
    pub fn about_x(angle_rad: f64) -> Self {
        Self::from_axis_angle(&UnitVec3::x_axis(), angle_rad)
    }

    /// Rotation about the `Y` axis.
    pub fn about_y(angle_rad: f64) -> Self {
        Self::from_axis_angle(&UnitVec3::y_axis(), angle_rad)
    }

    /// Rotation about the `Z` axis.
    pub fn about_z(angle_rad: f64) -> Self {
        Self::from_axis_angle(&UnitVec3::z_axis(), angle_rad)
    }

    /// Builds a rotation from three orthonormal columns.
    pub fn from_columns(x: Vector3<f64>, y: Vector3<f64>, z: Vector3<f64>) -> Result<Self> {
        Self::try_new(Matrix3::from_columns(&[x, y, z]))
    }

    /// The underlying matrix.
    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Applies the rotation to a vector.
    #[inline]
    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Composition `self * other` (apply `other` first).
    pub fn compose(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * other.0)
    }

    /// The inverse (= transpose) rotation.
    pub fn inverse(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }

    /// Column `i` as a vector.
    pub fn column(&self, i: usize) -> Vector3<f64> {
        self.0.column(i).into_owned()
    }

    /// The rotation angle, radians, separating `self` from `other`.
    pub fn angle_to(&self, other: &RotationMatrix) -> f64 {
        let rel = self.0.transpose() * other.0;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// Row-major 3x3 array, as used by the calibration file format.
    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    /// Builds from a row-major 3x3 array, validating orthonormality.
    pub fn from_rows(rows: &[[f64; 3]; 3]) -> Result<Self> {
        Self::try_new(Matrix3::new(
            rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
            rows[2][1], rows[2][2],
        ))
    }
}

/// Builds a rotation from two measured axis directions.
///
/// `primary` is adopted exactly as the local axis named first by `labels`;
/// `secondary` is re-orthogonalized against it (Gram-Schmidt) and becomes
/// the second named axis; the third axis completes the right-handed triad.
/// The columns of the result are the local axes expressed in the frame the
/// input directions were measured in.
///
/// Fails with [`Error::DegenerateAxes`] when the inputs are within 1 degree
/// of parallel or anti-parallel.
pub fn rotation_from_axes(
    primary: &UnitVec3,
    secondary: &UnitVec3,
    labels: AxisPair,
) -> Result<RotationMatrix> {
    let cos_angle = primary.vec().dot(&secondary.vec());
    if cos_angle.abs() > deg_to_rad(1.0).cos() {
        return Err(Error::DegenerateAxes);
    }
    let p = primary.vec();
    let s = (secondary.vec() - cos_angle * p).normalize();
    let t = p.cross(&s);
    match labels {
        AxisPair::XY => RotationMatrix::from_columns(p, s, t),
        AxisPair::YZ => RotationMatrix::from_columns(t, p, s),
        AxisPair::ZX => RotationMatrix::from_columns(s, t, p),
    }
}

/// A point coordinate tied to the frame it is expressed in (millimetres).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramedPoint {
    pub frame: Frame,
    pub coords: Vector3<f64>,
}

impl FramedPoint {
    pub fn new(frame: Frame, coords: Vector3<f64>) -> Self {
        FramedPoint { frame, coords }
    }
}

/// A direction tied to the frame it is expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramedDirection {
    pub frame: Frame,
    pub direction: UnitVec3,
}

impl FramedDirection {
    pub fn new(frame: Frame, direction: UnitVec3) -> Self {
        FramedDirection { frame, direction }
    }
}

/// A rigid transform `p_to = R * p_from + t` between two named frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    /// Translation, millimetres, expressed in the destination frame.
    pub translation: Vector3<f64>,
    pub from: Frame,
    pub to: Frame,
}

impl RigidTransform {
    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>, from: Frame, to: Frame) -> Self {
        RigidTransform { rotation, translation, from, to }
    }

    /// Identity transform between a frame and itself.
    pub fn identity(frame: Frame) -> Self {
        Self::new(RotationMatrix::identity(), Vector3::zeros(), frame, frame)
    }

    /// Applies the transform to raw point coordinates (no frame check).
    #[inline]
    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }

    /// Rotates raw direction coordinates (no frame check, no translation).
    #[inline]
    pub fn apply_direction(&self, d: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(d)
    }

    /// Transforms a framed point, checking that it lives in `self.from`.
    pub fn transform_point(&self, p: &FramedPoint) -> Result<FramedPoint> {
        if p.frame != self.from {
            return Err(Error::FrameMismatch { expected: self.from, found: p.frame });
        }
        Ok(FramedPoint::new(self.to, self.apply_point(&p.coords)))
    }

    /// Transforms a framed direction, checking that it lives in `self.from`.
    pub fn transform_direction(&self, d: &FramedDirection) -> Result<FramedDirection> {
        if d.frame != self.from {
            return Err(Error::FrameMismatch { expected: self.from, found: d.frame });
        }
        let rotated = UnitVec3::normalize(self.apply_direction(&d.direction.vec()))?;
        Ok(FramedDirection::new(self.to, rotated))
    }

    /// Composition: `other` after `self` (`self.from -> other.to`).
    pub fn then(&self, other: &RigidTransform) -> Result<RigidTransform> {
        if self.to != other.from {
            return Err(Error::FrameMismatch { expected: other.from, found: self.to });
        }
        Ok(RigidTransform::new(
            other.rotation.compose(&self.rotation),
            other.rotation.apply(&self.translation) + other.translation,
            self.from,
            other.to,
        ))
    }

    /// The inverse transform (destination and source frames swapped).
    pub fn inverse(&self) -> RigidTransform {
        let rot_inv = self.rotation.inverse();
        RigidTransform::new(rot_inv, -rot_inv.apply(&self.translation), self.to, self.from)
    }
}

/// Rotates `v` by `angle_rad` about unit axis `axis` (Rodrigues formula).
pub fn rotate_about_axis(v: &Vector3<f64>, axis: &UnitVec3, angle_rad: f64) -> Vector3<f64> {
    let k = axis.vec();
    let (sin, cos) = angle_rad.sin_cos();
    v * cos + k.cross(v) * sin + k * (k.dot(v)) * (1.0 - cos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotation_constructors_are_orthonormal() {
        let r = RotationMatrix::from_axis_angle(
            &UnitVec3::normalize(Vector3::new(0.3, -0.5, 0.81)).unwrap(),
            1.234,
        );
        let residual = (r.matrix().transpose() * r.matrix() - Matrix3::identity()).abs().max();
        assert!(residual < 1e-12);
        assert_relative_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_rejects_sheared_matrix() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 0.01;
        assert!(RotationMatrix::try_new(m).is_err());
    }

    #[test]
    fn axes_snapped_to_orthogonal_when_input_is_89_degrees() {
        // Primary (1,0,0) with secondary tilted 1 deg out of orthogonal:
        // primary column exact, secondary re-orthogonalized back to (0,1,0).
        let primary = UnitVec3::x_axis();
        let tilt = deg_to_rad(1.0);
        let secondary =
            UnitVec3::normalize(Vector3::new(tilt.sin(), tilt.cos(), 0.0)).unwrap();
        let r = rotation_from_axes(&primary, &secondary, AxisPair::XY).unwrap();
        assert_relative_eq!(r.column(0), Vector3::x(), epsilon = 1e-12);
        assert_relative_eq!(r.column(1), Vector3::y(), epsilon = 1e-12);
        assert_relative_eq!(r.column(2), Vector3::z(), epsilon = 1e-12);
    }

    #[test]
    fn axes_identity_case() {
        // Primary (0,0,1) as local Z and secondary (1,0,0) as local X give
        // the identity rotation; the inferred third axis is (0,1,0).
        let r = rotation_from_axes(&UnitVec3::z_axis(), &UnitVec3::x_axis(), AxisPair::ZX)
            .unwrap();
        assert_relative_eq!(*r.matrix(), Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(r.column(1), Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn axes_within_one_degree_are_degenerate() {
        let primary = UnitVec3::x_axis();
        let near = UnitVec3::normalize(Vector3::new(1.0, 0.005, 0.0)).unwrap();
        assert!(matches!(
            rotation_from_axes(&primary, &near, AxisPair::XY),
            Err(Error::DegenerateAxes)
        ));
    }

    #[test]
    fn transform_round_trip_and_frame_tags() {
        let t = RigidTransform::new(
            RotationMatrix::about_z(0.4),
            Vector3::new(10.0, -20.0, 5.0),
            Frame::Camera,
            Frame::Fork,
        );
        let p = FramedPoint::new(Frame::Camera, Vector3::new(3.0, 4.0, 5.0));
        let q = t.transform_point(&p).unwrap();
        assert_eq!(q.frame, Frame::Fork);
        let back = t.inverse().transform_point(&q).unwrap();
        assert_relative_eq!(back.coords, p.coords, epsilon = 1e-12);

        let wrong = FramedPoint::new(Frame::Pallet, p.coords);
        assert!(matches!(
            t.transform_point(&wrong),
            Err(Error::FrameMismatch { expected: Frame::Camera, found: Frame::Pallet })
        ));
    }

    #[test]
    fn compose_matches_sequential_application() {
        let a = RigidTransform::new(
            RotationMatrix::about_x(0.3),
            Vector3::new(1.0, 2.0, 3.0),
            Frame::Pallet,
            Frame::Fork,
        );
        let b = RigidTransform::new(
            RotationMatrix::about_z(-0.7),
            Vector3::new(-4.0, 0.5, 2.0),
            Frame::Fork,
            Frame::Camera,
        );
        let ab = a.then(&b).unwrap();
        assert_eq!((ab.from, ab.to), (Frame::Pallet, Frame::Camera));
        let p = Vector3::new(0.2, -1.0, 7.0);
        assert_relative_eq!(
            ab.apply_point(&p),
            b.apply_point(&a.apply_point(&p)),
            epsilon = 1e-12
        );
        assert!(b.then(&a).is_err());
    }

    #[test]
    fn rodrigues_quarter_turn() {
        let axis = UnitVec3::y_axis();
        let v = Vector3::z();
        let rotated = rotate_about_axis(&v, &axis, std::f64::consts::FRAC_PI_2);
        assert_relative_eq!(rotated, Vector3::x(), epsilon = 1e-12);
    }
}
