//! One-image camera-to-fork calibration from a reference panel.
//!
//! A flat rectangular panel is laid on the forks at a known placement:
//! its far short edge flush with the fork tips, centred between the
//! forks, so the panel centre sits a fixed offset behind the fork
//! origin.  One fisheye image of that panel fixes the full rigid
//! transform between the camera and the fork frame in three stages:
//!
//! 1. a planar pose search over position and yaw, starting from the
//!    level-mount guess of the panel attitude;
//! 2. orientation refinement from the panel's two edge pairs — the long
//!    edges (running along the forks) read in the forward-axis
//!    panorama, the short edges in the lateral-axis panorama — combined
//!    into a full rotation;
//! 3. a direct linear solve of the panel centre from the same edge
//!    measurements: each detected edge pins a plane through the
//!    viewpoint that the edge line must lie in, the short edges fixing
//!    forward distance and height, the long edges the lateral offset.
//!
//! The panel pose plus the placement offset give the fork origin and
//! axes in the camera frame; inverting that yields the camera-to-fork
//! transform every later measurement applies.
//!
//! Projection during the searches can honour the viewpoint shift of a
//! non-central fisheye.  Ignoring the shift biases the fitted panel
//! upward: the near short edge sits at grazing incidence where rays
//! leave a viewpoint several millimetres forward of the reference, the
//! far edge near the reference angle, and re-fitting both edge rays
//! from a single viewpoint tilts the solution toward the camera plane.
//! [`shift_error_prediction`] computes the first-order height bias for
//! a given camera and panel geometry.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::edges::{
    detect_edges, PredictedRegion, DEFAULT_EDGE_THRESHOLD, DEFAULT_REGION_MARGIN_PX,
};
use crate::error::{Error, Result};
use crate::geometry::{
    rotation_from_axes, AxisPair, CameraModel, Frame, RigidTransform, RotationMatrix, UnitVec3,
};
use crate::hough::{find_line_direction, HoughParams, LineDetection, RegionVote};
use crate::panorama::{build_panorama, PanoAxis, PanoramaSpec, DEFAULT_PANO_WIDTH};
use crate::pitch::{cone_variants, SEARCH_CONE_DEG};
use crate::pose_search::{
    pose_similarity, search_planar_pose, search_position_only, PlanarModel, PoseHypothesis,
    SearchGrid,
};
use crate::raster::GrayImage;

/// Calibration panel and its placement on the forks.
///
/// In the panel's model frame `x` runs across the forks, `y` along
/// them toward the tips, and the normal points up off the panel face.
/// `offset_mm` is the vector from the panel centre to the fork origin
/// in fork coordinates; the flush placement puts the fork origin at the
/// middle of the far short edge, so the offset's forward component
/// equals half the panel length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSpec {
    /// Side across the forks, mm (model `x`).
    pub width_mm: f64,
    /// Side along the forks, mm (model `y`).
    pub height_mm: f64,
    /// Panel centre to fork origin, fork frame, mm.
    pub offset_mm: [f64; 3],
}

impl Default for PanelSpec {
    fn default() -> Self {
        PanelSpec {
            width_mm: 900.0,
            height_mm: 1100.0,
            offset_mm: [550.0, 0.0, 0.0],
        }
    }
}

impl PanelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_mm > 0.0 && self.height_mm > 0.0) {
            return Err(Error::config("panel sides must be positive"));
        }
        if !self.offset_mm.iter().all(|c| c.is_finite()) {
            return Err(Error::config("panel offset must be finite"));
        }
        if (self.offset_mm[0] - self.height_mm / 2.0).abs() > 1e-6 {
            return Err(Error::config(
                "panel offset forward component must equal half the panel length (far edge flush with the fork tips)",
            ));
        }
        Ok(())
    }

    /// The panel face as a planar search model.
    pub fn face_model(&self) -> PlanarModel {
        PlanarModel::rectangle(self.width_mm, self.height_mm)
    }

    /// Placement offset as a fork-frame vector.
    pub fn offset_vector(&self) -> Vector3<f64> {
        Vector3::new(self.offset_mm[0], self.offset_mm[1], self.offset_mm[2])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: PanelSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Long-edge segments (along the forks), model frame.
    fn long_edges(&self) -> [(Vector3<f64>, Vector3<f64>); 2] {
        let hw = self.width_mm / 2.0;
        let hh = self.height_mm / 2.0;
        [
            (Vector3::new(-hw, -hh, 0.0), Vector3::new(-hw, hh, 0.0)),
            (Vector3::new(hw, -hh, 0.0), Vector3::new(hw, hh, 0.0)),
        ]
    }

    /// Short-edge segments (across the forks), model frame; near first.
    fn short_edges(&self) -> [(Vector3<f64>, Vector3<f64>); 2] {
        let hw = self.width_mm / 2.0;
        let hh = self.height_mm / 2.0;
        [
            (Vector3::new(-hw, -hh, 0.0), Vector3::new(hw, -hh, 0.0)),
            (Vector3::new(-hw, hh, 0.0), Vector3::new(hw, hh, 0.0)),
        ]
    }
}

/// Panel model axes in the fork frame for a flat, square placement.
///
/// Model `x` (across the forks) maps to fork `-y`, model `y` (along
/// the forks) to fork `x`, and the face normal to fork `z`.
pub fn panel_base_rotation() -> RotationMatrix {
    RotationMatrix::from_columns(
        Vector3::new(0.0, -1.0, 0.0),
        Vector3::new(1.0, 0.0, 0.0),
        Vector3::new(0.0, 0.0, 1.0),
    )
    .expect("orthonormal by construction")
}

/// Measures the panel's full orientation from its two edge pairs.
///
/// The long edges vote in the forward-axis panorama, the short edges in
/// the lateral-axis panorama; predicted regions and line signs follow
/// the coarse attitude, so the result is continuous with the guess.
/// The lateral (short-edge) direction anchors the frame and the
/// along-fork reading is orthogonalized against it.  An invalid pair
/// fails the estimate with the pair's score ratios.
pub fn estimate_panel_orientation(
    image: &GrayImage,
    camera: &CameraModel,
    panel: &PanelSpec,
    coarse_rotation: &RotationMatrix,
    coarse_position_mm: &Vector3<f64>,
) -> Result<RotationMatrix> {
    orientation_detections(image, camera, panel, coarse_rotation, coarse_position_mm)
        .map(|(rotation, _, _)| rotation)
}

/// [`estimate_panel_orientation`] keeping the raw pair detections, whose
/// fitted edge planes also carry position information.
fn orientation_detections(
    image: &GrayImage,
    camera: &CameraModel,
    panel: &PanelSpec,
    coarse_rotation: &RotationMatrix,
    coarse_position_mm: &Vector3<f64>,
) -> Result<(RotationMatrix, LineDetection, LineDetection)> {
    panel.validate()?;
    let long = edge_pair_detection(
        image,
        camera,
        coarse_rotation,
        coarse_position_mm,
        PanoAxis::X,
        &panel.long_edges(),
        1,
    )?;
    require_valid(&long)?;
    let short = edge_pair_detection(
        image,
        camera,
        coarse_rotation,
        coarse_position_mm,
        PanoAxis::Y,
        &panel.short_edges(),
        0,
    )?;
    require_valid(&short)?;
    let rotation = rotation_from_axes(&short.direction, &long.direction, AxisPair::XY)?;
    Ok((rotation, long, short))
}

fn require_valid(detection: &LineDetection) -> Result<()> {
    if detection.valid {
        Ok(())
    } else {
        Err(Error::LineNotFound {
            ratio_left: detection.left.ratio,
            ratio_right: detection.right.ratio,
        })
    }
}

/// Fraction of an edge's length trimmed off each end before region
/// prediction.
///
/// Near a panel corner the crossing edges of the other pair run through
/// any box that covers the corner, and their pixels would leak into the
/// vote and the plane fit with a one-sided pull.  Trimming both ends
/// keeps the region strictly between the corners; the trimmed edge
/// still spans hundreds of panorama rows, and the expected line height
/// shrinks with it, so score ratios keep their meaning.
const EDGE_INSET_FRACTION: f64 = 0.2;

/// Runs one edge pair's panorama line measurement.
fn edge_pair_detection(
    image: &GrayImage,
    camera: &CameraModel,
    rotation: &RotationMatrix,
    position_mm: &Vector3<f64>,
    axis: PanoAxis,
    segments: &[(Vector3<f64>, Vector3<f64>); 2],
    direction_column: usize,
) -> Result<LineDetection> {
    let pano_spec = PanoramaSpec::for_axis(axis, DEFAULT_PANO_WIDTH)?;
    let nominal = UnitVec3::normalize(rotation.column(direction_column))?;
    let project = |seg: &(Vector3<f64>, Vector3<f64>)| -> Result<PredictedRegion> {
        let inset = (seg.1 - seg.0) * EDGE_INSET_FRACTION;
        let a = position_mm + rotation.apply(&(seg.0 + inset));
        let b = position_mm + rotation.apply(&(seg.1 - inset));
        let variants = cone_variants(&a, &b, SEARCH_CONE_DEG)?;
        PredictedRegion::from_edge(&pano_spec, (a, b), &variants, DEFAULT_REGION_MARGIN_PX)
    };
    let region_a = project(&segments[0])?;
    let region_b = project(&segments[1])?;
    let pano = build_panorama(image, camera, &pano_spec);
    let left = RegionVote::from_edges(&detect_edges(&pano, &region_a, DEFAULT_EDGE_THRESHOLD)?);
    let right = RegionVote::from_edges(&detect_edges(&pano, &region_b, DEFAULT_EDGE_THRESHOLD)?);
    find_line_direction(nominal, &left, &right, &HoughParams::default())
}

/// One measured edge plane turned into a linear constraint on the
/// panel centre: `normal . center = rhs`.
struct EdgeConstraint {
    normal: Vector3<f64>,
    rhs: f64,
}

/// Builds the centre constraint of one edge from its fitted plane.
///
/// The measured normal's sign is arbitrary, so it is first aligned with
/// the coarse prediction.  With `compensate` set, the right-hand side
/// carries `s * normal.x`: the physical rays left viewpoints displaced
/// `s` along the optical axis at the edge's incidence angle, so the
/// measured (central) plane contains `p - s * x̂` rather than the edge
/// point `p` itself.
fn plane_constraint(
    camera: &CameraModel,
    rotation: &RotationMatrix,
    prior_center: &Vector3<f64>,
    measured_normal: &Vector3<f64>,
    midpoint_model: &Vector3<f64>,
    direction_model: &Vector3<f64>,
    compensate: bool,
) -> EdgeConstraint {
    let direction = rotation.apply(direction_model);
    let anchor = rotation.apply(midpoint_model);
    let predicted_point = prior_center + anchor;
    let expected_normal = direction.cross(&predicted_point);
    let mut normal = *measured_normal;
    if normal.dot(&expected_normal) < 0.0 {
        normal = -normal;
    }
    let mut rhs = -normal.dot(&anchor);
    if compensate {
        let theta = predicted_point
            .y
            .hypot(predicted_point.z)
            .atan2(predicted_point.x);
        rhs += camera.shift_offset_mm(theta) * normal.x;
    }
    EdgeConstraint { normal, rhs }
}

/// Panel centre from the four measured edge planes.
///
/// Each edge lies in a plane through the viewpoint, so with the
/// attitude known, `normal . (center + R * midpoint) = 0` is linear in
/// the centre.  The near and far short edges fix the forward and
/// height coordinates — the depth directions the long edges cannot
/// see, since displacing the panel along the forks leaves the long
/// edges' planes unchanged.  With the two long normals aligned to
/// their predicted orientations, their lateral components agree and
/// their height components oppose, so the sum of the two long-edge
/// constraints isolates the lateral coordinate.  Their difference — a
/// redundant height reading — is discarded deliberately: blending it
/// in would water down the short pair's depth information, not
/// sharpen it.
///
/// `None` when the three constraints are degenerate.
fn solve_panel_center(
    camera: &CameraModel,
    panel: &PanelSpec,
    rotation: &RotationMatrix,
    prior_center: &Vector3<f64>,
    long_planes: (Vector3<f64>, Vector3<f64>),
    short_planes: (Vector3<f64>, Vector3<f64>),
    compensate: bool,
) -> Option<Vector3<f64>> {
    let hw = panel.width_mm / 2.0;
    let hh = panel.height_mm / 2.0;
    let constraint = |normal: &Vector3<f64>, midpoint: Vector3<f64>, dir: Vector3<f64>| {
        plane_constraint(camera, rotation, prior_center, normal, &midpoint, &dir, compensate)
    };
    let near = constraint(&short_planes.0, Vector3::new(0.0, -hh, 0.0), Vector3::x());
    let far = constraint(&short_planes.1, Vector3::new(0.0, hh, 0.0), Vector3::x());
    let left = constraint(&long_planes.0, Vector3::new(-hw, 0.0, 0.0), Vector3::y());
    let right = constraint(&long_planes.1, Vector3::new(hw, 0.0, 0.0), Vector3::y());
    let lateral = left.normal + right.normal;
    let system = Matrix3::from_rows(&[
        near.normal.transpose(),
        far.normal.transpose(),
        lateral.transpose(),
    ]);
    system
        .lu()
        .solve(&Vector3::new(near.rhs, far.rhs, left.rhs + right.rhs))
        .map(|c| Vector3::new(c.x, c.y, c.z))
}

/// Camera-to-fork transform implied by a measured panel pose.
///
/// The fork origin is the panel centre displaced by the placement
/// offset (expressed through the panel's own axes), and the fork axes
/// follow from undoing the flat placement.
pub fn fork_transform_from_panel(
    panel: &PanelSpec,
    panel_rotation: &RotationMatrix,
    panel_center_mm: &Vector3<f64>,
) -> RigidTransform {
    let base = panel_base_rotation();
    let offset_model = base.inverse().apply(&panel.offset_vector());
    let origin_cam = panel_center_mm + panel_rotation.apply(&offset_model);
    let fork_to_cam_rotation = panel_rotation.compose(&base.inverse());
    let rotation = fork_to_cam_rotation.inverse();
    let translation = -rotation.apply(&origin_cam);
    RigidTransform::new(rotation, translation, Frame::Camera, Frame::Fork)
}

/// Output of a panel calibration.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    /// The calibrated camera-to-fork transform.
    pub camera_to_fork: RigidTransform,
    /// Fitted panel centre, camera frame mm.
    pub panel_position_mm: Vector3<f64>,
    /// Fitted panel model orientation in the camera frame.
    pub panel_rotation: RotationMatrix,
    /// Final pose-match similarity of the panel search.
    pub residual: f64,
    /// Whether projection honoured the camera's viewpoint-shift curve.
    pub shift_compensated: bool,
}

impl CalibrationResult {
    pub fn to_file(&self) -> CalibrationFile {
        CalibrationFile {
            rotation: self.camera_to_fork.rotation.to_rows(),
            translation_mm: self.camera_to_fork.translation.into(),
            from: self.camera_to_fork.from,
            to: self.camera_to_fork.to,
            shift_compensated: self.shift_compensated,
            residual: self.residual,
        }
    }
}

/// Calibrates the camera-to-fork transform from one panel image.
///
/// `prior_center_mm` is a rough guess of the panel centre in the camera
/// frame, usually read off the rig drawing (forward distance to the
/// panel centre, zero lateral, mounting height below the camera).
/// `use_shift` projects through the camera's viewpoint-shift curve
/// during both searches; without a curve it has no effect and the
/// result is marked uncompensated.
pub fn calibrate_camera_to_fork(
    image: &GrayImage,
    camera: &CameraModel,
    panel: &PanelSpec,
    prior_center_mm: &Vector3<f64>,
    use_shift: bool,
) -> Result<CalibrationResult> {
    panel.validate()?;
    let model = panel.face_model();
    let base_guess = panel_base_rotation();
    let grid = SearchGrid::default();

    let prior = PoseHypothesis::at(*prior_center_mm, 0.0);
    let coarse = search_planar_pose(image, &model, camera, &base_guess, &prior, &grid, use_shift)?;

    let coarse_rotation =
        RotationMatrix::about_z(coarse.yaw_deg.to_radians()).compose(&base_guess);
    let (panel_rotation, long, short) =
        orientation_detections(image, camera, panel, &coarse_rotation, &coarse.position_mm)?;

    let compensate = use_shift && camera.shift_curve().is_some();
    let solved = match (long.planes, short.planes) {
        (Some(lp), Some(sp)) => solve_panel_center(
            camera,
            panel,
            &panel_rotation,
            &coarse.position_mm,
            lp,
            sp,
            compensate,
        ),
        _ => None,
    };
    let position = match solved {
        Some(center) => center,
        // Without usable edge planes, fall back to sliding the panel
        // outline for the best image match.
        None => {
            search_position_only(
                image,
                &model,
                camera,
                &panel_rotation,
                &coarse.position_mm,
                &grid,
                use_shift,
            )?
            .position_mm
        }
    };
    let residual = pose_similarity(image, &model, camera, &panel_rotation, &position, use_shift)?;

    Ok(CalibrationResult {
        camera_to_fork: fork_transform_from_panel(panel, &panel_rotation, &position),
        panel_position_mm: position,
        panel_rotation,
        residual,
        shift_compensated: compensate,
    })
}

/// Predicted height bias of an uncompensated calibration, mm.
///
/// First-order two-edge construction for a near-level mount: the near
/// and far short edges' rays leave viewpoints offset along the optical
/// axis by the shift curve at their incidence angles, and re-fitting
/// the panel to the same rays drawn from the reference viewpoint
/// displaces the plane by `(s_near - s_far) * z / (x_near - x_far)`.
/// Positive means the panel — and with it the fork plane — measures too
/// high.  Zero without a shift curve; scales linearly with the curve.
pub fn shift_error_prediction(
    camera: &CameraModel,
    panel: &PanelSpec,
    panel_center_mm: &Vector3<f64>,
) -> f64 {
    let half = panel.height_mm / 2.0;
    let x_near = panel_center_mm.x - half;
    let x_far = panel_center_mm.x + half;
    let radial = panel_center_mm.y.hypot(panel_center_mm.z);
    let s_near = camera.shift_offset_mm(radial.atan2(x_near));
    let s_far = camera.shift_offset_mm(radial.atan2(x_far));
    (s_near - s_far) * panel_center_mm.z / (x_near - x_far)
}

/// On-disk calibration schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    /// Camera-to-fork rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    /// Camera-to-fork translation, mm.
    pub translation_mm: [f64; 3],
    pub from: Frame,
    pub to: Frame,
    pub shift_compensated: bool,
    pub residual: f64,
}

impl CalibrationFile {
    /// Rebuilds the transform, checking frames and orthonormality.
    pub fn transform(&self) -> Result<RigidTransform> {
        if self.from != Frame::Camera {
            return Err(Error::FrameMismatch {
                expected: Frame::Camera,
                found: self.from,
            });
        }
        if self.to != Frame::Fork {
            return Err(Error::FrameMismatch {
                expected: Frame::Fork,
                found: self.to,
            });
        }
        let rotation = RotationMatrix::from_rows(&self.rotation)?;
        Ok(RigidTransform::new(
            rotation,
            Vector3::from(self.translation_mm),
            self.from,
            self.to,
        ))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json_file(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
