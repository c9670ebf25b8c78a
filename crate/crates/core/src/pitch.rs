//! Pallet pitch measurement in the fork frame.
//!
//! The attitude problem splits in two.  A planar pose search on the
//! pallet front face (outline plus the two insertion slots) fixes
//! position and yaw with pitch held at zero.  The out-of-plane tilt is
//! then recovered from one pair of parallel physical edges whose 3-D
//! direction responds to pitch; which pair is visible depends on whether
//! goods are loaded, so both readings are always attempted:
//!
//! * loaded — the near-vertical front side edges of the cargo box,
//!   measured in the vertical-axis panorama;
//! * unloaded — the left and right rims of the top deck, running away
//!   from the camera, measured in the forward-axis panorama.
//!
//! Ordinarily exactly one hypothesis finds a valid line pair and is
//! adopted.  When both are valid the unloaded reading wins: the deck
//! rims belong to the pallet itself, while a line inside the cargo
//! regions can come from background structure.  When neither is valid
//! the measurement fails.
//!
//! The adopted direction is rotated into the fork frame.  A deck rim is
//! the pallet forward axis as-is (sign fixed toward positive fork `x`);
//! a cargo vertical is first rotated a quarter turn about the
//! yaw-compensated lateral axis `(-sin psi, cos psi, 0)`, which maps a
//! plumb vertical exactly onto forward for any pure pitch-plus-yaw
//! attitude.  Pitch is the forward-axis elevation
//! `atan2(f_z, sqrt(f_x^2 + f_y^2))`, positive when forward tips up —
//! the "front up" placement of an inclined pallet.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::edges::{
    detect_edges, PredictedRegion, DEFAULT_EDGE_THRESHOLD, DEFAULT_REGION_MARGIN_PX,
};
use crate::error::{Error, Result};
use crate::geometry::{
    rotate_about_axis, CameraModel, Frame, RigidTransform, RotationMatrix, UnitVec3,
};
use crate::hough::{find_line_direction, HoughParams, LineDetection, RegionScore, RegionVote};
use crate::panorama::{build_panorama, PanoAxis, PanoramaSpec, DEFAULT_PANO_WIDTH};
use crate::pose_search::{search_planar_pose, HoleRect, PlanarModel, PoseHypothesis, SearchGrid};
use crate::raster::GrayImage;

/// Half-angle of the attitude cone the predicted edge regions cover, deg.
pub const SEARCH_CONE_DEG: f64 = 10.0;

/// Cargo box riding on the pallet, mm.
///
/// The box is centred laterally, overhangs the pallet evenly front and
/// back when deeper than the pallet, and rests on the top deck.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CargoSpec {
    pub width_mm: f64,
    pub depth_mm: f64,
    pub height_mm: f64,
}

impl Default for CargoSpec {
    fn default() -> Self {
        CargoSpec {
            width_mm: 1150.0,
            depth_mm: 1150.0,
            height_mm: 1000.0,
        }
    }
}

/// Pallet dimensions and slot layout.
///
/// The pallet frame sits at the front-face centre: `x` runs into the
/// pallet (the insertion direction), `y` to the pallet's left, `z` up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PalletSpec {
    /// Face width (along `y`), mm.
    pub width_mm: f64,
    /// Depth (along `x`), mm.
    pub depth_mm: f64,
    /// Overall height including deck boards, mm.
    pub height_mm: f64,
    /// Insertion slot width, mm.
    pub slot_width_mm: f64,
    /// Insertion slot height, mm.
    pub slot_height_mm: f64,
    /// Distance from the face centre to each slot centre, mm.
    pub slot_center_mm: f64,
    /// Bottom-board thickness below the slots, mm.
    pub slot_bottom_mm: f64,
    /// Cargo box for the loaded hypothesis; without one the loaded
    /// hypothesis cannot be predicted and reports as invalid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cargo: Option<CargoSpec>,
}

impl Default for PalletSpec {
    /// An 1100 mm square two-way pallet with 90 mm slots.
    fn default() -> Self {
        PalletSpec {
            width_mm: 1100.0,
            depth_mm: 1100.0,
            height_mm: 144.0,
            slot_width_mm: 250.0,
            slot_height_mm: 90.0,
            slot_center_mm: 275.0,
            slot_bottom_mm: 22.0,
            cargo: Some(CargoSpec::default()),
        }
    }
}

impl PalletSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = self.width_mm > 0.0
            && self.depth_mm > 0.0
            && self.height_mm > 0.0
            && self.slot_width_mm > 0.0
            && self.slot_height_mm > 0.0
            && self.slot_center_mm > 0.0
            && self.slot_bottom_mm >= 0.0;
        if !positive {
            return Err(Error::config("pallet dimensions must be positive"));
        }
        if self.slot_height_mm >= self.height_mm {
            return Err(Error::config("slot height must be below the overall pallet height"));
        }
        if self.slot_bottom_mm + self.slot_height_mm >= self.height_mm {
            return Err(Error::config("slots must leave room for the top deck"));
        }
        let fits = self.slot_center_mm - self.slot_width_mm / 2.0 > 0.0
            && self.slot_center_mm + self.slot_width_mm / 2.0 < self.width_mm / 2.0;
        if !fits {
            return Err(Error::config("slots must fit between the face centre and edge"));
        }
        if let Some(cargo) = &self.cargo {
            let ok = cargo.width_mm > 0.0 && cargo.depth_mm > 0.0 && cargo.height_mm > 0.0;
            if !ok {
                return Err(Error::config("cargo dimensions must be positive"));
            }
        }
        Ok(())
    }

    /// The front face as a planar search model: the face outline with
    /// the two insertion slots as holes, model origin at the face centre.
    pub fn front_face_model(&self) -> PlanarModel {
        let cy = self.slot_bottom_mm + self.slot_height_mm / 2.0 - self.height_mm / 2.0;
        let hole = |cx: f64| HoleRect {
            cx,
            cy,
            w: self.slot_width_mm,
            h: self.slot_height_mm,
        };
        PlanarModel {
            width_mm: self.width_mm,
            height_mm: self.height_mm,
            holes: vec![hole(-self.slot_center_mm), hole(self.slot_center_mm)],
        }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: PalletSpec = serde_json::from_str(json)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Model-to-fork rotation of an unyawed pallet front face.
///
/// The face model's in-plane `x` (rightward when viewed head-on) maps to
/// fork `-y`, its in-plane `y` to fork `z`, and its outward normal back
/// toward the viewer, fork `-x`.
pub fn front_face_base_rotation() -> RotationMatrix {
    RotationMatrix::from_columns(
        Vector3::new(0.0, -1.0, 0.0),
        Vector3::new(0.0, 0.0, 1.0),
        Vector3::new(-1.0, 0.0, 0.0),
    )
    .expect("orthonormal by construction")
}

/// Which scene reading produced a line pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    Loaded,
    Unloaded,
}

impl std::fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Hypothesis::Loaded => "loaded",
            Hypothesis::Unloaded => "unloaded",
        })
    }
}

/// Left/right edge endpoint pairs for `hypothesis`, pallet-local mm.
///
/// Unloaded: the top-deck rims from the front face to the rear.  Loaded:
/// the cargo box's front vertical edges, from the deck to the box top.
pub fn edge_segments_local(
    spec: &PalletSpec,
    hypothesis: Hypothesis,
) -> Result<[(Vector3<f64>, Vector3<f64>); 2]> {
    match hypothesis {
        Hypothesis::Unloaded => {
            let hw = spec.width_mm / 2.0;
            let top = spec.height_mm / 2.0;
            Ok([
                (Vector3::new(0.0, hw, top), Vector3::new(spec.depth_mm, hw, top)),
                (Vector3::new(0.0, -hw, top), Vector3::new(spec.depth_mm, -hw, top)),
            ])
        }
        Hypothesis::Loaded => {
            let cargo = spec
                .cargo
                .ok_or_else(|| Error::config("loaded hypothesis needs a cargo box in the pallet spec"))?;
            let x = -(cargo.depth_mm - spec.depth_mm) / 2.0;
            let hw = cargo.width_mm / 2.0;
            let z0 = spec.height_mm / 2.0;
            let z1 = z0 + cargo.height_mm;
            Ok([
                (Vector3::new(x, hw, z0), Vector3::new(x, hw, z1)),
                (Vector3::new(x, -hw, z0), Vector3::new(x, -hw, z1)),
            ])
        }
    }
}

/// Endpoint pairs of the segment tilted to the cone extremes.
///
/// The segment rotates about its midpoint around two perpendicular axes
/// normal to it, by plus and minus the half-angle — four variants.  Any
/// axis pair spanning the normal plane gives the same attitude cone;
/// tilting about the segment's own direction would not move it.
pub(crate) fn cone_variants(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    half_angle_deg: f64,
) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
    let mid = (a + b) / 2.0;
    let d = UnitVec3::normalize(b - a)?;
    let pick = if d.vec().z.abs() < 0.9 {
        Vector3::z()
    } else {
        Vector3::x()
    };
    let u1 = UnitVec3::normalize(d.vec().cross(&pick))?;
    let u2 = UnitVec3::normalize(d.vec().cross(&u1.vec()))?;
    let angle = half_angle_deg.to_radians();
    let mut variants = Vec::with_capacity(4);
    for axis in [u1, u2] {
        for sign in [1.0, -1.0] {
            let tilt =
                |p: &Vector3<f64>| mid + rotate_about_axis(&(p - mid), &axis, sign * angle);
            variants.push((tilt(a), tilt(b)));
        }
    }
    Ok(variants)
}

/// Predicts the panorama search regions for the two edges of `hypothesis`.
///
/// `rotation` and `position_mm` place the pallet frame in the camera
/// frame.  Each region is the panorama bounding box of the edge's
/// projected endpoints over the nominal attitude and its tilts to the
/// search-cone extremes, dilated by the default margin.  Returns the
/// pallet-left edge first.
pub fn predict_edge_regions(
    rotation: &RotationMatrix,
    position_mm: &Vector3<f64>,
    spec: &PalletSpec,
    hypothesis: Hypothesis,
    pano: &PanoramaSpec,
) -> Result<(PredictedRegion, PredictedRegion)> {
    let segments = edge_segments_local(spec, hypothesis)?;
    let project = |seg: &(Vector3<f64>, Vector3<f64>)| -> Result<PredictedRegion> {
        let a = position_mm + rotation.apply(&seg.0);
        let b = position_mm + rotation.apply(&seg.1);
        let variants = cone_variants(&a, &b, SEARCH_CONE_DEG)?;
        PredictedRegion::from_edge(pano, (a, b), &variants, DEFAULT_REGION_MARGIN_PX)
    };
    Ok((project(&segments[0])?, project(&segments[1])?))
}

/// Chooses which hypothesis to adopt from the two line detections.
///
/// Exactly one valid reading wins outright.  When both are valid the
/// unloaded one is adopted — its deck rims are part of the pallet
/// itself, whereas a line in the cargo regions may be background
/// structure.  When neither is valid the measurement fails, reporting
/// both score ratios.
pub fn arbitrate(loaded: &LineDetection, unloaded: &LineDetection) -> Result<Hypothesis> {
    match (loaded.valid, unloaded.valid) {
        (true, false) => Ok(Hypothesis::Loaded),
        (_, true) => Ok(Hypothesis::Unloaded),
        (false, false) => Err(Error::NoValidHypothesis {
            loaded_ratio: loaded.min_ratio(),
            unloaded_ratio: unloaded.min_ratio(),
        }),
    }
}

/// Elevation of a fork-frame forward vector, degrees; positive is up.
pub fn pitch_from_forward(forward: &Vector3<f64>) -> f64 {
    forward.z.atan2(forward.x.hypot(forward.y)).to_degrees()
}

/// Forward vector recovered from a measured cargo vertical, fork frame.
///
/// The vertical (sign-fixed upward) rotates a quarter turn about the
/// yaw-compensated lateral axis `(-sin psi, cos psi, 0)`; for a pallet
/// attitude that is pure yaw plus pitch, a plumb cargo edge then lands
/// exactly on the pallet forward axis.
pub fn loaded_forward_vector(vertical: &Vector3<f64>, yaw_deg: f64) -> Vector3<f64> {
    let v = if vertical.z < 0.0 { -vertical } else { *vertical };
    let (sin, cos) = yaw_deg.to_radians().sin_cos();
    let lateral =
        UnitVec3::normalize(Vector3::new(-sin, cos, 0.0)).expect("unit by construction");
    rotate_about_axis(&v, &lateral, std::f64::consts::FRAC_PI_2)
}

/// Operator-supplied initial guess of the pallet pose, fork frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PalletPrior {
    /// Front-face centre, fork frame mm.
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    /// Pallet yaw about the fork vertical, degrees.
    #[serde(default)]
    pub yaw_deg: f64,
}

impl PalletPrior {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x_mm, self.y_mm, self.z_mm)
    }
}

/// Pallet pose in the fork frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PalletPose {
    /// Front-face centre, fork frame mm.
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
    /// Yaw about the fork vertical, degrees.
    pub yaw_deg: f64,
    /// Pitch (forward-axis elevation), degrees.
    pub pitch_deg: f64,
}

/// The weaker-region score ratio of each hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRatios {
    pub loaded: f64,
    pub unloaded: f64,
}

/// Full pitch measurement output.
#[derive(Debug, Clone, Serialize)]
pub struct PitchResult {
    /// Whether the adopted reading says goods are loaded.
    pub loaded: bool,
    /// Pallet pitch, degrees; positive tips the forward axis up.
    pub pitch_deg: f64,
    /// Pallet pose in the fork frame.
    pub pose_fork: PalletPose,
    pub score_ratios: ScoreRatios,
    /// Which hypotheses were valid and which was adopted.
    pub hypothesis: String,
    /// The two line detections (loaded, unloaded order).
    #[serde(skip)]
    pub detections: (LineDetection, LineDetection),
}

impl PitchResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Placeholder for a hypothesis that could not be measured at all.
fn invalid_detection(nominal: UnitVec3) -> LineDetection {
    let empty = RegionScore {
        longitude_bin: 0,
        votes: 0,
        ratio: 0.0,
    };
    LineDetection {
        direction: nominal,
        left: empty,
        right: empty,
        planes: None,
        valid: false,
        no_edges: true,
    }
}

/// Runs one hypothesis's line measurement.
///
/// A region that leaves the panorama — or a loaded hypothesis without a
/// cargo spec — yields the invalid placeholder rather than an error, so
/// the other hypothesis can still be adopted.
fn hypothesis_detection(
    image: &GrayImage,
    camera: &CameraModel,
    body_cam: &RotationMatrix,
    position_mm: &Vector3<f64>,
    spec: &PalletSpec,
    hypothesis: Hypothesis,
) -> Result<LineDetection> {
    let (pano_axis, body_column) = match hypothesis {
        Hypothesis::Loaded => (PanoAxis::Z, 2),
        Hypothesis::Unloaded => (PanoAxis::X, 0),
    };
    let nominal = UnitVec3::normalize(body_cam.column(body_column))?;
    if hypothesis == Hypothesis::Loaded && spec.cargo.is_none() {
        return Ok(invalid_detection(nominal));
    }
    let pano_spec = PanoramaSpec::for_axis(pano_axis, DEFAULT_PANO_WIDTH)?;
    let regions = match predict_edge_regions(body_cam, position_mm, spec, hypothesis, &pano_spec)
    {
        Ok(pair) => pair,
        Err(Error::RegionOutOfPanorama) => return Ok(invalid_detection(nominal)),
        Err(e) => return Err(e),
    };
    let pano = build_panorama(image, camera, &pano_spec);
    let left = RegionVote::from_edges(&detect_edges(&pano, &regions.0, DEFAULT_EDGE_THRESHOLD)?);
    let right = RegionVote::from_edges(&detect_edges(&pano, &regions.1, DEFAULT_EDGE_THRESHOLD)?);
    find_line_direction(nominal, &left, &right, &HoughParams::default())
}

/// Measures the pallet pitch from one wide-angle image.
///
/// `calib` is the camera-to-fork transform; the prior localizes the grid
/// search for the front face.  Both line hypotheses are always measured
/// and [`arbitrate`] picks the adopted one.
pub fn measure_pitch(
    image: &GrayImage,
    camera: &CameraModel,
    calib: &RigidTransform,
    spec: &PalletSpec,
    prior: &PalletPrior,
) -> Result<PitchResult> {
    measure_pitch_with(image, camera, calib, spec, prior, None)
}

/// As [`measure_pitch`], but `force` overrides the arbitration.
///
/// Forcing is a diagnostic: the forced hypothesis must itself be valid,
/// otherwise the measurement fails as if neither were.
pub fn measure_pitch_with(
    image: &GrayImage,
    camera: &CameraModel,
    calib: &RigidTransform,
    spec: &PalletSpec,
    prior: &PalletPrior,
    force: Option<Hypothesis>,
) -> Result<PitchResult> {
    spec.validate()?;
    if calib.from != Frame::Camera || calib.to != Frame::Fork {
        return Err(Error::FrameMismatch {
            expected: Frame::Camera,
            found: calib.from,
        });
    }
    let fork_to_cam = calib.inverse();

    // Planar search in the camera frame.  The yaw sweep turns about the
    // camera vertical, which coincides with the fork vertical for a
    // level camera mount (roll is taken as negligible throughout).  The
    // viewpoint shift stays off: at pallet distances the face projects
    // well inside the low-incidence zone where the shift vanishes.
    let base_cam = fork_to_cam.rotation.compose(&front_face_base_rotation());
    let prior_cam = PoseHypothesis::at(fork_to_cam.apply_point(&prior.position()), prior.yaw_deg);
    let found = search_planar_pose(
        image,
        &spec.front_face_model(),
        camera,
        &base_cam,
        &prior_cam,
        &SearchGrid::default(),
        false,
    )?;

    // Pallet body frame in the camera frame: x into the pallet, z up.
    let body_cam =
        RotationMatrix::about_z(found.yaw_deg.to_radians()).compose(&fork_to_cam.rotation);
    let loaded_det = hypothesis_detection(
        image,
        camera,
        &body_cam,
        &found.position_mm,
        spec,
        Hypothesis::Loaded,
    )?;
    let unloaded_det = hypothesis_detection(
        image,
        camera,
        &body_cam,
        &found.position_mm,
        spec,
        Hypothesis::Unloaded,
    )?;

    let adopted = match force {
        None => arbitrate(&loaded_det, &unloaded_det)?,
        Some(hypothesis) => {
            let det = match hypothesis {
                Hypothesis::Loaded => &loaded_det,
                Hypothesis::Unloaded => &unloaded_det,
            };
            if !det.valid {
                return Err(Error::NoValidHypothesis {
                    loaded_ratio: loaded_det.min_ratio(),
                    unloaded_ratio: unloaded_det.min_ratio(),
                });
            }
            hypothesis
        }
    };

    // Fork-frame pose.  Yaw comes from the level forward axis; pitch
    // from the adopted line direction.
    let position_fork = calib.apply_point(&found.position_mm);
    let forward_level = calib.rotation.apply(&body_cam.column(0));
    let yaw_deg = forward_level.y.atan2(forward_level.x).to_degrees();

    let detection = match adopted {
        Hypothesis::Loaded => &loaded_det,
        Hypothesis::Unloaded => &unloaded_det,
    };
    let measured_fork = calib.apply_direction(&detection.direction.vec());
    let forward = match adopted {
        Hypothesis::Loaded => loaded_forward_vector(&measured_fork, yaw_deg),
        Hypothesis::Unloaded => {
            if measured_fork.x < 0.0 {
                -measured_fork
            } else {
                measured_fork
            }
        }
    };
    let pitch_deg = pitch_from_forward(&forward);

    let state = |det: &LineDetection| if det.valid { "valid" } else { "invalid" };
    let verb = if force.is_some() { "forced" } else { "adopted" };
    let hypothesis = format!(
        "{verb} {adopted} (loaded {}, unloaded {})",
        state(&loaded_det),
        state(&unloaded_det)
    );

    Ok(PitchResult {
        loaded: adopted == Hypothesis::Loaded,
        pitch_deg,
        pose_fork: PalletPose {
            x_mm: position_fork.x,
            y_mm: position_fork.y,
            z_mm: position_fork.z,
            yaw_deg,
            pitch_deg,
        },
        score_ratios: ScoreRatios {
            loaded: loaded_det.min_ratio(),
            unloaded: unloaded_det.min_ratio(),
        },
        hypothesis,
        detections: (loaded_det, unloaded_det),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AffineParams;

    fn spec() -> PalletSpec {
        PalletSpec::default()
    }

    /// A frontal pallet 2 m ahead, centre 200 mm below the camera axis
    /// (clear of both the forward-panorama pole and its longitude seam).
    fn frontal_position() -> Vector3<f64> {
        Vector3::new(2000.0, 0.0, -200.0)
    }

    fn region_center_u(region: &PredictedRegion) -> f64 {
        (region.u_min + region.u_max) as f64 / 2.0
    }

    #[test]
    fn default_spec_is_valid_and_round_trips() {
        let spec = spec();
        spec.validate().unwrap();
        let back = PalletSpec::from_json(&spec.to_json().unwrap()).unwrap();
        assert_eq!(spec, back);

        let mut no_cargo = spec.clone();
        no_cargo.cargo = None;
        let json = no_cargo.to_json().unwrap();
        assert!(!json.contains("cargo"));
        assert_eq!(PalletSpec::from_json(&json).unwrap(), no_cargo);
    }

    #[test]
    fn validation_rejects_malformed_pallets() {
        let mut tall_slots = spec();
        tall_slots.slot_height_mm = 150.0;
        assert!(tall_slots.validate().is_err());

        let mut no_deck = spec();
        no_deck.slot_bottom_mm = 60.0;
        assert!(no_deck.validate().is_err());

        let mut wide_slots = spec();
        wide_slots.slot_width_mm = 560.0;
        assert!(wide_slots.validate().is_err());

        let mut flat_cargo = spec();
        flat_cargo.cargo = Some(CargoSpec {
            height_mm: 0.0,
            ..CargoSpec::default()
        });
        assert!(flat_cargo.validate().is_err());
    }

    #[test]
    fn front_face_model_places_the_slots() {
        let model = spec().front_face_model();
        model.validate().unwrap();
        assert_eq!(model.width_mm, 1100.0);
        assert_eq!(model.height_mm, 144.0);
        assert_eq!(model.holes.len(), 2);
        for (hole, cx) in model.holes.iter().zip([-275.0, 275.0]) {
            assert_eq!(hole.cx, cx);
            // Slot centre: 22 mm bottom board plus half the 90 mm slot,
            // measured from the 72 mm face half-height.
            assert_eq!(hole.cy, -5.0);
            assert_eq!(hole.w, 250.0);
            assert_eq!(hole.h, 90.0);
        }
    }

    #[test]
    fn edge_segments_follow_the_spec_dimensions() {
        let s = spec();
        let [left, right] = edge_segments_local(&s, Hypothesis::Unloaded).unwrap();
        assert_eq!(left.0, Vector3::new(0.0, 550.0, 72.0));
        assert_eq!(left.1, Vector3::new(1100.0, 550.0, 72.0));
        assert_eq!(right.0, Vector3::new(0.0, -550.0, 72.0));
        assert_eq!(right.1, Vector3::new(1100.0, -550.0, 72.0));

        let [left, right] = edge_segments_local(&s, Hypothesis::Loaded).unwrap();
        assert_eq!(left.0, Vector3::new(-25.0, 575.0, 72.0));
        assert_eq!(left.1, Vector3::new(-25.0, 575.0, 1072.0));
        assert_eq!(right.0, Vector3::new(-25.0, -575.0, 72.0));
        assert_eq!(right.1, Vector3::new(-25.0, -575.0, 1072.0));

        let mut bare = s;
        bare.cargo = None;
        assert!(edge_segments_local(&bare, Hypothesis::Loaded).is_err());
    }

    #[test]
    fn cone_variants_tilt_by_the_half_angle_about_the_midpoint() {
        let a = Vector3::new(2000.0, 550.0, -128.0);
        let b = Vector3::new(3100.0, 550.0, -128.0);
        let variants = cone_variants(&a, &b, SEARCH_CONE_DEG).unwrap();
        assert_eq!(variants.len(), 4);
        let d = (b - a).normalize();
        for (va, vb) in &variants {
            assert!(((va + vb) / 2.0 - (a + b) / 2.0).norm() < 1e-9);
            assert!(((vb - va).norm() - (b - a).norm()).abs() < 1e-9);
            let tilted = (vb - va).normalize();
            let angle = d.dot(&tilted).clamp(-1.0, 1.0).acos().to_degrees();
            assert!((angle - SEARCH_CONE_DEG).abs() < 1e-9, "tilt angle {angle}");
        }
    }

    #[test]
    fn frontal_regions_sit_symmetric_about_the_pallet_column() {
        let pano = PanoramaSpec::for_axis(PanoAxis::X, DEFAULT_PANO_WIDTH).unwrap();
        let position = frontal_position();
        let (left, right) = predict_edge_regions(
            &RotationMatrix::identity(),
            &position,
            &spec(),
            Hypothesis::Unloaded,
            &pano,
        )
        .unwrap();
        let u_pallet = pano.ray_to_pixel(&position).unwrap().u;
        let sum = region_center_u(&left) + region_center_u(&right);
        assert!(
            (sum - 2.0 * u_pallet).abs() < 2.0,
            "centers {} + {} vs pallet column {u_pallet}",
            region_center_u(&left),
            region_center_u(&right)
        );
        assert!(left.expected_line_height > 0.0);
        assert!(right.expected_line_height > 0.0);
    }

    #[test]
    fn loaded_regions_expect_taller_lines_than_unloaded() {
        let position = frontal_position();
        let rotation = RotationMatrix::identity();
        let s = spec();
        let pano_z = PanoramaSpec::for_axis(PanoAxis::Z, DEFAULT_PANO_WIDTH).unwrap();
        let (l_left, l_right) =
            predict_edge_regions(&rotation, &position, &s, Hypothesis::Loaded, &pano_z).unwrap();
        let pano_x = PanoramaSpec::for_axis(PanoAxis::X, DEFAULT_PANO_WIDTH).unwrap();
        let (u_left, u_right) =
            predict_edge_regions(&rotation, &position, &s, Hypothesis::Unloaded, &pano_x).unwrap();
        assert!(l_left.expected_line_height > u_left.expected_line_height);
        assert!(l_right.expected_line_height > u_right.expected_line_height);
    }

    #[test]
    fn yawed_regions_track_the_projected_endpoints() {
        let pano = PanoramaSpec::for_axis(PanoAxis::X, DEFAULT_PANO_WIDTH).unwrap();
        let position = frontal_position();
        let s = spec();
        let yaw_deg: f64 = 5.0;
        let yawed = RotationMatrix::about_z(yaw_deg.to_radians());
        let (left, right) =
            predict_edge_regions(&yawed, &position, &s, Hypothesis::Unloaded, &pano).unwrap();
        let (left0, right0) = predict_edge_regions(
            &RotationMatrix::identity(),
            &position,
            &s,
            Hypothesis::Unloaded,
            &pano,
        )
        .unwrap();

        // Independent endpoint oracle: the deck rims yawed by explicit
        // plane trigonometry, then projected one endpoint at a time.
        let (sin, cos) = yaw_deg.to_radians().sin_cos();
        let rim = |x: f64, y: f64| {
            position + Vector3::new(x * cos - y * sin, x * sin + y * cos, 72.0)
        };
        let flat = |x: f64, y: f64| position + Vector3::new(x, y, 72.0);
        let cases = [
            (&left, &left0, [rim(0.0, 550.0), rim(1100.0, 550.0)], [
                flat(0.0, 550.0),
                flat(1100.0, 550.0),
            ]),
            (&right, &right0, [rim(0.0, -550.0), rim(1100.0, -550.0)], [
                flat(0.0, -550.0),
                flat(1100.0, -550.0),
            ]),
        ];
        for (region, frontal, endpoints, frontal_endpoints) in cases {
            let mut mean_u = 0.0;
            for p in &endpoints {
                let c = pano.ray_to_pixel(p).unwrap();
                assert!(
                    (region.u_min..=region.u_max).contains(&(c.u.round() as usize))
                        && (region.v_min..=region.v_max).contains(&(c.v.round() as usize)),
                    "endpoint ({}, {}) outside region {region:?}",
                    c.u,
                    c.v
                );
                mean_u += c.u / 2.0;
            }
            let mut frontal_mean_u = 0.0;
            for p in &frontal_endpoints {
                frontal_mean_u += pano.ray_to_pixel(p).unwrap().u / 2.0;
            }
            // The region must move off its frontal place in the same
            // direction as the endpoints it tracks.
            let shift = region_center_u(region) - region_center_u(frontal);
            let predicted = mean_u - frontal_mean_u;
            assert!(
                shift.signum() == predicted.signum() && shift.abs() > 1.0,
                "center shift {shift} vs endpoint shift {predicted}"
            );
        }
    }

    #[test]
    fn arbitration_prefers_the_unloaded_reading() {
        let axis = UnitVec3::z_axis();
        let valid = LineDetection {
            direction: axis,
            left: RegionScore {
                longitude_bin: 3,
                votes: 60,
                ratio: 0.8,
            },
            right: RegionScore {
                longitude_bin: 5,
                votes: 55,
                ratio: 0.7,
            },
            planes: None,
            valid: true,
            no_edges: false,
        };
        let invalid = invalid_detection(axis);

        assert_eq!(arbitrate(&valid, &invalid).unwrap(), Hypothesis::Loaded);
        assert_eq!(arbitrate(&invalid, &valid).unwrap(), Hypothesis::Unloaded);
        assert_eq!(arbitrate(&valid, &valid).unwrap(), Hypothesis::Unloaded);
        match arbitrate(&invalid, &invalid) {
            Err(Error::NoValidHypothesis {
                loaded_ratio,
                unloaded_ratio,
            }) => {
                assert_eq!(loaded_ratio, 0.0);
                assert_eq!(unloaded_ratio, 0.0);
            }
            other => panic!("expected NoValidHypothesis, got {other:?}"),
        }
    }

    #[test]
    fn pitch_formula_matches_the_reference_cases() {
        // A level deck rim.
        assert_eq!(pitch_from_forward(&Vector3::new(1.0, 0.0, 0.0)), 0.0);

        // A plumb cargo vertical at zero yaw maps onto level forward.
        let forward = loaded_forward_vector(&Vector3::new(0.0, 0.0, 1.0), 0.0);
        assert!((forward - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(pitch_from_forward(&forward).abs() < 1e-12);

        // The front-up ground-truth placement.
        let theta = 4.19f64.to_radians();
        let d = Vector3::new(theta.cos(), 0.0, theta.sin());
        assert!((pitch_from_forward(&d) - 4.19).abs() < 1e-12);

        // Sign fix: the same vertical handed downward gives the same
        // forward; yaw moves the rotation axis with the pallet.
        let yaw = 30.0f64;
        let up = Vector3::new(0.0, 0.0, 1.0);
        let via_up = loaded_forward_vector(&up, yaw);
        let via_down = loaded_forward_vector(&(-up), yaw);
        assert!((via_up - via_down).norm() < 1e-12);
        let (sin, cos) = yaw.to_radians().sin_cos();
        assert!((via_up - Vector3::new(cos, sin, 0.0)).norm() < 1e-12);
        assert!(pitch_from_forward(&via_up).abs() < 1e-12);
    }

    #[test]
    fn pitch_is_yaw_invariant_for_pure_pitch_plus_yaw_attitudes() {
        // Attitude = yaw about fork z after pitch about the pallet
        // lateral axis; the recovered pitch must equal the pitch input
        // for any yaw, through both the loaded and unloaded readings.
        for yaw_deg in [-5.0, -2.0, 0.0, 3.5, 5.0] {
            for pitch_deg in [-8.0f64, -1.65, 0.0, 1.65, 4.19, 8.0] {
                let attitude = RotationMatrix::about_z((yaw_deg as f64).to_radians())
                    .compose(&RotationMatrix::about_y(-pitch_deg.to_radians()));
                let rim = attitude.apply(&Vector3::new(1.0, 0.0, 0.0));
                let rim = if rim.x < 0.0 { -rim } else { rim };
                assert!(
                    (pitch_from_forward(&rim) - pitch_deg).abs() < 1e-9,
                    "unloaded yaw {yaw_deg} pitch {pitch_deg}"
                );

                let vertical = attitude.apply(&Vector3::new(0.0, 0.0, 1.0));
                let forward = loaded_forward_vector(&vertical, yaw_deg);
                assert!(
                    (pitch_from_forward(&forward) - pitch_deg).abs() < 1e-9,
                    "loaded yaw {yaw_deg} pitch {pitch_deg}"
                );
            }
        }
    }

    #[test]
    fn measure_rejects_a_wrongly_tagged_calibration() {
        let image = GrayImage::new(64, 64, 0);
        let camera = CameraModel::new(
            64,
            64,
            32.0,
            32.0,
            vec![0.0, 40.0],
            AffineParams::default(),
            90.0,
            None,
        )
        .unwrap();
        let calib = RigidTransform::identity(Frame::Camera);
        let prior = PalletPrior {
            x_mm: 2000.0,
            y_mm: 0.0,
            z_mm: 0.0,
            yaw_deg: 0.0,
        };
        match measure_pitch(&image, &camera, &calib, &spec(), &prior) {
            Err(Error::FrameMismatch { expected, .. }) => assert_eq!(expected, Frame::Camera),
            other => panic!("expected FrameMismatch, got {other:?}"),
        }
    }
}
