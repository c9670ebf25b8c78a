//! Insertion-safety mathematics: clearance inequalities and the
//! height/tilt tolerance region.
//!
//! A fork of thickness `FT` and length `FL` must pass through a pallet
//! slot of height `PH`.  With a height error `dZ` (millimetres, positive
//! up) and a tilt error `theta` (radians, positive tipping the fork tip
//! up), the fork clears the slot if and only if both the heel and the tip
//! of both fork surfaces stay inside the slot opening:
//!
//! ```text
//! (1)  -PH/2 < dZ - (FT/2)*cos(theta)
//! (2)          dZ + (FT/2)*cos(theta)                 < PH/2
//! (3)  -PH/2 < dZ - (FT/2)*cos(theta) + FL*sin(theta)
//! (4)          dZ + (FT/2)*cos(theta) + FL*sin(theta) < PH/2
//! ```
//!
//! All four are strict.  The reach error `dX` couples into height only
//! through `dX * tan(theta)`, which is a fraction of a millimetre at
//! realistic errors and is neglected; [`reach_height_coupling`] computes
//! the coupling so callers can confirm the neglect is justified.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slot and fork dimensions entering the clearance inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertionGeometry {
    /// Pallet slot opening height, mm.
    pub slot_height_mm: f64,
    /// Fork blade thickness, mm.
    pub fork_thickness_mm: f64,
    /// Fork blade length, mm.
    pub fork_length_mm: f64,
}

impl Default for InsertionGeometry {
    fn default() -> Self {
        InsertionGeometry {
            slot_height_mm: 90.0,
            fork_thickness_mm: 36.0,
            fork_length_mm: 1070.0,
        }
    }
}

impl InsertionGeometry {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fork_thickness_mm > 0.0
            && self.fork_thickness_mm < self.slot_height_mm
            && self.fork_length_mm > 0.0
            && self.slot_height_mm.is_finite()
            && self.fork_thickness_mm.is_finite()
            && self.fork_length_mm.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "insertion geometry needs 0 < fork thickness < slot height and a positive fork length",
            ))
        }
    }
}

/// Pose errors of the fork relative to the slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertionError {
    /// Error along the insertion (reach) direction, mm.
    #[serde(default)]
    pub reach_mm: f64,
    /// Height error, mm, positive up.
    pub height_mm: f64,
    /// Tilt error, degrees, positive tipping the fork tip up.
    pub tilt_deg: f64,
}

impl InsertionError {
    pub fn validate(&self) -> Result<()> {
        let ok = self.reach_mm.is_finite()
            && self.height_mm.is_finite()
            && self.tilt_deg.is_finite()
            && self.tilt_deg.abs() < 90.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "insertion errors must be finite with |tilt| below 90 degrees",
            ))
        }
    }
}

/// Height change induced by a reach error under tilt: `dX * tan(tilt)`.
pub fn reach_height_coupling(reach_mm: f64, tilt_deg: f64) -> f64 {
    reach_mm * tilt_deg.to_radians().tan()
}

/// Evaluates the four strict clearance inequalities.
///
/// The reach error is deliberately ignored; see the module docs.
pub fn is_safe_insertion(geom: &InsertionGeometry, err: &InsertionError) -> bool {
    let half_slot = geom.slot_height_mm / 2.0;
    let half_fork = geom.fork_thickness_mm / 2.0;
    let theta = err.tilt_deg.to_radians();
    let dz = err.height_mm;
    let heel_lo = dz - half_fork * theta.cos();
    let heel_hi = dz + half_fork * theta.cos();
    let tip = geom.fork_length_mm * theta.sin();
    -half_slot < heel_lo
        && heel_hi < half_slot
        && -half_slot < heel_lo + tip
        && heel_hi + tip < half_slot
}

/// One tilt sample of the tolerance region: the open height interval that
/// keeps the insertion safe at this tilt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceSample {
    pub tilt_deg: f64,
    pub z_min_mm: f64,
    pub z_max_mm: f64,
}

/// Samples the safe (height, tilt) region over `tilt_deg in
/// [-theta_range_deg, +theta_range_deg]`.
///
/// For each sampled tilt, heights are scanned at `z_step_mm` across the
/// slot to bracket the safe interval, then each boundary is bisected to
/// nanometre precision.  Tilts whose safe interval is empty (or narrower
/// than the scan can resolve) produce no sample.
pub fn tolerance_region(
    geom: &InsertionGeometry,
    theta_range_deg: f64,
    theta_step_deg: f64,
    z_step_mm: f64,
) -> Result<Vec<ToleranceSample>> {
    geom.validate()?;
    if !(theta_step_deg > 0.0) || !(z_step_mm > 0.0) || !(theta_range_deg >= 0.0) {
        return Err(Error::config(
            "tolerance region sampling steps must be positive",
        ));
    }
    let steps = (theta_range_deg / theta_step_deg).round() as i64;
    let mut samples = Vec::new();
    for i in -steps..=steps {
        let tilt_deg = i as f64 * theta_step_deg;
        if tilt_deg.abs() >= 90.0 {
            continue;
        }
        let safe = |z: f64| {
            is_safe_insertion(
                geom,
                &InsertionError {
                    reach_mm: 0.0,
                    height_mm: z,
                    tilt_deg,
                },
            )
        };
        // Bracket: scan the full slot extent for any safe height.
        let z_lo = -geom.slot_height_mm;
        let z_hi = geom.slot_height_mm;
        let mut first_safe = None;
        let mut z = z_lo;
        while z <= z_hi {
            if safe(z) {
                first_safe = Some(z);
                break;
            }
            z += z_step_mm;
        }
        let Some(seed) = first_safe else { continue };
        // Walk outward from the seed in scan steps, then bisect each
        // boundary between the last safe and first unsafe height.
        let grow = |mut inside: f64, direction: f64| {
            let mut outside = inside + direction * z_step_mm;
            while safe(outside) {
                inside = outside;
                outside += direction * z_step_mm;
                if outside.abs() > 2.0 * geom.slot_height_mm {
                    break;
                }
            }
            for _ in 0..64 {
                let mid = 0.5 * (inside + outside);
                if safe(mid) {
                    inside = mid;
                } else {
                    outside = mid;
                }
                if (outside - inside).abs() < 1e-9 {
                    break;
                }
            }
            0.5 * (inside + outside)
        };
        let z_min_mm = grow(seed, -1.0);
        let z_max_mm = grow(seed, 1.0);
        samples.push(ToleranceSample {
            tilt_deg,
            z_min_mm,
            z_max_mm,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn geom() -> InsertionGeometry {
        InsertionGeometry::default()
    }

    fn err(height_mm: f64, tilt_deg: f64) -> InsertionError {
        InsertionError {
            reach_mm: 0.0,
            height_mm,
            tilt_deg,
        }
    }

    #[test]
    fn reach_coupling_matches_reference_values() {
        assert!((reach_height_coupling(20.0, 1.0) - 0.3491).abs() < 1e-4);
        assert_eq!(reach_height_coupling(20.0, 0.0), 0.0);
        assert!((reach_height_coupling(40.0, 1.0) - 0.6982).abs() < 1e-4);
        // Linear in reach.
        assert_relative_eq!(
            reach_height_coupling(40.0, 1.0),
            2.0 * reach_height_coupling(20.0, 1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_error_is_safe_with_wide_margin() {
        assert!(is_safe_insertion(&geom(), &err(0.0, 0.0)));
    }

    #[test]
    fn level_fork_clears_exactly_up_to_the_slot_gap() {
        // With no tilt the inequalities reduce to |dZ| < (PH - FT) / 2 = 27.
        assert!(!is_safe_insertion(&geom(), &err(27.0, 0.0)));
        assert!(!is_safe_insertion(&geom(), &err(-27.0, 0.0)));
        assert!(is_safe_insertion(&geom(), &err(26.9, 0.0)));
        assert!(is_safe_insertion(&geom(), &err(-26.9, 0.0)));
    }

    #[test]
    fn centered_fork_tolerates_under_one_and_a_half_degrees() {
        // Independent root of 18 cos t + 1070 sin t = 45: t ~= 1.4456 deg.
        let g = geom();
        let f = |t_deg: f64| {
            let t = t_deg.to_radians();
            18.0 * t.cos() + 1070.0 * t.sin() - 45.0
        };
        let (mut lo, mut hi) = (1.0, 2.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert!((root - 1.4456).abs() < 1e-3, "root {root}");
        assert!(is_safe_insertion(&g, &err(0.0, root - 1e-6)));
        assert!(!is_safe_insertion(&g, &err(0.0, root + 1e-6)));
        assert!(is_safe_insertion(&g, &err(0.0, -(root - 1e-6))));
        assert!(!is_safe_insertion(&g, &err(0.0, -(root + 1e-6))));
    }

    #[test]
    fn historical_pose_error_pairs_all_classify_safe() {
        // Sixteen measured (height, tilt) error pairs from live insertion
        // runs; every one must fall inside the tolerance region.
        let cases = [
            (-5.731, 0.1421),
            (-10.305, 0.25094),
            (-9.367, 0.06245),
            (-20.794, 0.1459),
            (-14.992, 0.193943),
            (-13.451, 0.02031),
            (-10.328, 0.02478),
            (-14.307, -0.10579),
            (-10.469, -0.14688),
            (-0.119, 0.11497),
            (-1.004, 0.374245),
            (-1.682, 0.07566),
            (-4.473, 0.36217),
            (-4.832, 0.454237),
            (-5.462, 0.57724),
            (-0.746, 0.53912),
        ];
        let g = geom();
        for (dz, dt) in cases {
            assert!(
                is_safe_insertion(&g, &err(dz, dt)),
                "({dz}, {dt}) should be safe"
            );
        }
        // The first run's full error triple, with its measured reach error.
        let first = InsertionError {
            reach_mm: 20.538,
            height_mm: -5.731,
            tilt_deg: 0.1421,
        };
        assert!(is_safe_insertion(&g, &first));
        // Its reach/tilt coupling is negligible next to the 27 mm gap.
        assert!(reach_height_coupling(first.reach_mm, first.tilt_deg).abs() < 0.35);
    }

    #[test]
    fn region_is_point_symmetric_under_sign_flips() {
        let g = geom();
        let mut t = -2.0;
        while t <= 2.0 {
            let mut z = -45.0;
            while z <= 45.0 {
                assert_eq!(
                    is_safe_insertion(&g, &err(z, t)),
                    is_safe_insertion(&g, &err(-z, -t)),
                    "symmetry broke at ({z}, {t})"
                );
                z += 1.0;
            }
            t += 0.05;
        }
    }

    #[test]
    fn region_samples_match_closed_form_intervals() {
        let g = geom();
        let samples = tolerance_region(&g, 1.4, 0.1, 1.0).unwrap();
        // 29 tilt values, all with a non-empty interval.
        assert_eq!(samples.len(), 29);
        let at = |t: f64| {
            samples
                .iter()
                .find(|s| (s.tilt_deg - t).abs() < 1e-12)
                .unwrap()
        };
        let level = at(0.0);
        assert_relative_eq!(level.z_min_mm, -27.0, epsilon = 1e-6);
        assert_relative_eq!(level.z_max_mm, 27.0, epsilon = 1e-6);
        // Closed form for any tilt: the interval is
        //   ( -PH/2 + (FT/2) cos t + max(0, -FL sin t),
        //      PH/2 - (FT/2) cos t - max(0,  FL sin t) ).
        for s in &samples {
            let t = s.tilt_deg.to_radians();
            let lo = -45.0 + 18.0 * t.cos() + (0.0f64).max(-1070.0 * t.sin());
            let hi = 45.0 - 18.0 * t.cos() - (0.0f64).max(1070.0 * t.sin());
            assert_relative_eq!(s.z_min_mm, lo, epsilon = 1e-6);
            assert_relative_eq!(s.z_max_mm, hi, epsilon = 1e-6);
        }
        // Point symmetry of the sampled region.
        for s in &samples {
            let mirror = at(-s.tilt_deg);
            assert_relative_eq!(s.z_min_mm, -mirror.z_max_mm, epsilon = 1e-6);
        }
    }

    #[test]
    fn region_vanishes_beyond_the_tilt_limit() {
        // The region empties where 1070 |sin t| >= 90 - 36 cos t, at
        // |t| ~= 2.895 deg; a centred fork (height 0) already binds at
        // ~1.446 deg, but off-centre heights stay safe beyond that.
        let samples = tolerance_region(&geom(), 4.0, 0.5, 0.5).unwrap();
        let max_tilt = samples
            .iter()
            .map(|s| s.tilt_deg.abs())
            .fold(0.0f64, f64::max);
        assert_eq!(max_tilt, 2.5);
        for s in &samples {
            assert!(s.z_min_mm < s.z_max_mm);
            if s.z_min_mm < 0.0 && s.z_max_mm > 0.0 {
                assert!(
                    s.tilt_deg.abs() <= 1.0,
                    "tilt {} should not keep a centred fork safe",
                    s.tilt_deg
                );
            }
        }
    }

    #[test]
    fn shorter_forks_widen_the_safe_region() {
        let long = geom();
        let short = InsertionGeometry {
            fork_length_mm: 900.0,
            ..long
        };
        let mut t = -2.0;
        while t <= 2.0 {
            let mut z = -45.0;
            while z <= 45.0 {
                if is_safe_insertion(&long, &err(z, t)) {
                    assert!(
                        is_safe_insertion(&short, &err(z, t)),
                        "shorter fork became unsafe at ({z}, {t})"
                    );
                }
                z += 1.0;
            }
            t += 0.05;
        }
        // Strictly wider somewhere: this tilt only clears with the short fork.
        assert!(!is_safe_insertion(&long, &err(0.0, 1.5)));
        assert!(is_safe_insertion(&short, &err(0.0, 1.5)));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(InsertionGeometry::default().validate().is_ok());
        let bad = InsertionGeometry {
            fork_thickness_mm: 120.0,
            ..InsertionGeometry::default()
        };
        assert!(bad.validate().is_err());
        assert!(err(0.0, 95.0).validate().is_err());
        assert!(err(f64::NAN, 0.0).validate().is_err());
        assert!(err(-5.0, 0.5).validate().is_ok());
        assert!(tolerance_region(&InsertionGeometry::default(), 2.0, 0.0, 1.0).is_err());
    }
}
