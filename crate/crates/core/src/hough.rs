//! Direction voting for 3-D line recovery from panorama edges.
//!
//! A straight 3-D line through points `p0 + t*d` projects onto rays
//! `r(t) = p0 + t*d` (up to positive scale), whose component perpendicular
//! to `d` is the constant vector `p0 - (p0.d)d`.  Measured around the axis
//! `d`, every point of the line therefore shares one exact longitude.
//! That property drives the search: candidate directions are sampled on a
//! small gnomonic grid around a nominal axis, each candidate histograms
//! the longitudes of all edge-pixel rays, and the candidate whose tallest
//! adjacent-bin windows (one per region) cover the most panorama rows
//! wins.  Two design points keep that score honest.  A two-bin window
//! makes it independent of where a projected line falls relative to bin
//! boundaries — an edge response is a couple of pixels thick, and
//! single-bin counting would reward tilted candidates that happen to
//! squeeze both pixel columns into one bin.  And each row votes at most
//! once per window, so the score measures how much of the line's extent
//! aligns; raw pixel counting would let a dense clump — say a crossing
//! edge near a region corner — outvote the line itself.
//!
//! Two regions vote jointly because the paired physical edges (left/right
//! cargo verticals, left/right deck rims, opposite panel borders) are
//! parallel in 3-D and must agree on a single direction.  Each region's
//! tallest bin, divided by the expected projected line length in pixels,
//! gives a score ratio in [0, ~1]; a detection is valid only if both
//! ratios reach 0.5.
//!
//! The vote is robust but quantized by the candidate grid and the bin
//! width — and deliberately tolerant, since covering a row takes only
//! one in-window pixel, the top score can span a plateau of candidates.
//! A continuous refinement therefore follows: the rays a winning window
//! captures all belong to one physical line and therefore span a single
//! plane through the viewpoint, and intersecting the two regions'
//! fitted planes recovers the direction free of quantization.  The
//! refinement iterates to a fixed point, re-selecting inliers in each
//! refined direction's own longitude basis: only at the true direction
//! is the line exactly iso-longitude, so nothing is clipped at the
//! window border and the fit stops moving.

use nalgebra::{Matrix3, Vector3};

use crate::edges::EdgeMap;
use crate::error::{Error, Result};
use crate::geometry::UnitVec3;

/// Score ratio both regions must reach for a detection to be valid.
pub const VALIDITY_RATIO: f64 = 0.5;

/// Cap on plane-refinement iterations; convergence normally takes a
/// handful.
const MAX_REFINE_ITERATIONS: usize = 12;

/// Grid and histogram resolution of the direction search.
#[derive(Debug, Clone, Copy)]
pub struct HoughParams {
    /// Half-extent of the candidate grid around the nominal axis, degrees.
    pub half_range_deg: f64,
    /// Grid step, degrees.
    pub step_deg: f64,
    /// Number of longitude histogram bins over the full circle.
    pub longitude_bins: usize,
}

impl Default for HoughParams {
    fn default() -> Self {
        HoughParams {
            half_range_deg: 10.0,
            step_deg: 0.1,
            longitude_bins: 1800,
        }
    }
}

impl HoughParams {
    fn validate(&self) -> Result<()> {
        if !(self.step_deg > 0.0) || !self.step_deg.is_finite() {
            return Err(Error::config("direction grid step must be positive"));
        }
        if !(self.half_range_deg >= self.step_deg) || !self.half_range_deg.is_finite() {
            return Err(Error::config(
                "direction grid half-range must be at least one step",
            ));
        }
        if self.half_range_deg >= 45.0 {
            return Err(Error::config(
                "direction grid half-range must stay below 45 degrees",
            ));
        }
        if self.longitude_bins < 2 {
            return Err(Error::config("need at least two longitude bins"));
        }
        Ok(())
    }

    /// Grid points per axis (always odd; the center is the nominal axis).
    fn steps_per_side(&self) -> i32 {
        (self.half_range_deg / self.step_deg).round() as i32
    }
}

/// One edge pixel's ray with the panorama row it came from and its
/// gradient magnitude.
#[derive(Debug, Clone, Copy)]
struct VoteRay {
    ray: Vector3<f64>,
    row: u32,
    weight: f64,
}

/// Edge-pixel rays from one predicted region, ready to vote.
///
/// Every ray carries the panorama row it came from so the vote can count
/// covered rows rather than raw pixels, and its gradient magnitude so
/// the plane refinement can follow the true response centroid.
#[derive(Debug, Clone)]
pub struct RegionVote {
    rays: Vec<VoteRay>,
    expected_line_height: f64,
}

impl RegionVote {
    /// Collects the rays of all edge pixels in `edges`.
    pub fn from_edges(edges: &EdgeMap) -> Self {
        let spec = edges.spec();
        let rays = edges
            .edge_pixels()
            .iter()
            .map(|&(u, v)| VoteRay {
                ray: spec.pixel_to_ray(u as f64, v as f64),
                row: v,
                weight: edges.magnitude(u as usize, v as usize) as f64,
            })
            .collect();
        RegionVote {
            rays,
            expected_line_height: edges.region().expected_line_height,
        }
    }

    /// Builds a vote directly from rays (synthetic inputs, tests); each
    /// ray counts as its own row at unit weight.
    pub fn from_rays(rays: Vec<Vector3<f64>>, expected_line_height: f64) -> Self {
        RegionVote {
            rays: rays
                .into_iter()
                .enumerate()
                .map(|(i, ray)| VoteRay {
                    ray,
                    row: i as u32,
                    weight: 1.0,
                })
                .collect(),
            expected_line_height,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// One region's contribution to the winning candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionScore {
    /// Left index of the tallest two-bin longitude window for the
    /// winning direction.
    pub longitude_bin: usize,
    /// Panorama rows with an edge pixel captured by that window.
    pub votes: u32,
    /// `votes / expected_line_height`.
    pub ratio: f64,
}

/// Result of one paired-region direction search.
#[derive(Debug, Clone, Copy)]
pub struct LineDetection {
    /// Estimated 3-D direction (camera frame); the nominal axis when no
    /// edges were available.
    pub direction: UnitVec3,
    pub left: RegionScore,
    pub right: RegionScore,
    /// Fitted plane normals of the two regions' inlier rays (left,
    /// right), unit length with arbitrary sign; present when the
    /// continuous refinement was adopted.  Each physical edge line lies
    /// in its plane, which constrains the edge's position as well as
    /// its direction.
    pub planes: Option<(Vector3<f64>, Vector3<f64>)>,
    /// Both ratios reached [`VALIDITY_RATIO`].
    pub valid: bool,
    /// Neither region contained a single edge pixel.
    pub no_edges: bool,
}

impl LineDetection {
    /// The weaker of the two region ratios.
    pub fn min_ratio(&self) -> f64 {
        self.left.ratio.min(self.right.ratio)
    }
}

/// Longitude window scratch reused across candidates.  Window `w` covers
/// bins `w` and `w + 1` (cyclic).  A generation tag avoids clearing the
/// arrays for every candidate, and a per-window row mark admits each
/// panorama row once per window; edge pixels arrive grouped by row, so a
/// single mark suffices.
struct BinScratch {
    generation: Vec<u32>,
    counts: Vec<u32>,
    row: Vec<u32>,
    current: u32,
}

impl BinScratch {
    fn new(bins: usize) -> Self {
        BinScratch {
            generation: vec![0; bins],
            counts: vec![0; bins],
            row: vec![0; bins],
            current: 0,
        }
    }

    /// Histograms `x = ray.u1, y = ray.u2` longitudes; returns the tallest
    /// window of two adjacent bins as `(covered_rows, left_bin_index)`,
    /// preferring the smaller index on ties.
    fn tally(
        &mut self,
        rays: &[VoteRay],
        u1: &Vector3<f64>,
        u2: &Vector3<f64>,
    ) -> (u32, usize) {
        self.current = self.current.wrapping_add(1);
        let bins = self.counts.len();
        let scale = bins as f64 / std::f64::consts::TAU;
        let mut best = (0u32, 0usize);
        for VoteRay { ray: r, row, .. } in rays {
            let lon = r.dot(u2).atan2(r.dot(u1));
            let mut bin = ((lon + std::f64::consts::PI) * scale).floor() as usize;
            if bin >= bins {
                bin = bins - 1;
            }
            // The windows starting at `bin - 1` and at `bin` both cover `bin`.
            for w in [(bin + bins - 1) % bins, bin] {
                if self.generation[w] != self.current {
                    self.generation[w] = self.current;
                    self.counts[w] = 0;
                    self.row[w] = u32::MAX;
                }
                if self.row[w] == *row {
                    continue;
                }
                self.row[w] = *row;
                self.counts[w] += 1;
                let c = self.counts[w];
                if c > best.0 || (c == best.0 && w < best.1) {
                    best = (c, w);
                }
            }
        }
        best
    }
}

/// Normal of the plane best containing the origin and all `rays`,
/// i.e. the smallest principal axis of the weighted ray scatter.
///
/// `None` with fewer than two rays, where no plane is determined.
fn scatter_plane_normal(rays: &[(Vector3<f64>, f64)]) -> Option<Vector3<f64>> {
    if rays.len() < 2 {
        return None;
    }
    let mut m = Matrix3::zeros();
    for (r, w) in rays {
        m += r * r.transpose() * *w;
    }
    let eigen = m.symmetric_eigen();
    let mut smallest = 0;
    for i in 1..3 {
        if eigen.eigenvalues[i] < eigen.eigenvalues[smallest] {
            smallest = i;
        }
    }
    Some(eigen.eigenvectors.column(smallest).into_owned())
}

/// Picks the in-plane basis `(e1, e2)` perpendicular to `axis`.
///
/// The reference is the optical axis unless `axis` nearly coincides with
/// it, in which case the downward direction takes over.
fn grid_basis(axis: &UnitVec3) -> (Vector3<f64>, Vector3<f64>) {
    let a = axis.vec();
    let reference = if a.x.abs() < 0.9 {
        Vector3::x()
    } else {
        -Vector3::z()
    };
    let e1 = (reference - a * reference.dot(&a)).normalize();
    let e2 = a.cross(&e1);
    (e1, e2)
}

/// Searches for the common 3-D direction of one pair of parallel edges.
///
/// Candidates cover a gnomonic grid around `axis`; each candidate scores
/// the sum of the two regions' tallest longitude-bin counts.  Ties break
/// deterministically toward the candidate closest to the nominal axis
/// (smaller `|alpha|`, then `|beta|`, then signed values, then bin
/// indices).  With no edge pixels at all, the nominal axis is returned
/// with `no_edges` set instead of an error.
pub fn find_line_direction(
    axis: UnitVec3,
    left: &RegionVote,
    right: &RegionVote,
    params: &HoughParams,
) -> Result<LineDetection> {
    params.validate()?;
    if left.is_empty() && right.is_empty() {
        let empty = RegionScore {
            longitude_bin: 0,
            votes: 0,
            ratio: 0.0,
        };
        return Ok(LineDetection {
            direction: axis,
            left: empty,
            right: empty,
            planes: None,
            valid: false,
            no_edges: true,
        });
    }
    let a = axis.vec();
    let (e1, e2) = grid_basis(&axis);
    let n = params.steps_per_side();
    let step = params.step_deg.to_radians();
    let mut scratch_left = BinScratch::new(params.longitude_bins);
    let mut scratch_right = BinScratch::new(params.longitude_bins);

    struct Best {
        score: u32,
        key: (i32, i32, i32, i32, i64, i64),
        direction: Vector3<f64>,
        basis: (Vector3<f64>, Vector3<f64>),
        left: (u32, usize),
        right: (u32, usize),
    }
    let mut best: Option<Best> = None;

    for oa in -n..=n {
        let tan_a = (oa as f64 * step).tan();
        for ob in -n..=n {
            let tan_b = (ob as f64 * step).tan();
            let d = (a + e1 * tan_a + e2 * tan_b).normalize();
            let u1 = (e1 - d * e1.dot(&d)).normalize();
            let u2 = d.cross(&u1);
            let (cl, bl) = scratch_left.tally(&left.rays, &u1, &u2);
            let (cr, br) = scratch_right.tally(&right.rays, &u1, &u2);
            let score = cl + cr;
            let key = (oa.abs(), ob.abs(), oa, ob, bl as i64, br as i64);
            let wins = match &best {
                None => true,
                Some(b) => score > b.score || (score == b.score && key < b.key),
            };
            if wins {
                best = Some(Best {
                    score,
                    key,
                    direction: d,
                    basis: (u1, u2),
                    left: (cl, bl),
                    right: (cr, br),
                });
            }
        }
    }
    let best = best.expect("candidate grid is never empty");

    // Continuous refinement, iterated to a fixed point.  The grid
    // winner is quantized — and on a score plateau the tie-break parks
    // it at the nominal-most end — while the plane fit of each region's
    // inlier rays is continuous.  One fit from the winner's own window
    // is not enough: that window can clip one tail of an obliquely
    // crossing line, anchoring the fit near the winner, so inliers are
    // re-selected in each refined direction's basis until the fit stops
    // moving.  Every iterate must keep the window capture at or above
    // the grid winner's, so a contaminated fit can never degrade the
    // vote.
    let mut direction = best.direction;
    let mut scores = (best.left, best.right);
    let mut planes = None;
    let mut basis = best.basis;
    let mut bins = (best.left.1, best.right.1);
    for _ in 0..MAX_REFINE_ITERATIONS {
        let Some((refined, fitted)) =
            refined_direction(&direction, &basis, bins.0, bins.1, left, right, params)
        else {
            break;
        };
        let u1 = (e1 - refined * e1.dot(&refined)).normalize();
        let u2 = refined.cross(&u1);
        let l = scratch_left.tally(&left.rays, &u1, &u2);
        let r = scratch_right.tally(&right.rays, &u1, &u2);
        if l.0 + r.0 < best.score {
            break;
        }
        let moved = refined.dot(&direction).clamp(-1.0, 1.0).acos();
        direction = refined;
        scores = (l, r);
        planes = Some(fitted);
        basis = (u1, u2);
        bins = (l.1, r.1);
        if moved < 1e-7 {
            break;
        }
    }

    let region = |(votes, bin): (u32, usize), expected: f64| RegionScore {
        longitude_bin: bin,
        votes,
        ratio: if expected > 0.0 {
            votes as f64 / expected
        } else {
            0.0
        },
    };
    let left = region(scores.0, left.expected_line_height);
    let right = region(scores.1, right.expected_line_height);
    Ok(LineDetection {
        direction: UnitVec3::normalize(direction)?,
        left,
        right,
        planes,
        valid: left.ratio >= VALIDITY_RATIO && right.ratio >= VALIDITY_RATIO,
        no_edges: false,
    })
}

/// Plane-fit direction from the winning candidate's inlier rays.
///
/// Each region keeps the rays within one bin of its tallest two-bin
/// window (in the winner's own longitude basis), fits their common
/// plane weighted by gradient magnitude, and the two planes intersect
/// in the refined direction.  The weighting matters: an edge response a
/// few pixels wide gains and loses thresholded columns along its length
/// as sampling density varies, and an unweighted fit follows those
/// jumps while the magnitude centroid stays on the physical edge.
/// `None` when either fit is degenerate: too few rays or near-parallel
/// planes; otherwise the refined direction with the two unit plane
/// normals (left, right).
fn refined_direction(
    direction: &Vector3<f64>,
    basis: &(Vector3<f64>, Vector3<f64>),
    left_bin: usize,
    right_bin: usize,
    left: &RegionVote,
    right: &RegionVote,
    params: &HoughParams,
) -> Option<(Vector3<f64>, (Vector3<f64>, Vector3<f64>))> {
    let (u1, u2) = *basis;
    let bins = params.longitude_bins as i64;
    let scale = bins as f64 / std::f64::consts::TAU;
    let inliers = |vote: &RegionVote, bin: usize| -> Vec<(Vector3<f64>, f64)> {
        vote.rays
            .iter()
            .filter(|vr| {
                let lon = vr.ray.dot(&u2).atan2(vr.ray.dot(&u1));
                let b = (((lon + std::f64::consts::PI) * scale).floor() as i64).min(bins - 1);
                let away = (b - bin as i64).rem_euclid(bins);
                away <= 2 || away == bins - 1
            })
            .map(|vr| (vr.ray.normalize(), vr.weight))
            .collect()
    };
    let nl = scatter_plane_normal(&inliers(left, left_bin))?;
    let nr = scatter_plane_normal(&inliers(right, right_bin))?;
    let cross = nl.cross(&nr);
    let norm = cross.norm();
    if norm < 1e-9 {
        return None;
    }
    let refined = cross / norm;
    let oriented = if refined.dot(direction) < 0.0 {
        -refined
    } else {
        refined
    };
    Some((oriented, (nl, nr)))
}
