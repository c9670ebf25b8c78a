//! Pallet pose and pitch measurement from a single wide-angle camera.
//!
//! A forklift approaching a pallet needs three numbers before inserting its
//! forks: the pallet's reach, its height, and above all its pitch
//! inclination relative to the fork plane.  This crate measures them from
//! one fisheye image taken by a camera mounted on the fork carriage, and
//! decides whether the residual errors permit a safe insertion.
//!
//! The pipeline, bottom to top:
//!
//! * [`geometry`] — frames, rotations, rigid transforms and the polynomial
//!   fisheye camera model (with its non-single-viewpoint shift curve).
//! * [`panorama`] — equirectangular re-gridding about a pseudo-vertical
//!   axis, which turns 3-D lines parallel to that axis into pixel columns.
//! * [`edges`] — Sobel edge extraction inside predicted panorama regions.
//! * [`hough`] — recovery of the common 3-D direction of a left/right pair
//!   of parallel edges by voting over a two-angle direction grid.
//! * [`pose_search`] — coarse-to-fine planar pose search matching a
//!   projected rectangle-with-holes template against image edges.
//! * [`pitch`] — the full measurement: pallet pose search, loaded and
//!   unloaded line hypotheses, arbitration, and the pitch angle itself.
//! * [`calibration`] — camera-to-fork extrinsics from one image of a
//!   rectangular panel laid on the forks.
//! * [`tolerance`] — closed-form fork-insertion safety inequalities.
//! * [`synthetic`] — a deterministic ray-cast scene renderer used as the
//!   ground-truth oracle for everything above.

pub mod calibration;
pub mod edges;
pub mod error;
pub mod geometry;
pub mod hough;
pub mod panorama;
pub mod pitch;
pub mod pose_search;
pub mod raster;
pub mod tolerance;

pub use error::{Error, Result};
