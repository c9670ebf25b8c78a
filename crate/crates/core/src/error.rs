//! Crate-wide error type.
//!
//! All fallible operations return [`Result`].  Detection failures
//! ([`Error::NotDetected`], [`Error::NoValidHypothesis`]) are ordinary
//! outcomes of the measurement pipeline and carry enough context to report
//! *why* nothing was found; everything else signals bad input or bad
//! configuration.

use crate::geometry::Frame;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Unified error type for the measurement library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A ray falls outside the camera's calibrated field of view.
    #[error("ray at {theta_deg:.3} deg incidence is outside the field of view")]
    OutOfFieldOfView { theta_deg: f64 },

    /// A pixel coordinate lies outside the image bounds or beyond the image
    /// circle of the fisheye model.
    #[error("pixel ({u:.1}, {v:.1}) is outside the image")]
    OutOfImage { u: f64, v: f64 },

    /// The radial polynomial is not strictly increasing on the calibrated
    /// angle range, so pixel radii cannot be mapped back to angles.
    #[error("radial polynomial is not invertible over the calibrated field of view")]
    NonInvertibleModel,

    /// Two axes handed to a rotation constructor are (nearly) parallel.
    #[error("axes are within 1 degree of parallel; rotation is underdetermined")]
    DegenerateAxes,

    /// A framed quantity was used with a transform for a different frame.
    #[error("frame mismatch: expected {expected}, found {found}")]
    FrameMismatch { expected: Frame, found: Frame },

    /// A pixel index outside a panorama or image buffer.
    #[error("coordinate ({x}, {y}) is outside the {width}x{height} buffer")]
    OutOfBounds { x: i64, y: i64, width: usize, height: usize },

    /// A buffer length disagrees with the dimensions it claims to have.
    #[error("buffer of {len} elements does not match {width}x{height}")]
    DimensionMismatch { len: usize, width: usize, height: usize },

    /// A predicted edge-search region does not intersect the panorama.
    #[error("predicted edge region lies outside the panorama")]
    RegionOutOfPanorama,

    /// The planar pose search found no pose scoring above the detection
    /// threshold.
    #[error("target not detected (best similarity {best_similarity:.3})")]
    NotDetected { best_similarity: f64 },

    /// Neither the loaded nor the unloaded line hypothesis was valid.
    #[error("no valid line hypothesis (loaded {loaded_ratio:.3}, unloaded {unloaded_ratio:.3})")]
    NoValidHypothesis { loaded_ratio: f64, unloaded_ratio: f64 },

    /// A required edge line scored below the vote-ratio threshold.
    #[error("edge line not found (score ratios {ratio_left:.3} / {ratio_right:.3})")]
    LineNotFound { ratio_left: f64, ratio_right: f64 },

    /// A synthetic render produced no foreground pixels.
    #[error("no scene geometry is visible from the camera")]
    NothingVisible,

    /// Invalid configuration or input data.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image I/O error: {0}")]
    ImageIo(#[from] image::ImageError),
}

impl Error {
    /// Shorthand for [`Error::InvalidConfig`] from anything displayable.
    pub fn config(msg: impl std::fmt::Display) -> Self {
        Error::InvalidConfig(msg.to_string())
    }
}
