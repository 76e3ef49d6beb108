//! Software stack for a cylindrical rolling optical tactile sensor.
//!
//! The sensor is a transparent cylinder with a soft reflective elastomer on
//! its outer surface and a camera fixed near the cylinder axis, looking down
//! at the contact region. This crate provides:
//!
//! - [`geometry`] – forward projection of cylinder-surface points into the
//!   tactile image and the closed-form inverse (pixel → surface point).
//! - [`simulator`] – a synthetic renderer that stands in for the hardware and
//!   supplies exact ground truth.
//! - [`calibration`] – extrinsic (rotation θ, vertical offset d) estimation
//!   from images of a hemisphere calibration grid.
//! - [`localization`] – contact region extraction and 3D contact location.
//! - [`mapping`] – large-surface tactile maps stitched from rolling video,
//!   alignment to a reference view, and SSIM/PSNR/MAE scoring.
//!
//! Units are millimeters and radians throughout; pixel coordinates are real
//! valued with pixel `(col, row)` centered at `(u, v) = (col, row)`.

pub mod calibration;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod localization;
pub mod mapping;
pub mod simulator;

pub use error::{Error, Result};
pub use geometry::{
    central_angle, project, unproject, CameraIntrinsics, CylinderModel, ExtrinsicPose, PixelPoint,
    Projection, SurfacePoint,
};

/// 8-bit grayscale frame buffer used across the pipelines.
pub type GrayImage = image::GrayImage;
