//! Large-surface tactile maps from a rolling sequence.
//!
//! A thin band around the image center is cropped from every frame; the
//! vertical shift between consecutive bands is found by exhaustive MAE
//! search, and the bands are stacked at their cumulative offsets. The
//! resulting map can be aligned to a top-down reference view and scored.

mod align;
mod metrics;
mod shift;
mod stitch;

pub use align::{affine_coverage, apply_affine, derive_affine, score_alignment, Affine, AlignmentSpec, Region};
pub use metrics::{evaluate, mae_percent, psnr, ssim, HardwareRow, Metrics, HARDWARE_REFERENCE, REAL_DATA_SSIM_RANGE};
pub use shift::{find_shift, find_shift_images, ShiftEstimate, ShiftRange};
pub use stitch::{stitch, OverlapMode, StitchParams, TactileMap};

use crate::error::{Error, Result};
use crate::simulator::TactileFrame;
use crate::GrayImage;

pub const DEFAULT_PATCH_HEIGHT: u32 = 70;

/// Horizontal band cropped from the middle of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: GrayImage,
    pub source_index: usize,
    /// First frame row included in the patch.
    pub top_row: u32,
}

/// Rows `top..top + patch_height` with `top = (H − patch_height) / 2`.
pub fn crop_center_patch(frame: &TactileFrame, patch_height: u32) -> Result<Patch> {
    let (w, h) = frame.pixels.dimensions();
    if patch_height > h {
        return Err(Error::PatchTooTall { patch_height, frame_height: h });
    }
    if patch_height == 0 {
        return Err(Error::InvalidParameter("patch height must be positive".into()));
    }
    let top = (h - patch_height) / 2;
    let pixels = image::imageops::crop_imm(&frame.pixels, 0, top, w, patch_height).to_image();
    Ok(Patch { pixels, source_index: frame.index, top_row: top })
}
