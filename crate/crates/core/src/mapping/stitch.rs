use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{crop_center_patch, find_shift, ShiftEstimate, ShiftRange, DEFAULT_PATCH_HEIGHT};
use crate::error::{Error, Result};
use crate::simulator::TactileFrame;
use crate::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMode {
    /// The later patch replaces rows already written.
    #[default]
    Overwrite,
    /// Overlapping rows are averaged.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StitchParams {
    pub patch_height: u32,
    pub shift_range: ShiftRange,
    pub overlap: OverlapMode,
    /// Place patches at parabolic sub-pixel offsets (rounded per patch).
    pub subpixel: bool,
}

impl Default for StitchParams {
    fn default() -> Self {
        Self {
            patch_height: DEFAULT_PATCH_HEIGHT,
            shift_range: ShiftRange::default(),
            overlap: OverlapMode::Overwrite,
            subpixel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TactileMap {
    pub pixels: GrayImage,
    /// Shift between frame `i` and `i + 1`.
    pub shifts: Vec<ShiftEstimate>,
    /// Map row of each patch's first row.
    pub offsets: Vec<i64>,
    pub patch_height: u32,
    /// Frame row that became map row `offsets[i]`.
    pub patch_top_row: u32,
}

/// Stacks the center patches of consecutive frames. Patch `i + 1` sits
/// `−dy_i` rows below patch `i`; the canvas spans the extreme offsets.
pub fn stitch(frames: &[TactileFrame], params: &StitchParams) -> Result<TactileMap> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("frames"));
    }
    let patches = frames
        .iter()
        .map(|f| crop_center_patch(f, params.patch_height))
        .collect::<Result<Vec<_>>>()?;
    let width = patches[0].pixels.width();
    if let Some(p) = patches.iter().find(|p| p.pixels.width() != width) {
        return Err(Error::DimensionMismatch {
            left: patches[0].pixels.dimensions(),
            right: p.pixels.dimensions(),
        });
    }
    let shifts = patches
        .par_windows(2)
        .map(|w| find_shift(&w[0], &w[1], params.shift_range, params.subpixel))
        .collect::<Result<Vec<_>>>()?;

    let mut cumulative = 0.0;
    let mut raw = vec![0i64];
    for s in &shifts {
        cumulative -= s.placement();
        raw.push(cumulative.round() as i64);
    }
    let min = *raw.iter().min().expect("non-empty");
    let offsets: Vec<i64> = raw.iter().map(|o| o - min).collect();
    let ph = params.patch_height as i64;
    let height = offsets.iter().max().expect("non-empty") + ph;

    let w = width as usize;
    let mut sums = vec![0u32; w * height as usize];
    let mut counts = vec![0u32; w * height as usize];
    for (patch, &off) in patches.iter().zip(&offsets) {
        for (i, row) in patch.pixels.as_raw().chunks(w).enumerate() {
            let base = (off as usize + i) * w;
            for (x, &p) in row.iter().enumerate() {
                match params.overlap {
                    OverlapMode::Overwrite => {
                        sums[base + x] = p as u32;
                        counts[base + x] = 1;
                    }
                    OverlapMode::Average => {
                        sums[base + x] += p as u32;
                        counts[base + x] += 1;
                    }
                }
            }
        }
    }
    let data = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (s + c / 2).checked_div(c).unwrap_or(0) as u8)
        .collect();
    let pixels = GrayImage::from_raw(width, height as u32, data).expect("sized canvas");
    Ok(TactileMap { pixels, shifts, offsets, patch_height: params.patch_height, patch_top_row: patches[0].top_row })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Frames viewing a long random strip, advancing `step` rows per frame.
    fn strip_frames(n: usize, step: u32, seed: u64) -> (GrayImage, Vec<TactileFrame>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let strip = GrayImage::from_fn(32, 70 + step * n as u32 + 10, |_, _| image::Luma([rng.random::<u8>()]));
        let frames = (0..n)
            .map(|i| {
                let mut f = GrayImage::new(32, 120);
                let top = i as u32 * step;
                for y in 0..70 {
                    for x in 0..32 {
                        f.put_pixel(x, 25 + y, *strip.get_pixel(x, top + y));
                    }
                }
                TactileFrame::from_image(f, i)
            })
            .collect();
        (strip, frames)
    }

    #[test]
    fn constant_shift_map_height() {
        let (strip, frames) = strip_frames(12, 10, 1);
        let map = stitch(&frames, &StitchParams::default()).unwrap();
        assert_eq!(map.pixels.height(), 180);
        assert!(map.shifts.iter().all(|s| s.dy == -10));
        assert_eq!(map.offsets[11], 110);
        let expected = image::imageops::crop_imm(&strip, 0, 0, 32, 180).to_image();
        assert_eq!(map.pixels, expected);
        let avg = stitch(&frames, &StitchParams { overlap: OverlapMode::Average, ..Default::default() }).unwrap();
        assert_eq!(avg.pixels, expected);
    }

    #[test]
    fn single_frame_is_its_patch() {
        let (_, frames) = strip_frames(1, 10, 2);
        let map = stitch(&frames, &StitchParams::default()).unwrap();
        let patch = crop_center_patch(&frames[0], 70).unwrap();
        assert_eq!(map.pixels, patch.pixels);
        assert!(map.shifts.is_empty());
    }

    #[test]
    fn empty_input() {
        assert_eq!(stitch(&[], &StitchParams::default()), Err(Error::EmptyInput("frames")));
    }

    #[test]
    fn shifts_ignore_content_placement_within_band() {
        let (_, frames) = strip_frames(6, 9, 3);
        let moved: Vec<TactileFrame> = frames
            .iter()
            .map(|f| {
                let mut g = GrayImage::new(32, 120);
                for y in 0..119 {
                    for x in 0..32 {
                        g.put_pixel(x, y, *f.pixels.get_pixel(x, y + 1));
                    }
                }
                TactileFrame::from_image(g, f.index)
            })
            .collect();
        let a = stitch(&frames, &StitchParams { patch_height: 60, ..Default::default() }).unwrap();
        let b = stitch(&moved, &StitchParams { patch_height: 60, ..Default::default() }).unwrap();
        let da: Vec<i32> = a.shifts.iter().map(|s| s.dy).collect();
        let db: Vec<i32> = b.shifts.iter().map(|s| s.dy).collect();
        assert_eq!(da, db);
    }
}
