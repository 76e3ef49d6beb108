use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::Patch;
use crate::error::{Error, Result};
use crate::GrayImage;

/// Inclusive integer search interval for the row shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftRange {
    pub min: i32,
    pub max: i32,
}

impl Default for ShiftRange {
    fn default() -> Self {
        Self { min: -25, max: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftEstimate {
    /// Row shift such that `b[i] ≈ a[i − dy]`; negative when content moves up.
    pub dy: i32,
    pub mae_at_dy: f64,
    /// `(candidate, MAE)` for every candidate with overlapping rows.
    pub mae_curve: Vec<(i32, f64)>,
    /// False when another candidate reached exactly the same MAE.
    pub unique: bool,
    /// Parabolic refinement of `dy`, when requested.
    pub subpixel: Option<f64>,
}

impl ShiftEstimate {
    /// Shift used for placement: the refined value when present.
    pub fn placement(&self) -> f64 {
        self.subpixel.unwrap_or(self.dy as f64)
    }
}

pub fn find_shift(a: &Patch, b: &Patch, range: ShiftRange, refine: bool) -> Result<ShiftEstimate> {
    find_shift_images(&a.pixels, &b.pixels, range, refine)
}

/// Exhaustive integer search minimizing the mean absolute difference over
/// the overlapping rows. Ties go to the smaller |dy|, then to the negative.
pub fn find_shift_images(
    a: &GrayImage,
    b: &GrayImage,
    range: ShiftRange,
    refine: bool,
) -> Result<ShiftEstimate> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::DimensionMismatch { left: a.dimensions(), right: b.dimensions() });
    }
    if range.min > range.max {
        return Err(Error::InvalidParameter(format!("empty shift range {}..={}", range.min, range.max)));
    }
    let (w, h) = (a.width() as usize, a.height() as i64);
    let (ar, br) = (a.as_raw(), b.as_raw());

    // (dy, sum of |diff|, pixel count)
    let mut costs: Vec<(i32, u64, u64)> = Vec::new();
    for dy in range.min..=range.max {
        let lo = (dy as i64).max(0);
        let hi = (h + dy as i64).min(h);
        if hi <= lo || w == 0 {
            continue;
        }
        let mut sum = 0u64;
        for i in lo..hi {
            let brow = &br[i as usize * w..(i as usize + 1) * w];
            let j = (i - dy as i64) as usize;
            let arow = &ar[j * w..(j + 1) * w];
            sum += arow.iter().zip(brow).map(|(&p, &q)| p.abs_diff(q) as u64).sum::<u64>();
        }
        costs.push((dy, sum, (hi - lo) as u64 * w as u64));
    }
    if costs.is_empty() {
        return Err(Error::NoOverlap);
    }

    let cmp_cost = |x: &(i32, u64, u64), y: &(i32, u64, u64)| {
        (x.1 as u128 * y.2 as u128).cmp(&(y.1 as u128 * x.2 as u128))
    };
    let preferred = |x: &(i32, u64, u64), y: &(i32, u64, u64)| {
        cmp_cost(x, y)
            .then(x.0.unsigned_abs().cmp(&y.0.unsigned_abs()))
            .then(x.0.cmp(&y.0))
    };
    let best = *costs.iter().min_by(|x, y| preferred(x, y)).expect("non-empty");
    let unique = costs.iter().filter(|c| cmp_cost(c, &best) == Ordering::Equal).count() == 1;
    let mae = |c: &(i32, u64, u64)| c.1 as f64 / c.2 as f64;
    let curve: Vec<(i32, f64)> = costs.iter().map(|c| (c.0, mae(c))).collect();

    let subpixel = refine.then(|| {
        let at = |dy: i32| curve.iter().find(|c| c.0 == dy).map(|c| c.1);
        match (at(best.0 - 1), at(best.0 + 1)) {
            (Some(l), Some(r)) => {
                let c = mae(&best);
                let denom = l - 2.0 * c + r;
                if denom > 0.0 {
                    best.0 as f64 + (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
                } else {
                    best.0 as f64
                }
            }
            _ => best.0 as f64,
        }
    });

    Ok(ShiftEstimate { dy: best.0, mae_at_dy: mae(&best), mae_curve: curve, unique, subpixel })
}
