//! Contact localization: threshold the tactile image, extract contact
//! regions, and unproject their centroids onto the cylinder.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{
    central_angle, unproject, CameraIntrinsics, CylinderModel, ExtrinsicPose, PixelPoint, SurfacePoint,
};
use crate::imaging::{connected_components, gaussian_blur, otsu_level, BinaryMask, BoundingBox};
use crate::simulator::{SimScene, TapContact, TactileFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Otsu,
    Fixed(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessParams {
    pub blur_sigma: f64,
    pub threshold: ThresholdMode,
    /// Treat dark pixels as contact.
    pub invert: bool,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        Self { blur_sigma: 2.0, threshold: ThresholdMode::Otsu, invert: false }
    }
}

/// Binary contact mask and the threshold level that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub mask: BinaryMask,
    pub level: u8,
}

/// Blur then threshold. A frame with no contrast yields an empty mask.
pub fn preprocess(frame: &TactileFrame, params: &PreprocessParams) -> Preprocessed {
    let mut img = frame.pixels.clone();
    if params.invert {
        img.iter_mut().for_each(|p| *p = 255 - *p);
    }
    let blurred = gaussian_blur(&img, params.blur_sigma);
    let level = match params.threshold {
        ThresholdMode::Otsu => otsu_level(&blurred),
        ThresholdMode::Fixed(t) => t,
    };
    Preprocessed { mask: BinaryMask::threshold(&blurred, level), level }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactRegion {
    pub centroid: PixelPoint,
    pub area: usize,
    pub bbox: BoundingBox,
    #[serde(skip)]
    pub pixels: Vec<(u32, u32)>,
}

/// Connected regions with at least `min_area` pixels, largest first.
pub fn find_contact_regions(mask: &BinaryMask, min_area: usize) -> Vec<ContactRegion> {
    let mut regions: Vec<ContactRegion> = connected_components(mask)
        .into_iter()
        .filter(|c| c.area() >= min_area)
        .map(|c| ContactRegion { centroid: c.centroid(), area: c.area(), bbox: c.bbox, pixels: c.pixels })
        .collect();
    regions.sort_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then(a.centroid.v.total_cmp(&b.centroid.v))
            .then(a.centroid.u.total_cmp(&b.centroid.u))
    });
    regions
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizeParams {
    pub preprocess: PreprocessParams,
    pub min_area: usize,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        Self { preprocess: PreprocessParams::default(), min_area: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactEstimate {
    pub pixel: PixelPoint,
    pub area: usize,
    pub point: SurfacePoint,
    pub central_angle: f64,
    pub axial_position: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRegion {
    pub pixel: PixelPoint,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub threshold_level: u8,
    pub estimates: Vec<ContactEstimate>,
    pub skipped: Vec<SkippedRegion>,
}

pub fn localize_contacts(
    frame: &TactileFrame,
    k: &CameraIntrinsics,
    pose: &ExtrinsicPose,
    cyl: &CylinderModel,
    params: &LocalizeParams,
) -> Result<Localization> {
    pose.validate_for(cyl)?;
    let pre = preprocess(frame, &params.preprocess);
    let regions = find_contact_regions(&pre.mask, params.min_area);
    let mut estimates = Vec::with_capacity(regions.len());
    let mut skipped = Vec::new();
    for region in regions {
        match locate_pixel(&region.centroid, k, pose, cyl) {
            Ok((point, angle)) => estimates.push(ContactEstimate {
                pixel: region.centroid,
                area: region.area,
                point,
                central_angle: angle,
                axial_position: point.x,
            }),
            Err(e) => skipped.push(SkippedRegion { pixel: region.centroid, reason: e.to_string() }),
        }
    }
    Ok(Localization { threshold_level: pre.level, estimates, skipped })
}

/// Unprojects a single contact pixel; returns the point and its central angle.
pub fn locate_pixel(
    px: &PixelPoint,
    k: &CameraIntrinsics,
    pose: &ExtrinsicPose,
    cyl: &CylinderModel,
) -> Result<(SurfacePoint, f64)> {
    let point = unproject(px, k, pose, cyl)?;
    let angle = central_angle(&point)?;
    Ok((point, angle))
}

/// Tap experiment layout: contact angles × axial fractions of the roller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TapLayout {
    pub angles: Vec<f64>,
    pub axial_fractions: Vec<f64>,
    pub sensor_length_mm: f64,
    pub stick_radius_mm: f64,
}

impl Default for TapLayout {
    fn default() -> Self {
        Self {
            angles: vec![-PI / 6.0, -PI / 12.0, 0.0, PI / 12.0, PI / 6.0],
            axial_fractions: vec![0.25, 0.5, 0.75],
            sensor_length_mm: 100.0,
            stick_radius_mm: 1.5,
        }
    }
}

/// Ground-truth contact with its report cell `(angle index, axial index)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledContact {
    pub point: SurfacePoint,
    pub cell: (usize, usize),
}

/// One press of the three-stick solid.
#[derive(Debug, Clone, PartialEq)]
pub struct TapPress {
    pub scene: SimScene,
    pub truth: Vec<LabeledContact>,
}

impl TapLayout {
    pub fn axial_position(&self, fraction: f64) -> f64 {
        (fraction - 0.5) * self.sensor_length_mm
    }

    /// The solid touches three consecutive angles at once; it is placed from
    /// the front (lowest angles) and from the back (highest angles) at every
    /// axial position.
    pub fn presses(&self, cyl: &CylinderModel) -> Vec<TapPress> {
        let n = self.angles.len();
        let sticks = n.min(3);
        let mut starts = vec![0];
        if n > sticks {
            starts.push(n - sticks);
        }
        let mut out = Vec::new();
        for (ai, &frac) in self.axial_fractions.iter().enumerate() {
            let x = self.axial_position(frac);
            for &start in &starts {
                let idx: Vec<usize> = (start..start + sticks).collect();
                let contacts = idx.iter().map(|&i| TapContact { x, angle: self.angles[i] }).collect();
                let truth = idx
                    .iter()
                    .map(|&i| LabeledContact { point: cyl.point_at(x, self.angles[i]), cell: (i, ai) })
                    .collect();
                out.push(TapPress { scene: SimScene::taps(contacts, self.stick_radius_mm), truth });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub angle: f64,
    pub axial_fraction: f64,
    pub count: usize,
    pub mean_mm: f64,
    pub std_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedContact {
    pub estimate: usize,
    pub truth: usize,
    pub error_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    /// Row-major over `(angle, axial fraction)`.
    pub cells: Vec<CellStats>,
    pub matches: Vec<MatchedContact>,
    pub unmatched_estimates: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
    pub mean_mm: f64,
    pub std_mm: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Greedy one-to-one nearest-neighbour matching within `gate_mm`, then
/// per-cell Euclidean error statistics.
pub fn evaluate_localization(
    estimates: &[ContactEstimate],
    truth: &[LabeledContact],
    layout: &TapLayout,
    gate_mm: f64,
) -> LocalizationReport {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ei, e) in estimates.iter().enumerate() {
        for (ti, t) in truth.iter().enumerate() {
            let dist = e.point.distance(&t.point);
            if dist <= gate_mm {
                pairs.push((dist, ei, ti));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut est_used = vec![false; estimates.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut matches = Vec::new();
    for (dist, ei, ti) in pairs {
        if est_used[ei] || truth_used[ti] {
            continue;
        }
        est_used[ei] = true;
        truth_used[ti] = true;
        matches.push(MatchedContact { estimate: ei, truth: ti, error_mm: dist });
    }
    matches.sort_by_key(|m| m.truth);

    let n_ax = layout.axial_fractions.len();
    let mut per_cell = vec![Vec::new(); layout.angles.len() * n_ax];
    for m in &matches {
        let (a, x) = truth[m.truth].cell;
        if a < layout.angles.len() && x < n_ax {
            per_cell[a * n_ax + x].push(m.error_mm);
        }
    }
    let cells = per_cell
        .iter()
        .enumerate()
        .map(|(i, errs)| {
            let (mean_mm, std_mm) = mean_std(errs);
            CellStats {
                angle: layout.angles[i / n_ax],
                axial_fraction: layout.axial_fractions[i % n_ax],
                count: errs.len(),
                mean_mm,
                std_mm,
            }
        })
        .collect();
    let all: Vec<f64> = matches.iter().map(|m| m.error_mm).collect();
    let (mean_mm, std_mm) = mean_std(&all);
    LocalizationReport {
        cells,
        matches,
        unmatched_estimates: (0..estimates.len()).filter(|&i| !est_used[i]).collect(),
        unmatched_truth: (0..truth.len()).filter(|&i| !truth_used[i]).collect(),
        mean_mm,
        std_mm,
    }
}

/// Errors (mean, std in mm) measured on the physical prototype, by angle row
/// (−π/6 … π/6) and axial column (1/4, 1/2, 3/4 length). Kept as a hardware
/// reference for reports; a rigid-cylinder simulation does not reproduce the
/// elastomer-thickness effects behind these magnitudes.
pub const HARDWARE_REFERENCE_MM: [[(f64, f64); 3]; 5] = [
    [(9.64, 0.09), (11.13, 0.06), (13.75, 1.89)],
    [(7.53, 0.19), (4.50, 0.08), (8.26, 1.46)],
    [(5.00, 0.59), (2.63, 0.74), (6.89, 0.79)],
    [(6.42, 0.32), (4.06, 0.26), (6.66, 0.53)],
    [(8.83, 0.10), (8.58, 0.19), (12.34, 0.21)],
];
