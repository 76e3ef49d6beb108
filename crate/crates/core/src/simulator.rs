//! Synthetic tactile frames with exact ground truth.
//!
//! Every pixel is unprojected onto the cylinder. Its axial position `x` and
//! circumferential arc offset `s = r·φ` from the contact line are mapped to
//! the flat scene by the no-slip rolling map
//! `(scene_x, scene_y) = (x + offset_x, contact_y + s + offset_y)`.
//! Flat scenes (textures, the hemisphere grid) only show where the membrane
//! touches them, i.e. inside the contact band `|s| <= contact_halfwidth`.
//! Tap scenes place contacts directly on the cylinder surface.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::GridSpec;
use crate::error::{Error, Result};
use crate::geometry::{
    project, unproject, CameraIntrinsics, CylinderModel, ExtrinsicPose, PixelPoint, SurfacePoint,
};
use crate::GrayImage;

pub const BACKGROUND: u8 = 20;
pub const FOREGROUND_MIN: f64 = 80.0;
pub const FOREGROUND_MAX: f64 = 255.0;

/// Rendered intensity for a scene value `t` in `[0, 1]`. Zero means the
/// membrane is not pressed and renders as background.
pub fn contact_intensity(t: f64) -> f64 {
    if t <= 0.0 {
        BACKGROUND as f64
    } else {
        FOREGROUND_MIN + (FOREGROUND_MAX - FOREGROUND_MIN) * t.min(1.0)
    }
}

/// Height/intensity field on a regular grid. Texel `(i, j)` sits at
/// `(j·pitch, i·pitch)` mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    width: usize,
    height: usize,
    pitch_mm: f64,
    data: Vec<f32>,
}

impl Texture {
    pub fn new(width: usize, height: usize, pitch_mm: f64, data: Vec<f32>) -> Result<Self> {
        if !(pitch_mm.is_finite() && pitch_mm > 0.0) {
            return Err(Error::InvalidParameter(format!("texture pitch must be positive, got {pitch_mm}")));
        }
        if width < 2 || height < 2 || data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "texture data length {} does not match {width}x{height} (min 2x2)",
                data.len()
            )));
        }
        Ok(Self { width, height, pitch_mm, data })
    }

    pub fn zeros(width_mm: f64, height_mm: f64, pitch_mm: f64) -> Result<Self> {
        let (w, h) = grid_size(width_mm, height_mm, pitch_mm)?;
        Self::new(w, h, pitch_mm, vec![0.0; w * h])
    }

    /// Deterministic fabric-like texture: three octaves of smooth value noise
    /// (4, 2 and 1 mm cells) normalized to `[0.1, 1]`.
    pub fn fabric(width_mm: f64, height_mm: f64, pitch_mm: f64, seed: u64) -> Result<Self> {
        use rand::Rng;
        let (w, h) = grid_size(width_mm, height_mm, pitch_mm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0f64; w * h];
        for (cell, amp) in [(4.0, 0.5), (2.0, 0.3), (1.0, 0.2)] {
            let gw = (width_mm / cell).ceil() as usize + 2;
            let gh = (height_mm / cell).ceil() as usize + 2;
            let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
            for i in 0..h {
                let gy = i as f64 * pitch_mm / cell;
                let (iy, fy) = (gy.floor() as usize, smoothstep(gy.fract()));
                for j in 0..w {
                    let gx = j as f64 * pitch_mm / cell;
                    let (ix, fx) = (gx.floor() as usize, smoothstep(gx.fract()));
                    let l = |x: usize, y: usize| lattice[y * gw + x];
                    let top = l(ix, iy) * (1.0 - fx) + l(ix + 1, iy) * fx;
                    let bot = l(ix, iy + 1) * (1.0 - fx) + l(ix + 1, iy + 1) * fx;
                    data[i * w + j] += amp * (top * (1.0 - fy) + bot * fy);
                }
            }
        }
        let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        let data = data.into_iter().map(|v| (0.1 + 0.9 * (v - lo) / span) as f32).collect();
        Self::new(w, h, pitch_mm, data)
    }

    pub fn pitch_mm(&self) -> f64 {
        self.pitch_mm
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Physical extent `(width_mm, height_mm)`.
    pub fn extent_mm(&self) -> (f64, f64) {
        ((self.width - 1) as f64 * self.pitch_mm, (self.height - 1) as f64 * self.pitch_mm)
    }

    /// Bilinear sample; `None` outside the texture.
    pub fn sample(&self, x_mm: f64, y_mm: f64) -> Option<f64> {
        let gx = x_mm / self.pitch_mm;
        let gy = y_mm / self.pitch_mm;
        let (maxx, maxy) = ((self.width - 1) as f64, (self.height - 1) as f64);
        if !(gx >= 0.0 && gy >= 0.0 && gx <= maxx && gy <= maxy) {
            return None;
        }
        let x0 = (gx.floor() as usize).min(self.width - 2);
        let y0 = (gy.floor() as usize).min(self.height - 2);
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let at = |x: usize, y: usize| self.data[y * self.width + x] as f64;
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
        let bot = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
        Some(top * (1.0 - fy) + bot * fy)
    }

    /// Top-down ground-truth view at `px_per_mm`, using the same intensity
    /// mapping as the renderer. Pixel `(c, r)` images `(c, r) / px_per_mm`.
    pub fn reference_view(&self, px_per_mm: f64) -> GrayImage {
        let (wm, hm) = self.extent_mm();
        let w = (wm * px_per_mm).floor() as u32 + 1;
        let h = (hm * px_per_mm).floor() as u32 + 1;
        GrayImage::from_fn(w, h, |c, r| {
            let t = self.sample(c as f64 / px_per_mm, r as f64 / px_per_mm).unwrap_or(0.0);
            image::Luma([contact_intensity(t).round() as u8])
        })
    }
}

fn grid_size(width_mm: f64, height_mm: f64, pitch_mm: f64) -> Result<(usize, usize)> {
    if !(pitch_mm > 0.0 && width_mm > 0.0 && height_mm > 0.0) {
        return Err(Error::InvalidParameter("texture size and pitch must be positive".into()));
    }
    Ok(((width_mm / pitch_mm).round() as usize + 1, (height_mm / pitch_mm).round() as usize + 1))
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Hemispherical bump profile: 1 at the apex, 0 at and beyond `radius`.
fn dome(dist2: f64, radius: f64) -> f64 {
    let q = dist2 / (radius * radius);
    if q >= 1.0 {
        0.0
    } else {
        (1.0 - q).sqrt()
    }
}

/// A stick tip touching the cylinder at axial position `x` and central angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapContact {
    pub x: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneKind {
    Texture(Texture),
    /// Hemisphere calibration grid; `masked` lists row-major indices that are
    /// not rendered (occluded).
    HemisphereGrid { grid: GridSpec, masked: Vec<usize> },
    Taps { contacts: Vec<TapContact>, radius_mm: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScene {
    pub kind: SceneKind,
    /// Flat-scene coordinates of the nadir point at `contact_y = 0`.
    pub origin_offset: [f64; 2],
}

impl SimScene {
    /// Texture centered across the roller axis, starting at scene row 0.
    pub fn texture(texture: Texture) -> Self {
        let (wm, _) = texture.extent_mm();
        Self { kind: SceneKind::Texture(texture), origin_offset: [wm / 2.0, 0.0] }
    }

    /// Grid centered under the nadir.
    pub fn hemisphere_grid(grid: GridSpec) -> Self {
        Self { kind: SceneKind::HemisphereGrid { grid, masked: Vec::new() }, origin_offset: [0.0, 0.0] }
    }

    pub fn taps(contacts: Vec<TapContact>, radius_mm: f64) -> Self {
        Self { kind: SceneKind::Taps { contacts, radius_mm }, origin_offset: [0.0, 0.0] }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            SceneKind::Texture(_) => Ok(()),
            SceneKind::HemisphereGrid { grid, .. } => grid.validate(),
            SceneKind::Taps { radius_mm, .. } => {
                if *radius_mm > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("tap radius must be positive".into()))
                }
            }
        }
    }

    /// Scene value at surface coordinates (axial `x`, arc offset `s`).
    fn value(&self, x: f64, s: f64, contact_y: f64, cyl: &CylinderModel, halfwidth: f64) -> f64 {
        let [ox, oy] = self.origin_offset;
        match &self.kind {
            SceneKind::Texture(tex) => {
                if s.abs() > halfwidth {
                    return 0.0;
                }
                tex.sample(x + ox, contact_y + s + oy).unwrap_or(0.0)
            }
            SceneKind::HemisphereGrid { grid, masked } => {
                if s.abs() > halfwidth {
                    return 0.0;
                }
                let (fx, fy) = (x + ox, contact_y + s + oy);
                (0..grid.len())
                    .filter(|i| !masked.contains(i))
                    .map(|i| {
                        let c = grid.flat_center(i);
                        dome((fx - c[0]).powi(2) + (fy - c[1]).powi(2), grid.radius_mm)
                    })
                    .fold(0.0, f64::max)
            }
            SceneKind::Taps { contacts, radius_mm } => contacts
                .iter()
                .map(|c| {
                    let sc = cyl.radius() * c.angle;
                    dome((x - c.x).powi(2) + (s - sc).powi(2), *radius_mm)
                })
                .fold(0.0, f64::max),
        }
    }

    /// Surface points of the discrete contacts (grid apexes, tap tips) for
    /// a roll state, inside the contact band where it applies.
    fn contact_points(&self, contact_y: f64, cyl: &CylinderModel, halfwidth: f64) -> Vec<SurfacePoint> {
        let [ox, oy] = self.origin_offset;
        let r = cyl.radius();
        match &self.kind {
            SceneKind::Texture(_) => Vec::new(),
            SceneKind::HemisphereGrid { grid, masked } => (0..grid.len())
                .filter(|i| !masked.contains(i))
                .map(|i| grid.flat_center(i))
                .map(|c| (c[0] - ox, c[1] - contact_y - oy))
                .filter(|&(_, s)| s.abs() <= halfwidth)
                .map(|(x, s)| cyl.point_at(x, s / r))
                .collect(),
            SceneKind::Taps { contacts, .. } => {
                contacts.iter().map(|c| cyl.point_at(c.x, c.angle)).collect()
            }
        }
    }

    fn check_extent(&self, contact_y: f64, halfwidth: f64) -> Result<()> {
        if let SceneKind::Texture(tex) = &self.kind {
            let (_, hm) = tex.extent_mm();
            let y = contact_y + self.origin_offset[1];
            let tol = 1e-9;
            if y - halfwidth < -tol || y + halfwidth > hm + tol {
                return Err(Error::SceneExhausted { contact_y });
            }
        }
        Ok(())
    }
}

/// Position of the roller. Pure rolling: `contact_y = r · roll_angle`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollState {
    pub contact_y: f64,
    pub roll_angle: f64,
    pub pose: ExtrinsicPose,
    pub frame_index: usize,
}

impl RollState {
    pub fn new(contact_y: f64, cyl: &CylinderModel, pose: ExtrinsicPose, frame_index: usize) -> Self {
        Self { contact_y, roll_angle: contact_y / cyl.radius(), pose, frame_index }
    }

    pub fn at_rest(pose: ExtrinsicPose) -> Self {
        Self { contact_y: 0.0, roll_angle: 0.0, pose, frame_index: 0 }
    }
}

/// `n_frames` states evenly spaced from `start_mm` to `end_mm`.
pub fn constant_speed_trajectory(
    start_mm: f64,
    end_mm: f64,
    n_frames: usize,
    pose: ExtrinsicPose,
    cyl: &CylinderModel,
) -> Vec<RollState> {
    let step = if n_frames > 1 { (end_mm - start_mm) / (n_frames - 1) as f64 } else { 0.0 };
    (0..n_frames)
        .map(|i| RollState::new(start_mm + step * i as f64, cyl, pose, i))
        .collect()
}

/// Speed presets: the same traversal completed in 15, 10 or 5 seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RollSpeed {
    Slow,
    Medium,
    Fast,
}

impl RollSpeed {
    pub const ALL: [RollSpeed; 3] = [RollSpeed::Slow, RollSpeed::Medium, RollSpeed::Fast];

    pub fn duration_s(self) -> f64 {
        match self {
            RollSpeed::Slow => 15.0,
            RollSpeed::Medium => 10.0,
            RollSpeed::Fast => 5.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RollSpeed::Slow => "slow",
            RollSpeed::Medium => "medium",
            RollSpeed::Fast => "fast",
        }
    }

    /// Trajectory sampled at `frame_rate` frames per second (plus the
    /// starting frame).
    pub fn trajectory(
        self,
        start_mm: f64,
        end_mm: f64,
        frame_rate: f64,
        pose: ExtrinsicPose,
        cyl: &CylinderModel,
    ) -> Vec<RollState> {
        let intervals = (self.duration_s() * frame_rate).round().max(1.0) as usize;
        constant_speed_trajectory(start_mm, end_mm, intervals + 1, pose, cyl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderOptions {
    pub contact_halfwidth_mm: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { contact_halfwidth_mm: 5.0, noise_sigma: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactTruth {
    pub point: SurfacePoint,
    pub pixel: PixelPoint,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub contact_y: f64,
    pub pose: ExtrinsicPose,
    /// Visible discrete contacts (grid apexes or tap tips).
    pub contacts: Vec<ContactTruth>,
    /// Row shift of the previous frame's contact line (px, real valued).
    pub shift_px: Option<f64>,
}

impl FrameTruth {
    pub fn shift_rounded(&self) -> Option<i32> {
        self.shift_px.map(|s| s.round() as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TactileFrame {
    pub pixels: GrayImage,
    pub index: usize,
    pub truth: FrameTruth,
}

impl TactileFrame {
    /// Wraps a captured image with no ground truth.
    pub fn from_image(pixels: GrayImage, index: usize) -> Self {
        Self { pixels, index, truth: FrameTruth::default() }
    }
}

/// Per-row unprojection for one camera pose: `(φ, depth)` or `None` for rows
/// that do not see the visible half of the cylinder.
struct RowTable {
    rows: Vec<Option<(f64, f64)>>,
}

impl RowTable {
    fn new(k: &CameraIntrinsics, pose: &ExtrinsicPose, cyl: &CylinderModel) -> Result<Self> {
        pose.validate_for(cyl)?;
        let rows = (0..k.height)
            .map(|row| {
                unproject(&PixelPoint::new(k.u0, row as f64), k, pose, cyl).ok().map(|p| {
                    let phi = p.y.atan2(p.z);
                    (phi, cyl.radius() * (phi + pose.theta).cos() + pose.d)
                })
            })
            .collect();
        Ok(Self { rows })
    }
}

pub fn render_frame(
    scene: &SimScene,
    state: &RollState,
    k: &CameraIntrinsics,
    cyl: &CylinderModel,
    opts: &RenderOptions,
) -> Result<TactileFrame> {
    k.validate()?;
    scene.validate()?;
    let table = RowTable::new(k, &state.pose, cyl)?;
    render_with_table(scene, state, k, cyl, opts, &table)
}

fn render_with_table(
    scene: &SimScene,
    state: &RollState,
    k: &CameraIntrinsics,
    cyl: &CylinderModel,
    opts: &RenderOptions,
    table: &RowTable,
) -> Result<TactileFrame> {
    let hw = opts.contact_halfwidth_mm;
    scene.check_extent(state.contact_y, hw)?;
    let r = cyl.radius();
    let mut values = vec![BACKGROUND as f64; (k.width * k.height) as usize];
    for (row, entry) in table.rows.iter().enumerate() {
        let Some((phi, depth)) = *entry else { continue };
        let s = r * phi;
        let line = &mut values[row * k.width as usize..(row + 1) * k.width as usize];
        for (col, px) in line.iter_mut().enumerate() {
            let x = depth * (col as f64 - k.u0) / k.fx;
            *px = contact_intensity(scene.value(x, s, state.contact_y, cyl, hw));
        }
    }
    if opts.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(
            opts.seed ^ (state.frame_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let normal = Normal::new(0.0, opts.noise_sigma)
            .map_err(|e| Error::InvalidParameter(format!("noise sigma: {e}")))?;
        values.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    let pixels = GrayImage::from_raw(
        k.width,
        k.height,
        values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
    )
    .expect("buffer sized to intrinsics");

    let contacts = scene
        .contact_points(state.contact_y, cyl, hw)
        .into_iter()
        .filter_map(|point| {
            let pr = project(&point, k, &state.pose).ok()?;
            k.contains(&pr.pixel).then_some(ContactTruth { point, pixel: pr.pixel })
        })
        .collect();
    Ok(TactileFrame {
        pixels,
        index: state.frame_index,
        truth: FrameTruth { contact_y: state.contact_y, pose: state.pose, contacts, shift_px: None },
    })
}

/// Row displacement, in the current frame, of scene content that sat on the
/// contact line when the roller was `advance_mm` earlier.
pub fn contact_line_shift(
    advance_mm: f64,
    k: &CameraIntrinsics,
    pose: &ExtrinsicPose,
    cyl: &CylinderModel,
) -> Result<f64> {
    let r = cyl.radius();
    let now = project(&cyl.point_at(0.0, 0.0), k, pose)?.pixel.v;
    let moved = project(&cyl.point_at(0.0, -advance_mm / r), k, pose)?.pixel.v;
    Ok(moved - now)
}

/// Renders a trajectory; frames are rendered in parallel and returned in
/// trajectory order, each carrying the ground-truth shift from its
/// predecessor.
pub fn render_roll_sequence(
    scene: &SimScene,
    trajectory: &[RollState],
    k: &CameraIntrinsics,
    cyl: &CylinderModel,
    opts: &RenderOptions,
) -> Result<Vec<TactileFrame>> {
    if trajectory.is_empty() {
        return Err(Error::EmptyInput("trajectory"));
    }
    if trajectory.windows(2).any(|w| w[1].contact_y < w[0].contact_y) {
        return Err(Error::InvalidParameter("trajectory must be monotone in contact_y".into()));
    }
    k.validate()?;
    scene.validate()?;
    let first_pose = trajectory[0].pose;
    let shared = RowTable::new(k, &first_pose, cyl)?;
    let mut frames = trajectory
        .par_iter()
        .map(|state| {
            if state.pose == first_pose {
                render_with_table(scene, state, k, cyl, opts, &shared)
            } else {
                render_frame(scene, state, k, cyl, opts)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    for i in 1..frames.len() {
        let advance = trajectory[i].contact_y - trajectory[i - 1].contact_y;
        frames[i].truth.shift_px = Some(contact_line_shift(advance, k, &trajectory[i].pose, cyl)?);
    }
    Ok(frames)
}

/// Ground-truth alignment pairs for a map stitched from a simulated roll:
/// the nadir column of the first and last frames in the map, and the scene
/// points under the contact line at those frames in a reference view drawn
/// at `px_per_mm`.
pub fn truth_alignment_points(
    offsets: &[i64],
    patch_top_row: u32,
    truth: &[FrameTruth],
    k: &CameraIntrinsics,
    cyl: &CylinderModel,
    origin_offset: [f64; 2],
    px_per_mm: f64,
) -> Result<([PixelPoint; 2], [PixelPoint; 2])> {
    if truth.len() < 2 || offsets.len() != truth.len() {
        return Err(Error::InvalidParameter("need offsets and truth for at least two frames".into()));
    }
    let pick = |i: usize| -> Result<(PixelPoint, PixelPoint)> {
        let nadir = project(&cyl.point_at(0.0, 0.0), k, &truth[i].pose)?.pixel;
        let map = PixelPoint::new(nadir.u, offsets[i] as f64 + nadir.v - patch_top_row as f64);
        let reference = PixelPoint::new(
            origin_offset[0] * px_per_mm,
            (truth[i].contact_y + origin_offset[1]) * px_per_mm,
        );
        Ok((map, reference))
    };
    let (m0, r0) = pick(0)?;
    let (m1, r1) = pick(truth.len() - 1)?;
    Ok(([m0, m1], [r0, r1]))
}
