//! Extrinsic calibration from images of a pressed hemisphere grid.
//!
//! Each frame is binarized, the hemisphere blobs are located with
//! intensity-weighted moments, and the pose `(θ, d)` is fit by minimizing the
//! pixel reprojection error of the grid apexes wrapped onto the cylinder.
//! Per-frame estimates are then averaged.

use nalgebra::{DMatrix, DVector, Matrix2, Rotation3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraIntrinsics, CylinderModel, ExtrinsicPose, PixelPoint, SurfacePoint};
use crate::imaging::{connected_components, gaussian_blur, otsu_level, BinaryMask};
use crate::localization::ThresholdMode;
use crate::simulator::TactileFrame;

/// Rectangular grid of hemispheres. Rows run around the circumference,
/// columns along the cylinder axis; indices are row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub radius_mm: f64,
    pub pitch_mm: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { rows: 2, cols: 5, radius_mm: 1.0, pitch_mm: 10.0 }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows * self.cols < 4 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 4 hemispheres, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.radius_mm > 0.0 && self.pitch_mm > 0.0) {
            return Err(Error::InvalidParameter("grid radius and pitch must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat `(x, y)` of hemisphere `i`, relative to the grid center.
    pub fn flat_center(&self, i: usize) -> [f64; 2] {
        let (row, col) = (i / self.cols, i % self.cols);
        [
            (col as f64 - (self.cols - 1) as f64 / 2.0) * self.pitch_mm,
            (row as f64 - (self.rows - 1) as f64 / 2.0) * self.pitch_mm,
        ]
    }

    /// Apex points wrapped onto the cylinder by arc length, grid centered on
    /// the nadir.
    pub fn object_points(&self, cyl: &CylinderModel) -> Vec<SurfacePoint> {
        (0..self.len())
            .map(|i| {
                let [x, y] = self.flat_center(i);
                cyl.point_at(x, y / cyl.radius())
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectParams {
    pub blur_sigma: f64,
    pub threshold: ThresholdMode,
    pub open_size: u32,
    pub min_area: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self { blur_sigma: 2.0, threshold: ThresholdMode::Otsu, open_size: 3, min_area: 20 }
    }
}

/// Hemisphere centers in row-major order (sorted by row, then by column
/// within each row).
pub fn detect_grid_centers(
    frame: &TactileFrame,
    grid: &GridSpec,
    params: &DetectParams,
) -> Result<Vec<PixelPoint>> {
    grid.validate()?;
    let blurred = gaussian_blur(&frame.pixels, params.blur_sigma);
    let level = match params.threshold {
        ThresholdMode::Otsu => otsu_level(&blurred),
        ThresholdMode::Fixed(t) => t,
    };
    let mask = BinaryMask::threshold(&blurred, level).open(params.open_size);
    let mut centers: Vec<PixelPoint> = connected_components(&mask)
        .into_iter()
        .filter(|c| c.area() >= params.min_area)
        .map(|c| c.weighted_centroid(&frame.pixels))
        .collect();
    // a blank frame thresholds into speckle or a single flat region
    if centers.len() != grid.len() {
        return Err(Error::GridIncomplete { found: centers.len(), expected: grid.len() });
    }
    centers.sort_by(|a, b| a.v.total_cmp(&b.v));
    for row in centers.chunks_mut(grid.cols) {
        row.sort_by(|a, b| a.u.total_cmp(&b.u));
    }
    Ok(centers)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub theta: f64,
    pub d: f64,
    pub reprojection_rmse: f64,
    pub n_points: usize,
    pub iterations: usize,
}

impl PoseEstimate {
    pub fn pose(&self) -> ExtrinsicPose {
        ExtrinsicPose { theta: self.theta, d: self.d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PnpOptions {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub max_escalations: usize,
    /// Solve the unrestricted 6-DOF pose first, then read off θ and d.
    pub full_pose: bool,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self { max_iterations: 100, step_tolerance: 1e-10, max_escalations: 10, full_pose: false }
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Residuals `projected − observed`, interleaved `(u, v)`; `None` if a point
/// falls behind the camera.
fn residuals(
    object: &[SurfacePoint],
    image: &[PixelPoint],
    k: &CameraIntrinsics,
    pose: &ExtrinsicPose,
) -> Option<Vec<f64>> {
    let mut r = Vec::with_capacity(2 * object.len());
    for (p, q) in object.iter().zip(image) {
        let pr = project(p, k, pose).ok()?;
        r.push(pr.pixel.u - q.u);
        r.push(pr.pixel.v - q.v);
    }
    Some(r)
}

/// Analytic Jacobian rows `[∂/∂θ, ∂/∂d]` for `u` and `v` of one point.
pub(crate) fn point_jacobian(p: &SurfacePoint, k: &CameraIntrinsics, pose: &ExtrinsicPose) -> [[f64; 2]; 2] {
    let [x, yc, zc] = pose.to_camera(p);
    let z2 = zc * zc;
    // ∂Zc/∂θ = −Yc, ∂Yc/∂θ = Zc − d
    let du_dtheta = k.fx * x * yc / z2;
    let du_dd = -k.fx * x / z2;
    let dv_dtheta = k.fy * ((zc - pose.d) * zc + yc * yc) / z2;
    let dv_dd = -k.fy * yc / z2;
    [[du_dtheta, du_dd], [dv_dtheta, dv_dd]]
}

/// Levenberg–Marquardt over the restricted pose `(θ, d)`.
pub fn solve_pnp(
    object_points: &[SurfacePoint],
    image_points: &[PixelPoint],
    k: &CameraIntrinsics,
    init: &ExtrinsicPose,
    opts: &PnpOptions,
) -> Result<PoseEstimate> {
    if object_points.len() != image_points.len() {
        return Err(Error::InvalidParameter(format!(
            "{} object points vs {} image points",
            object_points.len(),
            image_points.len()
        )));
    }
    if object_points.len() < 4 {
        return Err(Error::InsufficientPoints { required: 4, got: object_points.len() });
    }
    init.validate()?;
    if opts.full_pose {
        return solve_pnp_full(object_points, image_points, k, init, opts);
    }

    let mut pose = *init;
    let mut res = residuals(object_points, image_points, k, &pose).ok_or(Error::NonPositiveDepth { depth: 0.0 })?;
    let mut cost = sum_sq(&res);
    let mut lambda = 1e-3;
    let mut iterations = 0;

    while iterations < opts.max_iterations && cost > 0.0 {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for (i, p) in object_points.iter().enumerate() {
            let jac = point_jacobian(p, k, &pose);
            for (row, rv) in jac.iter().zip([res[2 * i], res[2 * i + 1]]) {
                let j = Vector2::new(row[0], row[1]);
                jtj += j * j.transpose();
                jtr += j * rv;
            }
        }
        if jtr.norm() == 0.0 {
            break;
        }
        iterations += 1;
        let mut escalations = 0;
        let converged = loop {
            let mut damped = jtj;
            damped[(0, 0)] += lambda * jtj[(0, 0)].max(1e-12);
            damped[(1, 1)] += lambda * jtj[(1, 1)].max(1e-12);
            let step = damped
                .lu()
                .solve(&(-jtr))
                .ok_or_else(|| Error::InvalidParameter("singular normal equations".into()))?;
            let candidate = ExtrinsicPose { theta: pose.theta + step[0], d: pose.d + step[1] };
            let trial = residuals(object_points, image_points, k, &candidate)
                .filter(|_| candidate.theta.abs() < std::f64::consts::FRAC_PI_2);
            match trial {
                Some(r) if sum_sq(&r) < cost => {
                    pose = candidate;
                    cost = sum_sq(&r);
                    res = r;
                    lambda = (lambda * 0.1).max(1e-12);
                    break step.norm() < opts.step_tolerance;
                }
                _ => {
                    if step.norm() < opts.step_tolerance {
                        break true;
                    }
                    escalations += 1;
                    if escalations >= opts.max_escalations {
                        return Err(Error::SolverDiverged { iterations });
                    }
                    lambda *= 10.0;
                }
            }
        };
        if converged {
            break;
        }
    }

    Ok(PoseEstimate {
        theta: pose.theta,
        d: pose.d,
        reprojection_rmse: (cost / object_points.len() as f64).sqrt(),
        n_points: object_points.len(),
        iterations,
    })
}

/// Unrestricted pose `X_c = R X_w + t` with R from a rotation vector.
fn full_residuals(
    object: &[SurfacePoint],
    image: &[PixelPoint],
    k: &CameraIntrinsics,
    params: &DVector<f64>,
) -> Option<Vec<f64>> {
    let rot = Rotation3::from_scaled_axis(Vector3::new(params[0], params[1], params[2]));
    let t = Vector3::new(params[3], params[4], params[5]);
    let mut r = Vec::with_capacity(2 * object.len());
    for (p, q) in object.iter().zip(image) {
        let c = rot * Vector3::new(p.x, p.y, p.z) + t;
        if !(c.z > 0.0) {
            return None;
        }
        r.push(k.u0 + k.fx * c.x / c.z - q.u);
        r.push(k.v0 + k.fy * c.y / c.z - q.v);
    }
    Some(r)
}

fn solve_pnp_full(
    object_points: &[SurfacePoint],
    image_points: &[PixelPoint],
    k: &CameraIntrinsics,
    init: &ExtrinsicPose,
    opts: &PnpOptions,
) -> Result<PoseEstimate> {
    // R_x as used by the projection model is a rotation by −θ about +x
    let mut params = DVector::from_vec(vec![-init.theta, 0.0, 0.0, 0.0, 0.0, init.d]);
    let eval = |p: &DVector<f64>| full_residuals(object_points, image_points, k, p);
    let mut res = eval(&params).ok_or(Error::NonPositiveDepth { depth: 0.0 })?;
    let mut cost = sum_sq(&res);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let n = res.len();

    while iterations < opts.max_iterations && cost > 0.0 {
        let mut jac = DMatrix::zeros(n, 6);
        for c in 0..6 {
            let h = 1e-7 * params[c].abs().max(1.0);
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[c] += h;
            minus[c] -= h;
            let (Some(rp), Some(rm)) = (eval(&plus), eval(&minus)) else {
                return Err(Error::NonPositiveDepth { depth: 0.0 });
            };
            for i in 0..n {
                jac[(i, c)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let r = DVector::from_vec(res.clone());
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * r;
        if jtr.norm() == 0.0 {
            break;
        }
        iterations += 1;
        let mut escalations = 0;
        let converged = loop {
            let mut damped = jtj.clone();
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let step = damped
                .lu()
                .solve(&(-&jtr))
                .ok_or_else(|| Error::InvalidParameter("singular normal equations".into()))?;
            let candidate = &params + &step;
            match eval(&candidate) {
                Some(r) if sum_sq(&r) < cost => {
                    params = candidate;
                    cost = sum_sq(&r);
                    res = r;
                    lambda = (lambda * 0.1).max(1e-12);
                    break step.norm() < opts.step_tolerance;
                }
                _ => {
                    if step.norm() < opts.step_tolerance {
                        break true;
                    }
                    escalations += 1;
                    if escalations >= opts.max_escalations {
                        return Err(Error::SolverDiverged { iterations });
                    }
                    lambda *= 10.0;
                }
            }
        };
        if converged {
            break;
        }
    }

    let rot = Rotation3::from_scaled_axis(Vector3::new(params[0], params[1], params[2]));
    let m = rot.matrix();
    let theta = m[(1, 2)].atan2(m[(1, 1)]);
    let d = params[5];
    // report the error of the restricted pose that is actually returned
    let restricted = ExtrinsicPose { theta, d };
    let rest = residuals(object_points, image_points, k, &restricted)
        .ok_or(Error::NonPositiveDepth { depth: 0.0 })?;
    Ok(PoseEstimate {
        theta,
        d,
        reprojection_rmse: (sum_sq(&rest) / object_points.len() as f64).sqrt(),
        n_points: object_points.len(),
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCalibration {
    pub index: usize,
    pub estimate: Option<PoseEstimate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub pose: ExtrinsicPose,
    pub theta_std: f64,
    pub d_std: f64,
    pub valid_frames: usize,
    pub rejected_frames: usize,
    pub frames: Vec<FrameCalibration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationOptions {
    pub detect: DetectParams,
    pub pnp: PnpOptions,
    pub init: ExtrinsicPose,
}

/// Detects the grid in every frame and averages the per-frame poses.
pub fn calibrate(
    frames: &[TactileFrame],
    grid: &GridSpec,
    k: &CameraIntrinsics,
    cyl: &CylinderModel,
    opts: &CalibrationOptions,
) -> Result<CalibrationReport> {
    let detections: Vec<(usize, Result<Vec<PixelPoint>>)> = frames
        .par_iter()
        .map(|f| (f.index, detect_grid_centers(f, grid, &opts.detect)))
        .collect();
    calibrate_detections(&detections, grid, k, cyl, opts)
}

/// Averaging stage of [`calibrate`] over precomputed detections.
pub fn calibrate_detections(
    detections: &[(usize, Result<Vec<PixelPoint>>)],
    grid: &GridSpec,
    k: &CameraIntrinsics,
    cyl: &CylinderModel,
    opts: &CalibrationOptions,
) -> Result<CalibrationReport> {
    let object = grid.object_points(cyl);
    let frames: Vec<FrameCalibration> = detections
        .par_iter()
        .map(|(index, det)| {
            let result = det
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|pts| solve_pnp(&object, pts, k, &opts.init, &opts.pnp));
            match result {
                Ok(est) => FrameCalibration { index: *index, estimate: Some(est), error: None },
                Err(e) => FrameCalibration { index: *index, estimate: None, error: Some(e.to_string()) },
            }
        })
        .collect();

    let valid: Vec<&PoseEstimate> = frames.iter().filter_map(|f| f.estimate.as_ref()).collect();
    if valid.is_empty() {
        return Err(Error::NoValidFrames);
    }
    let n = valid.len() as f64;
    let theta = valid.iter().map(|e| e.theta).sum::<f64>() / n;
    let d = valid.iter().map(|e| e.d).sum::<f64>() / n;
    let theta_std = (valid.iter().map(|e| (e.theta - theta).powi(2)).sum::<f64>() / n).sqrt();
    let d_std = (valid.iter().map(|e| (e.d - d).powi(2)).sum::<f64>() / n).sqrt();
    Ok(CalibrationReport {
        pose: ExtrinsicPose { theta, d },
        theta_std,
        d_std,
        valid_frames: valid.len(),
        rejected_frames: frames.len() - valid.len(),
        frames,
    })
}
