//! Cylinder-surface projection model.
//!
//! World frame: x along the cylinder axis, z pointing vertically down toward
//! the contact, origin at the cylinder center. The camera sits at the origin
//! looking along +z and is displaced by a rotation `theta` about x and a
//! vertical translation `d`:
//!
//! ```text
//! Xc = Xw
//! Yc =  Yw cos θ + Zw sin θ
//! Zc = -Yw sin θ + Zw cos θ + d      (= λ, the projective depth)
//! u  = u0 + fx Xc / Zc
//! v  = v0 + fy Yc / Zc
//! ```
//!
//! which multiplied out by λ gives the scalar system used by the tactile
//! pipeline. Surface points satisfy `Yw² + Zw² = r²`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bisection tolerance for the fallback root finder (radians).
const BISECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderModel {
    radius: f64,
}

impl CylinderModel {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "cylinder radius must be positive, got {radius}"
            )));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Surface point at axial position `x` and central angle `phi` (measured
    /// from +z toward +y).
    pub fn point_at(&self, x: f64, phi: f64) -> SurfacePoint {
        SurfacePoint::new(x, self.radius * phi.sin(), self.radius * phi.cos())
    }

    pub fn contains(&self, p: &SurfacePoint) -> bool {
        let r2 = self.radius * self.radius;
        ((p.y * p.y + p.z * p.z) - r2).abs() <= 1e-9 * r2.max(1.0) * 2.0
    }
}

impl Default for CylinderModel {
    /// 100 mm diameter roller.
    fn default() -> Self {
        Self { radius: 50.0 }
    }
}

/// Pinhole intrinsics. `fx`, `fy` are the focal length divided by the pixel
/// pitch; the physical focal length is never needed separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, u0: f64, v0: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self { fx, fy, u0, v0, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.u0 >= 0.0 && self.u0 < self.width as f64) {
            return Err(Error::InvalidParameter(format!(
                "u0={} outside [0, {})",
                self.u0, self.width
            )));
        }
        if !(self.v0 >= 0.0 && self.v0 < self.height as f64) {
            return Err(Error::InvalidParameter(format!(
                "v0={} outside [0, {})",
                self.v0, self.height
            )));
        }
        Ok(())
    }

    pub fn contains(&self, px: &PixelPoint) -> bool {
        px.u >= 0.0
            && px.v >= 0.0
            && px.u <= (self.width - 1) as f64
            && px.v <= (self.height - 1) as f64
    }
}

impl Default for CameraIntrinsics {
    /// 640×480 camera used by the simulator.
    fn default() -> Self {
        Self { fx: 360.0, fy: 360.0, u0: 320.0, v0: 240.0, width: 640, height: 480 }
    }
}

/// Restricted extrinsics: rotation about the cylinder axis and vertical
/// translation of the optical center.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrinsicPose {
    pub theta: f64,
    pub d: f64,
}

impl ExtrinsicPose {
    pub fn new(theta: f64, d: f64) -> Result<Self> {
        let pose = Self { theta, d };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.theta.abs() < FRAC_PI_2) {
            return Err(Error::InvalidParameter(format!(
                "|theta| must be below pi/2, got {}",
                self.theta
            )));
        }
        if !self.d.is_finite() {
            return Err(Error::InvalidParameter("d must be finite".into()));
        }
        Ok(())
    }

    /// Checks the pose against a cylinder: the optical center must stay inside.
    pub fn validate_for(&self, cyl: &CylinderModel) -> Result<()> {
        self.validate()?;
        if self.d.abs() >= cyl.radius() {
            return Err(Error::InvalidParameter(format!(
                "|d|={} must be below the cylinder radius {}",
                self.d.abs(),
                cyl.radius()
            )));
        }
        Ok(())
    }

    /// World point to camera coordinates.
    pub fn to_camera(&self, p: &SurfacePoint) -> [f64; 3] {
        let (s, c) = self.theta.sin_cos();
        [p.x, p.y * c + p.z * s, -p.y * s + p.z * c + self.d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SurfacePoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &SurfacePoint) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2))
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
}

impl PixelPoint {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Result of [`project`]: the pixel and the projective depth λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: PixelPoint,
    pub depth: f64,
}

pub fn project(p: &SurfacePoint, k: &CameraIntrinsics, pose: &ExtrinsicPose) -> Result<Projection> {
    let [xc, yc, zc] = pose.to_camera(p);
    if !(zc > 0.0) {
        return Err(Error::NonPositiveDepth { depth: zc });
    }
    Ok(Projection {
        pixel: PixelPoint::new(k.u0 + k.fx * xc / zc, k.v0 + k.fy * yc / zc),
        depth: zc,
    })
}

/// Inverse of [`project`] on the visible (Zw > 0) half of the cylinder.
///
/// With `Yw = r sin φ`, `Zw = r cos φ` and `ψ = φ + θ` the row equation becomes
/// `fy r sin ψ − (v − v0) r cos ψ = (v − v0) d`, solved by harmonic addition.
/// The two roots are the two intersections of the viewing plane with the
/// circle; exactly one lies in front of the camera because the optical center
/// is inside the cylinder.
pub fn unproject(
    px: &PixelPoint,
    k: &CameraIntrinsics,
    pose: &ExtrinsicPose,
    cyl: &CylinderModel,
) -> Result<SurfacePoint> {
    pose.validate_for(cyl)?;
    let dv = px.v - k.v0;
    let phi = if dv == 0.0 && pose.d != 0.0 {
        solve_phi_bisection(px, k, pose, cyl)?
    } else {
        solve_phi_closed_form(px, k, pose, cyl)?
    };
    finish_unproject(px, k, pose, cyl, phi)
}

fn finish_unproject(
    px: &PixelPoint,
    k: &CameraIntrinsics,
    pose: &ExtrinsicPose,
    cyl: &CylinderModel,
    phi: f64,
) -> Result<SurfacePoint> {
    let r = cyl.radius();
    if !(phi.cos() > 0.0) {
        return Err(Error::NoVisibleSolution { u: px.u, v: px.v });
    }
    let depth = r * (phi + pose.theta).cos() + pose.d;
    debug_assert!(depth > 0.0);
    let x = depth * (px.u - k.u0) / k.fx;
    Ok(cyl.point_at(x, phi))
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

pub(crate) fn solve_phi_closed_form(
    px: &PixelPoint,
    k: &CameraIntrinsics,
    pose: &ExtrinsicPose,
    cyl: &CylinderModel,
) -> Result<f64> {
    let r = cyl.radius();
    let dv = px.v - k.v0;
    let a = k.fy * r;
    let b = dv * r;
    let c = dv * pose.d;
    let amp = a.hypot(b);
    let s = c / amp;
    if !s.is_finite() || s.abs() > 1.0 {
        return Err(Error::NoVisibleSolution { u: px.u, v: px.v });
    }
    let delta = b.atan2(a);
    let base = s.asin();
    let mut front = [delta + base, delta + PI - base]
        .into_iter()
        .filter(|psi| r * psi.cos() + pose.d > 0.0);
    let psi = front.next().ok_or(Error::NoVisibleSolution { u: px.u, v: px.v })?;
    assert!(
        front.next().is_none(),
        "two front-facing solutions; optical center must be inside the cylinder"
    );
    Ok(wrap_angle(psi - pose.theta))
}

/// Bracketed root of the row equation over φ ∈ (−π/2, π/2).
pub(crate) fn solve_phi_bisection(
    px: &PixelPoint,
    k: &CameraIntrinsics,
    pose: &ExtrinsicPose,
    cyl: &CylinderModel,
) -> Result<f64> {
    let r = cyl.radius();
    let dv = px.v - k.v0;
    let f = |phi: f64| {
        let psi = phi + pose.theta;
        k.fy * r * psi.sin() - dv * (r * psi.cos() + pose.d)
    };
    // stay strictly inside the visible branch
    let eps = 1e-9;
    let (mut lo, mut hi) = (-FRAC_PI_2 + eps, FRAC_PI_2 - eps);
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoVisibleSolution { u: px.u, v: px.v });
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let phi = 0.5 * (lo + hi);
    if r * (phi + pose.theta).cos() + pose.d <= 0.0 {
        return Err(Error::NoVisibleSolution { u: px.u, v: px.v });
    }
    Ok(phi)
}

/// Angle between +z and the radius through `p`, positive toward +y.
pub fn central_angle(p: &SurfacePoint) -> Result<f64> {
    if p.y == 0.0 && p.z == 0.0 {
        return Err(Error::DegeneratePoint);
    }
    Ok(p.y.atan2(p.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix3x4, Matrix4, Vector4};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_6;

    fn cam500() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    /// λ[u v 1]ᵀ = K [R t; 0 1] [X 1]ᵀ, built as explicit matrices.
    fn matrix_oracle(p: &SurfacePoint, k: &CameraIntrinsics, pose: &ExtrinsicPose) -> (f64, f64, f64) {
        let (s, c) = pose.theta.sin_cos();
        let kmat = Matrix3x4::new(
            k.fx, 0.0, k.u0, 0.0, //
            0.0, k.fy, k.v0, 0.0, //
            0.0, 0.0, 1.0, 0.0,
        );
        let ext = Matrix4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, c, s, 0.0, //
            0.0, -s, c, pose.d, //
            0.0, 0.0, 0.0, 1.0,
        );
        let h = kmat * ext * Vector4::new(p.x, p.y, p.z, 1.0);
        (h[0] / h[2], h[1] / h[2], h[2])
    }

    #[test]
    fn nadir_maps_to_principal_point() {
        let pr = project(&SurfacePoint::new(0.0, 0.0, 50.0), &cam500(), &ExtrinsicPose::identity())
            .unwrap();
        assert_eq!(pr.pixel, PixelPoint::new(320.0, 240.0));
        assert_eq!(pr.depth, 50.0);
    }

    #[test]
    fn oblique_point_matches_direct_substitution() {
        let a = PI / 12.0;
        let p = SurfacePoint::new(10.0, 50.0 * a.sin(), 50.0 * a.cos());
        let pr = project(&p, &cam500(), &ExtrinsicPose::identity()).unwrap();
        let (u, v, lam) = matrix_oracle(&p, &cam500(), &ExtrinsicPose::identity());
        assert_abs_diff_eq!(pr.pixel.u, 320.0 + 5000.0 / (50.0 * a.cos()), epsilon = 1e-9);
        assert_abs_diff_eq!(pr.pixel.v, 240.0 + 500.0 * 50.0 * a.sin() / (50.0 * a.cos()), epsilon = 1e-9);
        assert_abs_diff_eq!(pr.pixel.u, u, epsilon = 1e-9);
        assert_abs_diff_eq!(pr.pixel.v, v, epsilon = 1e-9);
        assert_abs_diff_eq!(pr.depth, lam, epsilon = 1e-12);
        // frozen from the matrix oracle
        assert_abs_diff_eq!(pr.pixel.u, 423.527618041008, epsilon = 1e-9);
        assert_abs_diff_eq!(pr.pixel.v, 373.974596215561, epsilon = 1e-9);
    }

    #[test]
    fn rotated_and_translated_pose_matches_oracle() {
        let p = SurfacePoint::new(0.0, 0.0, 50.0);
        let pose = ExtrinsicPose::new(0.1, 2.0).unwrap();
        let pr = project(&p, &cam500(), &pose).unwrap();
        let (u, v, lam) = matrix_oracle(&p, &cam500(), &pose);
        assert_abs_diff_eq!(pr.pixel.u, u, epsilon = 1e-9);
        assert_abs_diff_eq!(pr.pixel.v, v, epsilon = 1e-9);
        assert_abs_diff_eq!(pr.depth, lam, epsilon = 1e-12);
        assert_abs_diff_eq!(pr.pixel.v, 240.0 + 500.0 * 50.0 * 0.1f64.sin() / (50.0 * 0.1f64.cos() + 2.0), epsilon = 1e-9);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let err = project(&SurfacePoint::new(0.0, 0.0, -50.0), &cam500(), &ExtrinsicPose::identity())
            .unwrap_err();
        assert!(matches!(err, Error::NonPositiveDepth { .. }));
    }

    #[test]
    fn principal_point_unprojects_to_nadir() {
        let cyl = CylinderModel::new(50.0).unwrap();
        let p = unproject(&PixelPoint::new(320.0, 240.0), &cam500(), &ExtrinsicPose::identity(), &cyl)
            .unwrap();
        assert_abs_diff_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.z, 50.0, epsilon = 1e-12);
    }

    #[test]
    fn extreme_test_angle_is_recovered() {
        let cyl = CylinderModel::new(50.0).unwrap();
        let k = CameraIntrinsics::default();
        let pose = ExtrinsicPose::identity();
        for a in [-FRAC_PI_6, -PI / 12.0, 0.0, PI / 12.0, FRAC_PI_6] {
            let px = project(&cyl.point_at(0.0, a), &k, &pose).unwrap().pixel;
            let back = unproject(&px, &k, &pose, &cyl).unwrap();
            assert_abs_diff_eq!(central_angle(&back).unwrap(), a, epsilon = 1e-9);
        }
    }

    #[test]
    fn row_on_principal_line_uses_bisection() {
        let cyl = CylinderModel::new(50.0).unwrap();
        let k = cam500();
        let pose = ExtrinsicPose::new(0.07, 3.0).unwrap();
        let p = unproject(&PixelPoint::new(400.0, 240.0), &k, &pose, &cyl).unwrap();
        assert_abs_diff_eq!(central_angle(&p).unwrap(), -0.07, epsilon = 1e-10);
        let back = project(&p, &k, &pose).unwrap().pixel;
        assert_abs_diff_eq!(back.u, 400.0, epsilon = 1e-6);
        assert_abs_diff_eq!(back.v, 240.0, epsilon = 1e-6);
    }

    #[test]
    fn bisection_agrees_with_closed_form() {
        let cyl = CylinderModel::new(50.0).unwrap();
        let k = cam500();
        let pose = ExtrinsicPose::new(-0.12, -4.0).unwrap();
        for v in [20.0, 150.0, 239.0, 241.0, 400.0, 470.0] {
            let px = PixelPoint::new(300.0, v);
            let a = solve_phi_closed_form(&px, &k, &pose, &cyl).unwrap();
            let b = solve_phi_bisection(&px, &k, &pose, &cyl).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn upper_half_is_not_visible() {
        // With θ near π/2 the forward ray for the top rows hits the upper half.
        let cyl = CylinderModel::new(50.0).unwrap();
        let k = cam500();
        let pose = ExtrinsicPose::new(1.4, 0.0).unwrap();
        let err = unproject(&PixelPoint::new(320.0, 0.0), &k, &pose, &cyl).unwrap_err();
        assert!(matches!(err, Error::NoVisibleSolution { .. }));
    }

    #[test]
    fn pose_outside_cylinder_is_rejected() {
        let cyl = CylinderModel::new(50.0).unwrap();
        let pose = ExtrinsicPose::new(0.0, 60.0).unwrap();
        assert!(unproject(&PixelPoint::new(320.0, 240.0), &cam500(), &pose, &cyl).is_err());
    }

    #[test]
    fn central_angle_values() {
        assert_eq!(central_angle(&SurfacePoint::new(0.0, 0.0, 50.0)).unwrap(), 0.0);
        let a = central_angle(&SurfacePoint::new(0.0, 25.0, 25.0 * 3f64.sqrt())).unwrap();
        assert_abs_diff_eq!(a, FRAC_PI_6, epsilon = 1e-15);
        assert_eq!(central_angle(&SurfacePoint::new(3.0, 0.0, 0.0)), Err(Error::DegeneratePoint));
    }

    #[test]
    fn invalid_intrinsics_and_cylinder() {
        assert!(CylinderModel::new(0.0).is_err());
        assert!(CameraIntrinsics::new(-1.0, 1.0, 1.0, 1.0, 10, 10).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 10.0, 1.0, 10, 10).is_err());
        assert!(ExtrinsicPose::new(2.0, 0.0).is_err());
    }

    #[test]
    fn identity_pose_reduces_to_plain_pinhole() {
        let k = cam500();
        let p = SurfacePoint::new(7.0, -12.0, (2500.0f64 - 144.0).sqrt());
        let pr = project(&p, &k, &ExtrinsicPose::identity()).unwrap();
        assert_abs_diff_eq!(pr.pixel.u, 320.0 + 500.0 * p.x / p.z, epsilon = 1e-12);
        assert_abs_diff_eq!(pr.pixel.v, 240.0 + 500.0 * p.y / p.z, epsilon = 1e-12);
    }

    #[test]
    fn row_is_monotone_in_angle_at_identity() {
        let cyl = CylinderModel::new(50.0).unwrap();
        let k = cam500();
        let mut prev = f64::NEG_INFINITY;
        for i in 1..400 {
            let phi = -FRAC_PI_2 + 0.01 + i as f64 * (PI - 0.02) / 400.0;
            let v = project(&cyl.point_at(0.0, phi), &k, &ExtrinsicPose::identity()).unwrap().pixel.v;
            assert!(v > prev);
            prev = v;
        }
    }

    proptest! {
        #[test]
        fn round_trip(
            phi in -PI / 3.0..PI / 3.0,
            x in -50.0f64..50.0,
            theta in -0.2f64..0.2,
            d in -5.0f64..5.0,
        ) {
            let cyl = CylinderModel::new(50.0).unwrap();
            let k = cam500();
            let pose = ExtrinsicPose::new(theta, d).unwrap();
            let p = cyl.point_at(x, phi);
            let pr = project(&p, &k, &pose).unwrap();
            let q = unproject(&pr.pixel, &k, &pose, &cyl).unwrap();
            prop_assert!(p.distance(&q) < 1e-6);
            prop_assert!(cyl.contains(&q));
            let again = project(&q, &k, &pose).unwrap();
            prop_assert!(again.depth > 0.0);
            prop_assert!(again.pixel.distance(&pr.pixel) < 1e-6);
        }

        #[test]
        fn scalar_system_holds(
            phi in -PI / 3.0..PI / 3.0,
            x in -50.0f64..50.0,
            theta in -0.2f64..0.2,
            d in -5.0f64..5.0,
        ) {
            let cyl = CylinderModel::new(50.0).unwrap();
            let k = cam500();
            let p = cyl.point_at(x, phi);
            let pose = ExtrinsicPose::new(theta, d).unwrap();
            let pr = project(&p, &k, &pose).unwrap();
            let (s, c) = theta.sin_cos();
            let (u, v, lam) = (pr.pixel.u, pr.pixel.v, pr.depth);
            let e1 = p.x * k.fx - p.y * k.u0 * s + p.z * k.u0 * c + k.u0 * d;
            let e2 = p.y * (k.fy * c - k.v0 * s) + p.z * (k.fy * s + k.v0 * c) + k.v0 * d;
            let e3 = -p.y * s + p.z * c + d;
            prop_assert!((lam * u - e1).abs() <= 1e-9 * e1.abs().max(1.0));
            prop_assert!((lam * v - e2).abs() <= 1e-9 * e2.abs().max(1.0));
            prop_assert!((lam - e3).abs() <= 1e-9 * e3.abs().max(1.0));
            prop_assert!((p.y * p.y + p.z * p.z - 2500.0).abs() <= 1e-9 * 2500.0);
        }
    }
}
