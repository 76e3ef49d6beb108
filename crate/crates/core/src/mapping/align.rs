use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PixelPoint;
use crate::GrayImage;

/// 2×3 affine transform `[x', y'] = M · [x, y, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub m: [[f64; 3]; 2],
}

impl Affine {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] }
    }

    pub fn apply(&self, p: &PixelPoint) -> PixelPoint {
        let m = &self.m;
        PixelPoint::new(
            m[0][0] * p.u + m[0][1] * p.v + m[0][2],
            m[1][0] * p.u + m[1][1] * p.v + m[1][2],
        )
    }

    pub fn inverse(&self) -> Option<Self> {
        let m = &self.m;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        Some(Self {
            m: [
                [a, b, -(a * m[0][2] + b * m[1][2])],
                [c, d, -(c * m[0][2] + d * m[1][2])],
            ],
        })
    }
}

/// Three map↔reference correspondences and the affine through them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSpec {
    pub map_points: [PixelPoint; 3],
    pub ref_points: [PixelPoint; 3],
    pub affine: Affine,
}

/// Third corner of the right isosceles triangle on `a→b`: `b` rotated 90°
/// about `a`.
fn third_corner(a: &PixelPoint, b: &PixelPoint) -> PixelPoint {
    let (dx, dy) = (b.u - a.u, b.v - a.v);
    PixelPoint::new(a.u - dy, a.v + dx)
}

/// Completes each point pair to a right isosceles triangle (same
/// orientation in both images) and solves the affine exactly from the three
/// correspondences.
pub fn derive_affine(map_pts: [PixelPoint; 2], ref_pts: [PixelPoint; 2]) -> Result<AlignmentSpec> {
    if map_pts[0] == map_pts[1] || ref_pts[0] == ref_pts[1] {
        return Err(Error::DegeneratePoints);
    }
    let src = [map_pts[0], map_pts[1], third_corner(&map_pts[0], &map_pts[1])];
    let dst = [ref_pts[0], ref_pts[1], third_corner(&ref_pts[0], &ref_pts[1])];
    let a = Matrix3::from_fn(|r, c| match c {
        0 => src[r].u,
        1 => src[r].v,
        _ => 1.0,
    });
    let lu = a.lu();
    let rx = lu.solve(&Vector3::new(dst[0].u, dst[1].u, dst[2].u)).ok_or(Error::DegeneratePoints)?;
    let ry = lu.solve(&Vector3::new(dst[0].v, dst[1].v, dst[2].v)).ok_or(Error::DegeneratePoints)?;
    Ok(AlignmentSpec {
        map_points: src,
        ref_points: dst,
        affine: Affine { m: [[rx[0], rx[1], rx[2]], [ry[0], ry[1], ry[2]]] },
    })
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x
    }
}

/// Source position for output pixel `(x, y)` if it lies inside the image.
fn source_of(inv: &Affine, x: u32, y: u32, w: u32, h: u32) -> Option<(f64, f64)> {
    let s = inv.apply(&PixelPoint::new(x as f64, y as f64));
    let (sx, sy) = (snap(s.u), snap(s.v));
    (sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64).then_some((sx, sy))
}

/// Inverse-mapped bilinear warp of `img` by `affine` into an image of
/// `out_size`; pixels that map outside the source are 0.
pub fn apply_affine(img: &GrayImage, affine: &Affine, out_size: (u32, u32)) -> Result<GrayImage> {
    let inv = affine
        .inverse()
        .ok_or_else(|| Error::InvalidParameter("affine transform is singular".into()))?;
    let (w, h) = img.dimensions();
    Ok(GrayImage::from_fn(out_size.0, out_size.1, |x, y| {
        let Some((sx, sy)) = source_of(&inv, x, y, w, h) else {
            return image::Luma([0]);
        };
        let (x0, y0) = (sx.floor() as u32, sy.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let p = |x: u32, y: u32| img.get_pixel(x, y)[0] as f64;
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        image::Luma([(top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8])
    }))
}

/// Row-major flags marking output pixels that [`apply_affine`] fills from
/// the source.
pub fn affine_coverage(src_size: (u32, u32), affine: &Affine, out_size: (u32, u32)) -> Result<Vec<bool>> {
    let inv = affine
        .inverse()
        .ok_or_else(|| Error::InvalidParameter("affine transform is singular".into()))?;
    let mut out = Vec::with_capacity((out_size.0 * out_size.1) as usize);
    for y in 0..out_size.1 {
        for x in 0..out_size.0 {
            out.push(source_of(&inv, x, y, src_size.0, src_size.1).is_some());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn smooth(w: u32, h: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let v = 128.0 + 60.0 * (x as f64 / 9.0).sin() + 50.0 * (y as f64 / 13.0).cos();
            image::Luma([v.round() as u8])
        })
    }

    #[test]
    fn identical_points_give_identity() {
        let p = [PixelPoint::new(10.0, 20.0), PixelPoint::new(10.0, 90.0)];
        let spec = derive_affine(p, p).unwrap();
        for (a, b) in spec.affine.m.iter().flatten().zip(Affine::identity().m.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scaled_points_give_uniform_scale() {
        let p = [PixelPoint::new(10.0, 20.0), PixelPoint::new(10.0, 90.0)];
        let q = [PixelPoint::new(20.0, 40.0), PixelPoint::new(20.0, 180.0)];
        let m = derive_affine(p, q).unwrap().affine.m;
        let expect = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
        for (a, b) in m.iter().flatten().zip(expect.iter().flatten()) {
            assert!((a - b).abs() < 1e-12, "{m:?}");
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let p = [PixelPoint::new(1.0, 1.0), PixelPoint::new(1.0, 1.0)];
        let q = [PixelPoint::new(1.0, 1.0), PixelPoint::new(2.0, 1.0)];
        assert_eq!(derive_affine(p, q), Err(Error::DegeneratePoints));
    }

    #[test]
    fn identity_warp_is_bit_exact() {
        let img = smooth(40, 30);
        assert_eq!(apply_affine(&img, &Affine::identity(), (40, 30)).unwrap(), img);
    }

    #[test]
    fn integer_translation_is_pixel_exact() {
        let img = smooth(40, 30);
        let t = Affine { m: [[1.0, 0.0, 3.0], [0.0, 1.0, -2.0]] };
        let out = apply_affine(&img, &t, (40, 30)).unwrap();
        for y in 0..30u32 {
            for x in 0..40u32 {
                let (sx, sy) = (x as i64 - 3, y as i64 + 2);
                let expect = if sx >= 0 && sy < 30 { img.get_pixel(sx as u32, sy as u32)[0] } else { 0 };
                assert_eq!(out.get_pixel(x, y)[0], expect);
            }
        }
        let cov = affine_coverage((40, 30), &t, (40, 30)).unwrap();
        assert!(!cov[0] && cov[3]);
    }

    #[test]
    fn warp_round_trip_on_smooth_image() {
        let img = smooth(120, 100);
        let a = Affine { m: [[1.1, 0.05, 4.3], [-0.04, 0.95, 2.7]] };
        let fwd = apply_affine(&img, &a, (140, 120)).unwrap();
        let back = apply_affine(&fwd, &a.inverse().unwrap(), (120, 100)).unwrap();
        let (mut sum, mut n) = (0.0, 0);
        for y in 15..85u32 {
            for x in 15..105u32 {
                sum += (back.get_pixel(x, y)[0] as f64 - img.get_pixel(x, y)[0] as f64).abs();
                n += 1;
            }
        }
        assert!(sum / (n as f64) < 1.0, "{}", sum / n as f64);
    }

    proptest! {
        #[test]
        fn affine_hits_all_three_targets(
            x0 in -500.0f64..500.0, y0 in -500.0f64..500.0,
            x1 in -500.0f64..500.0, y1 in -500.0f64..500.0,
            x2 in -500.0f64..500.0, y2 in -500.0f64..500.0,
            x3 in -500.0f64..500.0, y3 in -500.0f64..500.0,
        ) {
            prop_assume!((x0 - x1).hypot(y0 - y1) > 1.0 && (x2 - x3).hypot(y2 - y3) > 1.0);
            let spec = derive_affine(
                [PixelPoint::new(x0, y0), PixelPoint::new(x1, y1)],
                [PixelPoint::new(x2, y2), PixelPoint::new(x3, y3)],
            ).unwrap();
            for (s, t) in spec.map_points.iter().zip(&spec.ref_points) {
                prop_assert!(spec.affine.apply(s).distance(t) < 1e-9);
            }
        }
    }
}

/// Axis-aligned rectangle `(x, y, width, height)` in reference pixels.
pub type Region = (u32, u32, u32, u32);

/// Largest rectangle of the coverage bounding box whose rows (or, failing
/// that, columns) are fully covered.
fn covered_region(cov: &[bool], w: u32, h: u32) -> Option<Region> {
    let at = |x: u32, y: u32| cov[(y * w + x) as usize];
    let rows: Vec<u32> = (0..h).filter(|&y| (0..w).any(|x| at(x, y))).collect();
    let cols: Vec<u32> = (0..w).filter(|&x| (0..h).any(|y| at(x, y))).collect();
    let (r0, r1) = (*rows.first()?, *rows.last()?);
    let (c0, c1) = (*cols.first()?, *cols.last()?);
    let full_rows: Vec<u32> = (r0..=r1).filter(|&y| (c0..=c1).all(|x| at(x, y))).collect();
    if let Some(run) = longest_run(&full_rows) {
        return Some((c0, run.0, c1 - c0 + 1, run.1 - run.0 + 1));
    }
    let full_cols: Vec<u32> = (c0..=c1).filter(|&x| (r0..=r1).all(|y| at(x, y))).collect();
    longest_run(&full_cols).map(|run| (run.0, r0, run.1 - run.0 + 1, r1 - r0 + 1))
}

fn longest_run(sorted: &[u32]) -> Option<(u32, u32)> {
    let mut best: Option<(u32, u32)> = None;
    let mut start = *sorted.first()?;
    let mut prev = start;
    for &v in &sorted[1..] {
        if v != prev + 1 {
            if best.is_none_or(|b| prev - start > b.1 - b.0) {
                best = Some((start, prev));
            }
            start = v;
        }
        prev = v;
    }
    if best.is_none_or(|b| prev - start > b.1 - b.0) {
        best = Some((start, prev));
    }
    best
}

/// Warps `map` into the reference frame and scores it against `reference`
/// over the fully covered region.
pub fn score_alignment(
    map: &GrayImage,
    reference: &GrayImage,
    affine: &Affine,
) -> Result<(super::Metrics, Region, GrayImage)> {
    let out = reference.dimensions();
    let warped = apply_affine(map, affine, out)?;
    let cov = affine_coverage(map.dimensions(), affine, out)?;
    let region = covered_region(&cov, out.0, out.1)
        .ok_or_else(|| Error::InvalidParameter("aligned map does not overlap the reference".into()))?;
    let (x, y, w, h) = region;
    let a = image::imageops::crop_imm(&warped, x, y, w, h).to_image();
    let b = image::imageops::crop_imm(reference, x, y, w, h).to_image();
    Ok((super::evaluate(&a, &b)?, region, warped))
}

#[cfg(test)]
mod region_tests {
    use super::*;

    #[test]
    fn region_of_translated_map() {
        let t = Affine { m: [[1.0, 0.0, -5.0], [0.0, 1.0, 10.0]] };
        let cov = affine_coverage((50, 20), &t, (40, 40)).unwrap();
        assert_eq!(covered_region(&cov, 40, 40), Some((0, 10, 40, 20)));
    }

    #[test]
    fn runs() {
        assert_eq!(longest_run(&[1, 2, 3, 7, 8]), Some((1, 3)));
        assert_eq!(longest_run(&[1, 5, 6, 7, 8]), Some((5, 8)));
        assert_eq!(longest_run(&[]), None);
    }
}
