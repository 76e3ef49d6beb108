//! Low-level grayscale image operations shared by calibration and
//! localization: Gaussian blur, Otsu thresholding, binary morphology and
//! connected-component extraction with raw moments.

use serde::{Deserialize, Serialize};

use crate::geometry::PixelPoint;
use crate::GrayImage;

/// Separable Gaussian blur with a kernel truncated at 3σ and clamped borders.
/// `sigma <= 0` returns a copy.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let src: Vec<f64> = img.as_raw().iter().map(|&p| p as f64).collect();

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let xx = (x as isize + i as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                let yy = (y as isize + i as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out.as_mut()[y * w + x] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Otsu's threshold: the level `t` maximizing between-class variance, with
/// foreground defined as `pixel > t`. A single-valued image returns its value,
/// so it thresholds to an empty mask.
pub fn otsu_level(img: &GrayImage) -> u8 {
    let mut hist = [0u64; 256];
    for &p in img.as_raw() {
        hist[p as usize] += 1;
    }
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0;
    }
    let occupied: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    if occupied.len() == 1 {
        return occupied[0] as u8;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w_bg, mut sum_bg) = (0u64, 0.0);
    let (mut best, mut best_var) = (0u8, -1.0);
    for t in 0..256usize {
        w_bg += hist[t];
        if w_bg == 0 {
            continue;
        }
        let w_fg = total - w_bg;
        if w_fg == 0 {
            break;
        }
        sum_bg += t as f64 * hist[t] as f64;
        let m_bg = sum_bg / w_bg as f64;
        let m_fg = (sum_all - sum_bg) / w_fg as f64;
        let var = w_bg as f64 * w_fg as f64 * (m_bg - m_fg).powi(2);
        if var > best_var {
            best_var = var;
            best = t as u8;
        }
    }
    best
}

/// Row-major boolean image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, data: vec![false; (width * height) as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[(y * self.width + x) as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Foreground where `pixel > level`.
    pub fn threshold(img: &GrayImage, level: u8) -> Self {
        let (width, height) = img.dimensions();
        Self { width, height, data: img.as_raw().iter().map(|&p| p > level).collect() }
    }

    /// Morphological opening (erosion then dilation) with a square element of
    /// side `size`; pixels outside the image count as background.
    pub fn open(&self, size: u32) -> Self {
        if size <= 1 {
            return self.clone();
        }
        self.erode(size).dilate(size)
    }

    fn erode(&self, size: u32) -> Self {
        self.square_filter(size, true)
    }

    fn dilate(&self, size: u32) -> Self {
        self.square_filter(size, false)
    }

    fn square_filter(&self, size: u32, erode: bool) -> Self {
        let r = (size / 2) as i64;
        let (w, h) = (self.width as i64, self.height as i64);
        let mut out = Self::new(self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let mut hit = erode;
                'win: for dy in -r..=r {
                    for dx in -r..=r {
                        let (xx, yy) = (x + dx, y + dy);
                        let v = xx >= 0
                            && yy >= 0
                            && xx < w
                            && yy < h
                            && self.data[(yy * w + xx) as usize];
                        if erode && !v {
                            hit = false;
                            break 'win;
                        }
                        if !erode && v {
                            hit = true;
                            break 'win;
                        }
                    }
                }
                out.data[(y * w + x) as usize] = hit;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

impl BoundingBox {
    pub fn contains(&self, p: &PixelPoint) -> bool {
        p.u >= self.min_x as f64
            && p.u <= self.max_x as f64
            && p.v >= self.min_y as f64
            && p.v <= self.max_y as f64
    }
}

/// One 8-connected foreground component.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub pixels: Vec<(u32, u32)>,
    pub bbox: BoundingBox,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Binary centroid `(m10/m00, m01/m00)`.
    pub fn centroid(&self) -> PixelPoint {
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(x, y) in &self.pixels {
            sx += x as f64;
            sy += y as f64;
        }
        let n = self.pixels.len() as f64;
        PixelPoint::new(sx / n, sy / n)
    }

    /// Centroid with each pixel weighted by its intensity in `img`.
    pub fn weighted_centroid(&self, img: &GrayImage) -> PixelPoint {
        let (mut m00, mut m10, mut m01) = (0.0, 0.0, 0.0);
        for &(x, y) in &self.pixels {
            let w = img.get_pixel(x, y)[0] as f64;
            m00 += w;
            m10 += w * x as f64;
            m01 += w * y as f64;
        }
        if m00 == 0.0 {
            return self.centroid();
        }
        PixelPoint::new(m10 / m00, m01 / m00)
    }
}

/// 8-connected components in raster-scan discovery order.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut seen = vec![false; mask.data.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.data.len() {
        if !mask.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        let mut bbox = BoundingBox { min_x: u32::MAX, min_y: u32::MAX, max_x: 0, max_y: 0 };
        while let Some(idx) = stack.pop() {
            let (x, y) = ((idx as i64 % w), (idx as i64 / w));
            pixels.push((x as u32, y as u32));
            bbox.min_x = bbox.min_x.min(x as u32);
            bbox.min_y = bbox.min_y.min(y as u32);
            bbox.max_x = bbox.max_x.max(x as u32);
            bbox.max_y = bbox.max_y.max(y as u32);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx < 0 || yy < 0 || xx >= w || yy >= h {
                        continue;
                    }
                    let n = (yy * w + xx) as usize;
                    if mask.data[n] && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        out.push(Component { pixels, bbox });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mask(w: u32, h: u32, x0: u32, y0: u32, side: u32) -> BinaryMask {
        let mut m = BinaryMask::new(w, h);
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[0], k[12]);
    }

    #[test]
    fn blur_preserves_constant_image() {
        let img = GrayImage::from_pixel(20, 10, image::Luma([77]));
        assert_eq!(gaussian_blur(&img, 2.0), img);
    }

    #[test]
    fn otsu_separates_two_levels() {
        let mut img = GrayImage::from_pixel(10, 10, image::Luma([20]));
        for x in 0..5 {
            img.put_pixel(x, 0, image::Luma([200]));
        }
        let t = otsu_level(&img);
        assert!((20..200).contains(&t));
        assert_eq!(BinaryMask::threshold(&img, t).count(), 5);
    }

    #[test]
    fn square_centroid() {
        let m = square_mask(300, 300, 100, 200, 10);
        let cc = connected_components(&m);
        assert_eq!(cc.len(), 1);
        assert_eq!(cc[0].area(), 100);
        assert_eq!(cc[0].centroid(), PixelPoint::new(104.5, 204.5));
        assert!(cc[0].bbox.contains(&cc[0].centroid()));
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let mut m = BinaryMask::new(5, 5);
        m.set(1, 1, true);
        m.set(2, 2, true);
        assert_eq!(connected_components(&m).len(), 1);
    }

    #[test]
    fn opening_removes_specks_and_keeps_blocks() {
        let mut m = square_mask(30, 30, 10, 10, 6);
        m.set(2, 2, true);
        let o = m.open(3);
        assert!(!o.get(2, 2));
        assert_eq!(o.count(), 36);
    }

    #[test]
    fn weighted_centroid_shifts_toward_bright_side() {
        let m = square_mask(10, 10, 2, 2, 2);
        let mut img = GrayImage::from_pixel(10, 10, image::Luma([10]));
        img.put_pixel(3, 2, image::Luma([30]));
        img.put_pixel(3, 3, image::Luma([30]));
        let c = connected_components(&m)[0].weighted_centroid(&img);
        assert!((c.u - 2.75).abs() < 1e-12);
        assert!((c.v - 2.5).abs() < 1e-12);
    }
}
