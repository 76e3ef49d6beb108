use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::gaussian_kernel;
use crate::GrayImage;

const MAX_VALUE: f64 = 255.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::DimensionMismatch { left: a.dimensions(), right: b.dimensions() });
    }
    if a.width() == 0 || a.height() == 0 {
        return Err(Error::EmptyInput("image"));
    }
    Ok(())
}

/// Mean absolute error as a percentage of full scale (255).
pub fn mae_percent(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    check_dims(a, b)?;
    let sum: u64 = a.as_raw().iter().zip(b.as_raw()).map(|(&p, &q)| p.abs_diff(q) as u64).sum();
    Ok(100.0 * sum as f64 / (a.as_raw().len() as f64 * MAX_VALUE))
}

/// PSNR in dB with peak 255; `f64::INFINITY` for identical images.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    check_dims(a, b)?;
    let sse: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&p, &q)| (p.abs_diff(q) as u64).pow(2))
        .sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / a.as_raw().len() as f64;
    Ok(10.0 * (MAX_VALUE * MAX_VALUE / mse).log10())
}

/// Valid-region separable Gaussian filtering.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over all 11×11 Gaussian (σ = 1.5) windows fully inside the
/// image, with K1 = 0.01, K2 = 0.03.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let kernel = gaussian_kernel(SSIM_SIGMA);
    let kernel = &kernel[kernel.len() / 2 - SSIM_WINDOW / 2..=kernel.len() / 2 + SSIM_WINDOW / 2];
    let sum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|v| v / sum).collect();

    let x: Vec<f64> = a.as_raw().iter().map(|&p| p as f64).collect();
    let y: Vec<f64> = b.as_raw().iter().map(|&p| p as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let (mx, ow, oh) = filter_valid(&x, w, h, &kernel);
    let (my, _, _) = filter_valid(&y, w, h, &kernel);
    let (sxx, _, _) = filter_valid(&xx, w, h, &kernel);
    let (syy, _, _) = filter_valid(&yy, w, h, &kernel);
    let (sxy, _, _) = filter_valid(&xy, w, h, &kernel);

    let c1 = (SSIM_K1 * MAX_VALUE).powi(2);
    let c2 = (SSIM_K2 * MAX_VALUE).powi(2);
    let total: f64 = (0..ow * oh)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / (ow * oh) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ssim: f64,
    pub psnr_db: f64,
    pub mae_percent: f64,
}

pub type HardwareRow = (&'static str, (f64, f64), (f64, f64), (f64, f64));

/// Map quality measured on the physical prototype against a visual top-down
/// view: `(speed, (ssim, std), (psnr dB, std), (mae %, std))`. Visual and tactile
/// modalities differ, so these are plausibility references only.
pub const HARDWARE_REFERENCE: [HardwareRow; 3] = [
    ("slow", (0.291, 0.010), (15.09, 0.13), (15.03, 0.28)),
    ("medium", (0.305, 0.010), (14.41, 0.71), (16.43, 1.51)),
    ("fast", (0.330, 0.007), (15.59, 0.94), (14.04, 2.04)),
];

/// SSIM band a real-fabric map is expected to fall in.
pub const REAL_DATA_SSIM_RANGE: (f64, f64) = (0.2, 0.45);

pub fn evaluate(a: &GrayImage, b: &GrayImage) -> Result<Metrics> {
    Ok(Metrics { ssim: ssim(a, b)?, psnr_db: psnr(a, b)?, mae_percent: mae_percent(a, b)? })
}
