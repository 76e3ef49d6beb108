//! Frame directories and PNG I/O.

use std::fs;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use rollsense_core::GrayImage;

use crate::error::CliError;

/// BT.601 luma of an 8-bit RGB pixel.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round().clamp(0.0, 255.0) as u8
}

/// Loads an 8-bit grayscale or RGB(A) image as grayscale.
pub fn load_gray(path: &Path) -> Result<GrayImage, CliError> {
    let img = image::open(path).map_err(|e| CliError::io(path, e))?;
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g),
        DynamicImage::ImageLumaA8(g) => {
            Ok(GrayImage::from_fn(g.width(), g.height(), |x, y| image::Luma([g.get_pixel(x, y)[0]])))
        }
        DynamicImage::ImageRgb8(rgb) => Ok(GrayImage::from_fn(rgb.width(), rgb.height(), |x, y| {
            let [r, g, b] = rgb.get_pixel(x, y).0;
            image::Luma([luma(r, g, b)])
        })),
        DynamicImage::ImageRgba8(rgba) => Ok(GrayImage::from_fn(rgba.width(), rgba.height(), |x, y| {
            let [r, g, b, _] = rgba.get_pixel(x, y).0;
            image::Luma([luma(r, g, b)])
        })),
        other => Err(CliError::Input(format!(
            "{}: unsupported pixel format {:?}; expected 8-bit gray or RGB",
            path.display(),
            other.color()
        ))),
    }
}

pub fn save_png(img: &GrayImage, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| CliError::io(path, e))
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

/// PNG files of `dir` ordered by the number at the end of their stem
/// (`frame_0007.png`, `12.png`). Other files are ignored.
pub fn list_frames(dir: &Path) -> Result<Vec<(u64, PathBuf)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            return Err(CliError::Input(format!(
                "{}: frame names must end in a frame number",
                path.display()
            )));
        }
        let number: u64 = digits.chars().rev().collect::<String>().parse().map_err(|e| CliError::io(&path, e))?;
        frames.push((number, path));
    }
    frames.sort();
    if let Some(w) = frames.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(CliError::Input(format!(
            "frames {} and {} share number {}",
            w[0].1.display(),
            w[1].1.display(),
            w[0].0
        )));
    }
    if frames.is_empty() {
        return Err(CliError::Input(format!("{}: no PNG frames found", dir.display())));
    }
    Ok(frames)
}

/// Mirrors an image horizontally and/or vertically.
pub fn apply_flips(img: GrayImage, flip_u: bool, flip_v: bool) -> GrayImage {
    let img = if flip_u { image::imageops::flip_horizontal(&img) } else { img };
    if flip_v {
        image::imageops::flip_vertical(&img)
    } else {
        img
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_weights() {
        assert_eq!(luma(255, 255, 255), 255);
        assert_eq!(luma(255, 0, 0), 76);
        assert_eq!(luma(0, 255, 0), 150);
        assert_eq!(luma(0, 0, 255), 29);
    }

    #[test]
    fn frames_sort_numerically() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::new(2, 2);
        for name in ["frame_10.png", "frame_9.png", "frame_0002.png"] {
            save_png(&img, &dir.path().join(name)).unwrap();
        }
        fs::write(dir.path().join("manifest.toml"), "").unwrap();
        let names: Vec<u64> = list_frames(dir.path()).unwrap().into_iter().map(|f| f.0).collect();
        assert_eq!(names, vec![2, 9, 10]);
    }

    #[test]
    fn rgb_frames_become_luma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        image::RgbImage::from_pixel(3, 1, image::Rgb([255, 0, 0])).save(&path).unwrap();
        assert_eq!(load_gray(&path).unwrap().get_pixel(0, 0)[0], 76);
    }

    #[test]
    fn unnumbered_frame_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_png(&GrayImage::new(1, 1), &dir.path().join("cover.png")).unwrap();
        assert_eq!(list_frames(dir.path()).unwrap_err().code(), 3);
    }
}
