use std::path::Path;

use image::{GrayImage, ImageFormat};

use crate::{Error, Result};

/// Writes a square image as 8-bit grayscale PNG; values are clamped to
/// `[0, 1]` and rounded to the nearest of 256 levels.
pub fn write_png(path: &Path, pixels: &[f64], side: usize) -> Result<()> {
    if pixels.len() != side * side {
        return Err(Error::Dimension(format!(
            "{} pixels for a {side}x{side} image",
            pixels.len()
        )));
    }
    let bytes = pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = GrayImage::from_raw(side as u32, side as u32, bytes).expect("length checked above");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

/// Reads an 8-bit grayscale PNG back into `[0, 1]` values; returns (pixels, side).
pub fn read_png(path: &Path) -> Result<(Vec<f64>, usize)> {
    let img = image::open(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?
        .into_luma8();
    if img.width() != img.height() {
        return Err(Error::format(
            "image",
            format!("{} is not square", path.display()),
        ));
    }
    let side = img.width() as usize;
    Ok((
        img.into_raw()
            .into_iter()
            .map(|b| f64::from(b) / 255.0)
            .collect(),
        side,
    ))
}
