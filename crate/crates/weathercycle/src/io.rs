//! 8-bit PNG/JPEG decoding and encoding.

use std::path::Path;

use image::{ImageFormat, RgbImage as Rgb8};
use weathercycle_core::RgbImage;

use crate::error::{CliError, CliResult};

pub const EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Maps `[0, 1]` to `0..=255`, rounding halves up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn dequantize(v: u8) -> f64 {
    v as f64 / 255.0
}

pub fn from_rgb8(img: &Rgb8) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(h as usize, w as usize, |y, x| img.get_pixel(x as u32, y as u32).0.map(dequantize))
}

pub fn to_rgb8(img: &RgbImage) -> Rgb8 {
    let (h, w) = img.dims();
    Rgb8::from_fn(w as u32, h as u32, |x, y| image::Rgb(img.pixel(y as usize, x as usize).map(quantize)))
}

pub fn read_image(path: &Path) -> CliResult<RgbImage> {
    let decoded = image::open(path).map_err(|e| CliError::data(format!("cannot decode {}: {e}", path.display())))?;
    Ok(from_rgb8(&decoded.to_rgb8()))
}

/// Writes PNG or JPEG depending on the extension; anything else is PNG.
pub fn write_image(path: &Path, img: &RgbImage) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let format = ImageFormat::from_path(path).ok().filter(|f| *f == ImageFormat::Jpeg).unwrap_or(ImageFormat::Png);
    to_rgb8(img)
        .save_with_format(path, format)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}
