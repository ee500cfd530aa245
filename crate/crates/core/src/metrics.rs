//! Full-reference quality metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::colorspace::RGB_TO_YCBCR;
use crate::math;
use crate::{Error, Result, RgbImage};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsnrSpace {
    #[default]
    Rgb,
    Luma,
}

impl PsnrSpace {
    pub fn name(self) -> &'static str {
        match self {
            PsnrSpace::Rgb => "rgb",
            PsnrSpace::Luma => "luma",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rgb" => Some(PsnrSpace::Rgb),
            "luma" | "y" => Some(PsnrSpace::Luma),
            _ => None,
        }
    }
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * math::log10(1.0 / mse)).min(PSNR_CAP)
}

/// PSNR in dB over all RGB values, peak 1.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    psnr_in(a, b, PsnrSpace::Rgb)
}

pub fn psnr_in(a: &RgbImage, b: &RgbImage, space: PsnrSpace) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let mse = match space {
        PsnrSpace::Rgb => {
            a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data().len() as f64
        }
        PsnrSpace::Luma => {
            let (ya, yb) = (luma(a), luma(b));
            ya.iter().zip(&yb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ya.len() as f64
        }
    };
    Ok(psnr_from_mse(mse))
}

fn luma(img: &RgbImage) -> Vec<f64> {
    let [kr, kg, kb] = RGB_TO_YCBCR.matrix[0];
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    (0..r.len()).map(|i| kr * r[i] + kg * g[i] + kb * b[i]).collect()
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            math::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filtering over valid window positions.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| g[t] * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| g[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of the BT.601 luminance planes (11x11 Gaussian window,
/// sigma 1.5, dynamic range 1).
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::TooSmall { height: h, width: w, min: SSIM_WINDOW });
    }
    let (x, y) = (luma(a), luma(b));
    let g = gaussian_window();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(&x, h, w, &g);
    let my = filter_valid(&y, h, w, &g);
    let sxx = filter_valid(&xx, h, w, &g);
    let syy = filter_valid(&yy, h, w, &g);
    let sxy = filter_valid(&xy, h, w, &g);
    let (c1, c2) = ((K1 * K1), (K2 * K2));
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = RgbImage::filled(8, 8, [0.2, 0.4, 0.6]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = RgbImage::filled(8, 8, [0.3, 0.5, 0.7]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let z = RgbImage::filled(8, 8, [0.0; 3]);
        let h = RgbImage::filled(8, 8, [0.5; 3]);
        assert!((psnr(&z, &h).unwrap() - 6.020599913279624).abs() < 1e-9);
        assert!(psnr(&a, &RgbImage::filled(8, 9, [0.0; 3])).is_err());
    }

    #[test]
    fn ssim_examples() {
        let board = RgbImage::from_fn(16, 16, |y, x| if (y + x) % 2 == 0 { [0.9; 3] } else { [0.1; 3] });
        assert!((ssim(&board, &board).unwrap() - 1.0).abs() < 1e-12);
        let mut inv = board.clone();
        inv.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        let s = ssim(&board, &inv).unwrap();
        assert!(s < 0.0, "{s}");
        assert_eq!(s, ssim(&inv, &board).unwrap());
        assert!(matches!(ssim(&RgbImage::filled(10, 16, [0.5; 3]), &RgbImage::filled(10, 16, [0.5; 3])), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn window_is_normalized() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(g.len(), 11);
        assert!((g[5] - g.iter().copied().fold(0.0, f64::max)).abs() < 1e-15);
    }
}
