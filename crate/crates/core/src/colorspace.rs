//! Full-range BT.601 RGB <-> YCbCr on normalized floats.
//!
//! ```text
//! Y  = 0.299 R + 0.587 G + 0.114 B
//! Cb = 0.5 + (B - Y) / 1.772
//! Cr = 0.5 + (R - Y) / 1.402
//! ```
//!
//! The conversion is affine, so the same coefficients are exported as
//! [`ChannelAffine`] matrices for use on the autodiff tape. Clamping is only
//! applied by the image-level functions in this module; tape code never clamps
//! inside a loss.

use alloc::vec::Vec;

use crate::{ChromaPlanes, Error, LumaPlane, Result, RgbImage};

pub const KR: f64 = 0.299;
pub const KG: f64 = 0.587;
pub const KB: f64 = 0.114;
const CB_SCALE: f64 = 2.0 * (1.0 - KB); // 1.772
const CR_SCALE: f64 = 2.0 * (1.0 - KR); // 1.402

/// `out[o] = sum_i matrix[o][i] * in[i] + offset[o]`, applied per pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelAffine<const O: usize, const I: usize> {
    pub matrix: [[f64; I]; O],
    pub offset: [f64; O],
}

impl<const O: usize, const I: usize> ChannelAffine<O, I> {
    #[inline]
    pub fn apply(&self, input: [f64; I]) -> [f64; O] {
        let mut out = self.offset;
        for (o, row) in self.matrix.iter().enumerate() {
            for (i, m) in row.iter().enumerate() {
                out[o] += m * input[i];
            }
        }
        out
    }

    pub fn matrix_flat(&self) -> Vec<f64> {
        self.matrix.iter().flat_map(|r| r.iter().copied()).collect()
    }
}

/// RGB -> (Y, Cb, Cr).
pub const RGB_TO_YCBCR: ChannelAffine<3, 3> = ChannelAffine {
    matrix: [
        [KR, KG, KB],
        [-KR / CB_SCALE, -KG / CB_SCALE, (1.0 - KB) / CB_SCALE],
        [(1.0 - KR) / CR_SCALE, -KG / CR_SCALE, -KB / CR_SCALE],
    ],
    offset: [0.0, 0.5, 0.5],
};

/// (Y, Cb, Cr) -> RGB.
pub const YCBCR_TO_RGB: ChannelAffine<3, 3> = ChannelAffine {
    matrix: [
        [1.0, 0.0, CR_SCALE],
        [1.0, -KB * CB_SCALE / KG, -KR * CR_SCALE / KG],
        [1.0, CB_SCALE, 0.0],
    ],
    offset: [
        -0.5 * CR_SCALE,
        0.5 * (KB * CB_SCALE + KR * CR_SCALE) / KG,
        -0.5 * CB_SCALE,
    ],
};

/// Splits an image into luminance and chrominance, clamped to `[0, 1]`.
pub fn rgb_to_ycbcr(img: &RgbImage) -> Result<(LumaPlane, ChromaPlanes)> {
    img.validate()?;
    let (h, w) = img.dims();
    let n = h * w;
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut luma = Vec::with_capacity(n);
    let mut chroma = alloc::vec![0.0; 2 * n];
    for i in 0..n {
        let [y, cb, cr] = RGB_TO_YCBCR.apply([r[i], g[i], b[i]]);
        luma.push(y.clamp(0.0, 1.0));
        chroma[i] = cb.clamp(0.0, 1.0);
        chroma[n + i] = cr.clamp(0.0, 1.0);
    }
    Ok((LumaPlane::new(h, w, luma)?, ChromaPlanes::new(h, w, chroma)?))
}

/// Same as [`rgb_to_ycbcr`] without the clamp, for linearity checks and
/// analysis of out-of-gamut intermediates.
pub fn rgb_to_ycbcr_unclamped(img: &RgbImage) -> [Vec<f64>; 3] {
    let n = img.height() * img.width();
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut out = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..n {
        let px = RGB_TO_YCBCR.apply([r[i], g[i], b[i]]);
        for c in 0..3 {
            out[c].push(px[c]);
        }
    }
    out
}

/// Recombines luminance and chrominance into RGB, clamped to `[0, 1]`.
pub fn ycbcr_to_rgb(lum: &LumaPlane, chr: &ChromaPlanes) -> Result<RgbImage> {
    if lum.dims() != chr.dims() {
        return Err(Error::dims(&[lum.height(), lum.width()], &[chr.height(), chr.width()]));
    }
    let (h, w) = lum.dims();
    let n = h * w;
    let (y, cb, cr) = (lum.data(), chr.cb(), chr.cr());
    let mut data = alloc::vec![0.0; 3 * n];
    for i in 0..n {
        let rgb = YCBCR_TO_RGB.apply([y[i], cb[i], cr[i]]);
        for c in 0..3 {
            data[c * n + i] = rgb[c].clamp(0.0, 1.0);
        }
    }
    RgbImage::from_planar(h, w, data)
}

/// Exchanges luminance between an aligned degraded/clean pair.
///
/// Returns `(clean Y + degraded CbCr, degraded Y + clean CbCr)`.
pub fn swap_luma(degraded: &RgbImage, clean: &RgbImage) -> Result<(RgbImage, RgbImage)> {
    degraded.ensure_same_dims(clean)?;
    let (d_lum, d_chr) = rgb_to_ycbcr(degraded)?;
    let (c_lum, c_chr) = rgb_to_ycbcr(clean)?;
    Ok((ycbcr_to_rgb(&c_lum, &d_chr)?, ycbcr_to_rgb(&d_lum, &c_chr)?))
}
