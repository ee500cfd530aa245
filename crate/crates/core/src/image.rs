//! Float raster types.
//!
//! All three types store planes contiguously (channel-major, then row-major),
//! which is also the layout the autodiff tape uses for `[C, H, W]` tensors.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Smallest side length accepted where spectral processing is involved.
pub const MIN_SIDE: usize = 8;

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// An RGB image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    /// Builds an image from planar data (`R` plane, then `G`, then `B`).
    pub fn from_planar(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::dims(&[3 * height * width], &[data.len()]));
        }
        check_finite(&data)?;
        Ok(Self { height, width, data })
    }

    /// Builds an image from interleaved `RGBRGB...` data.
    pub fn from_interleaved(height: usize, width: usize, pixels: &[f64]) -> Result<Self> {
        let n = height * width;
        if pixels.len() != 3 * n {
            return Err(Error::dims(&[3 * n], &[pixels.len()]));
        }
        let mut data = vec![0.0; 3 * n];
        for (i, px) in pixels.chunks_exact(3).enumerate() {
            data[i] = px[0];
            data[n + i] = px[1];
            data[2 * n + i] = px[2];
        }
        Self::from_planar(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let n = height * width;
        let mut data = Vec::with_capacity(3 * n);
        for c in rgb {
            data.extend(core::iter::repeat_n(c, n));
        }
        Self { height, width, data }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let n = height * width;
        let mut data = vec![0.0; 3 * n];
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                let i = y * width + x;
                data[i] = px[0];
                data[n + i] = px[1];
                data[2 * n + i] = px[2];
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let n = self.height * self.width;
        let i = y * self.width + x;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    /// Interleaved `RGBRGB...` copy of the data.
    pub fn to_interleaved(&self) -> Vec<f64> {
        let n = self.height * self.width;
        let mut out = Vec::with_capacity(3 * n);
        for i in 0..n {
            out.push(self.data[i]);
            out.push(self.data[n + i]);
            out.push(self.data[2 * n + i]);
        }
        out
    }

    pub fn clamped(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_finite(&self.data)
    }

    pub fn ensure_same_dims(&self, other: &RgbImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(&[self.height, self.width], &[other.height, other.width]));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &RgbImage) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// A single luminance plane.
#[derive(Debug, Clone, PartialEq)]
pub struct LumaPlane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl LumaPlane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dims(&[height * width], &[data.len()]));
        }
        check_finite(&data)?;
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        let var = self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64;
        crate::math::sqrt(var)
    }

    pub fn ensure_same_dims(&self, other: &LumaPlane) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(&[self.height, self.width], &[other.height, other.width]));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &LumaPlane) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Bilinear resize with half-pixel centers (edge samples clamp).
    pub fn resize_bilinear(&self, height: usize, width: usize) -> LumaPlane {
        if (height, width) == self.dims() {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let sample = |fy: f64, fx: f64| -> f64 {
            let fy = fy.clamp(0.0, (self.height - 1) as f64);
            let fx = fx.clamp(0.0, (self.width - 1) as f64);
            let y0 = crate::math::floor(fy) as usize;
            let x0 = crate::math::floor(fx) as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let x1 = (x0 + 1).min(self.width - 1);
            let ty = fy - y0 as f64;
            let tx = fx - x0 as f64;
            let top = self.get(y0, x0) * (1.0 - tx) + self.get(y0, x1) * tx;
            let bot = self.get(y1, x0) * (1.0 - tx) + self.get(y1, x1) * tx;
            top * (1.0 - ty) + bot * ty
        };
        LumaPlane::from_fn(height, width, |y, x| {
            sample((y as f64 + 0.5) * sy - 0.5, (x as f64 + 0.5) * sx - 0.5)
        })
    }

    /// Crops a `size x size` window with its top-left corner at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> LumaPlane {
        LumaPlane::from_fn(h, w, |y, x| self.get(y0 + y, x0 + x))
    }
}

/// The Cb and Cr planes, with 0.5 as the neutral value.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromaPlanes {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ChromaPlanes {
    /// `data` holds the Cb plane followed by the Cr plane.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 2 * height * width {
            return Err(Error::dims(&[2 * height * width], &[data.len()]));
        }
        check_finite(&data)?;
        Ok(Self { height, width, data })
    }

    pub fn neutral(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.5; 2 * height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn cb(&self) -> &[f64] {
        &self.data[..self.height * self.width]
    }

    pub fn cr(&self) -> &[f64] {
        &self.data[self.height * self.width..]
    }
}
