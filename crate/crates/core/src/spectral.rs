//! Amplitude/phase view of 2-D Fourier transforms.
//!
//! Conventions: the forward transform is unnormalized, the inverse carries the
//! `1 / (H W)` factor, and the DC term sits at index `(0, 0)`.
//!
//! The Fourier distance used by the cycle loss is an interpretation, since the
//! loss it stands in for is only known by name: per colour channel, the mean
//! absolute difference of amplitudes plus the mean absolute wrapped phase
//! difference, averaged over channels. [`FourierMode::RealImag`] selects the
//! alternative of comparing real and imaginary parts directly.

use alloc::vec;
use alloc::vec::Vec;

use crate::fft::fft2_inplace;
use crate::image::MIN_SIDE;
use crate::math::{self, atan2, sqrt};
use crate::tape::{Tape, Tensor, Var};
use crate::{Error, LumaPlane, Result, RgbImage};

/// Amplitude and phase of a 2-D DFT.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    amplitude: Vec<f64>,
    phase: Vec<f64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, amplitude: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        let n = height * width;
        if amplitude.len() != n || phase.len() != n {
            return Err(Error::dims(&[n, n], &[amplitude.len(), phase.len()]));
        }
        if let Some(index) = amplitude.iter().position(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::NonFinite { index });
        }
        if let Some(index) = phase.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { height, width, amplitude, phase })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        let n = height * width;
        Self { height, width, amplitude: vec![0.0; n], phase: vec![0.0; n] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn amplitude_mut(&mut self) -> &mut [f64] {
        &mut self.amplitude
    }
}

fn check_spectral_dims(h: usize, w: usize) -> Result<()> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::TooSmall { height: h, width: w, min: MIN_SIDE });
    }
    Ok(())
}

/// Forward transform of a luminance plane.
pub fn fft2(plane: &LumaPlane) -> Result<Spectrum> {
    let (h, w) = plane.dims();
    check_spectral_dims(h, w)?;
    if let Some(index) = plane.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut re = plane.data().to_vec();
    let mut im = vec![0.0; h * w];
    fft2_inplace(h, w, &mut re, &mut im, false);
    let amplitude = re.iter().zip(&im).map(|(r, i)| sqrt(r * r + i * i)).collect();
    let phase = re.iter().zip(&im).map(|(r, i)| atan2(*i, *r)).collect();
    Ok(Spectrum { height: h, width: w, amplitude, phase })
}

/// Inverse transform; returns the real part and the largest magnitude of the
/// discarded imaginary part.
pub fn ifft2_with_residue(spec: &Spectrum) -> Result<(LumaPlane, f64)> {
    let (h, w) = spec.dims();
    let n = h * w;
    let mut re: Vec<f64> = spec.amplitude.iter().zip(&spec.phase).map(|(a, p)| a * math::cos(*p)).collect();
    let mut im: Vec<f64> = spec.amplitude.iter().zip(&spec.phase).map(|(a, p)| a * math::sin(*p)).collect();
    fft2_inplace(h, w, &mut re, &mut im, true);
    let s = 1.0 / n as f64;
    re.iter_mut().for_each(|v| *v *= s);
    let residue = im.iter().map(|v| (v * s).abs()).fold(0.0, f64::max);
    Ok((LumaPlane::new(h, w, re)?, residue))
}

/// Inverse transform (real part, no clamping).
pub fn ifft2(spec: &Spectrum) -> Result<LumaPlane> {
    ifft2_with_residue(spec).map(|(p, _)| p)
}

/// Keeps the phase of `content` and takes the amplitude of `donor`.
pub fn swap_amplitude(content: &LumaPlane, donor: &LumaPlane) -> Result<LumaPlane> {
    content.ensure_same_dims(donor)?;
    let c = fft2(content)?;
    let d = fft2(donor)?;
    let (h, w) = c.dims();
    ifft2(&Spectrum { height: h, width: w, amplitude: d.amplitude, phase: c.phase })
}

/// Which spectral quantities the Fourier distance compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FourierMode {
    /// Mean |amplitude difference| + mean |wrapped phase difference|.
    #[default]
    AmpPhase,
    /// Mean |real difference| + mean |imaginary difference|.
    RealImag,
}

impl FourierMode {
    pub fn name(self) -> &'static str {
        match self {
            FourierMode::AmpPhase => "amp_phase",
            FourierMode::RealImag => "real_imag",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "amp_phase" => Some(FourierMode::AmpPhase),
            "real_imag" => Some(FourierMode::RealImag),
            _ => None,
        }
    }
}

/// Per-channel spectrum of an image tensor `[C, H, W]` on the tape.
pub(crate) fn channel_spectra(tape: &mut Tape, img: Var) -> Vec<Var> {
    let (c, _, _) = tape.value(img).chw();
    (0..c)
        .map(|ch| {
            let plane = tape.slice(img, ch, 1);
            let z = tape.to_complex(plane);
            tape.dft2(z, false)
        })
        .collect()
}

/// Differentiable Fourier distance between two `[C, H, W]` tensors.
pub fn fourier_distance_var(tape: &mut Tape, a: Var, b: Var, mode: FourierMode) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::dims(tape.shape(a), tape.shape(b)));
    }
    let (c, h, w) = tape.value(a).chw();
    check_spectral_dims(h, w)?;
    let za = channel_spectra(tape, a);
    let zb = channel_spectra(tape, b);
    let mut terms = Vec::with_capacity(c);
    for (fa, fb) in za.into_iter().zip(zb) {
        let term = match mode {
            FourierMode::AmpPhase => {
                let (aa, ab) = (tape.amplitude(fa), tape.amplitude(fb));
                let da = tape.sub(aa, ab);
                let da = tape.abs(da);
                let amp = tape.mean(da);
                let (pa, pb) = (tape.phase(fa), tape.phase(fb));
                let dp = tape.sub(pa, pb);
                let dp = tape.straight_through(dp, math::wrap_angle);
                let dp = tape.abs(dp);
                let pha = tape.mean(dp);
                tape.add(amp, pha)
            }
            FourierMode::RealImag => {
                let d = tape.sub(fa, fb);
                let d = tape.abs(d);
                // two planes averaged separately, then summed
                let m = tape.mean(d);
                tape.scale(m, 2.0)
            }
        };
        terms.push(term);
    }
    let stacked = tape.concat(&terms);
    Ok(tape.mean(stacked))
}

/// Fourier distance between two images.
pub fn fourier_distance(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    fourier_distance_with(a, b, FourierMode::AmpPhase)
}

pub fn fourier_distance_with(a: &RgbImage, b: &RgbImage, mode: FourierMode) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let mut tape = Tape::new();
    let va = tape.constant(image_tensor(a));
    let vb = tape.constant(image_tensor(b));
    let d = fourier_distance_var(&mut tape, va, vb, mode)?;
    Ok(tape.scalar_value(d))
}

/// `[3, H, W]` tensor view of an image.
pub fn image_tensor(img: &RgbImage) -> Tensor {
    Tensor::new(vec![3, img.height(), img.width()], img.data().to_vec())
}

/// `[1, H, W]` tensor view of a plane.
pub fn plane_tensor(p: &LumaPlane) -> Tensor {
    Tensor::new(vec![1, p.height(), p.width()], p.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_plane(h: usize, w: usize, seed: u64) -> LumaPlane {
        let mut rng = crate::rng::rng(seed);
        LumaPlane::from_fn(h, w, |_, _| rng.random())
    }

    fn random_image(h: usize, w: usize, seed: u64) -> RgbImage {
        let mut rng = crate::rng::rng(seed);
        RgbImage::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn constant_plane_is_dc_only() {
        let c = 0.3;
        let s = fft2(&LumaPlane::filled(8, 12, c)).unwrap();
        assert!((s.amplitude()[0] - c * 96.0).abs() < 1e-9);
        assert!(s.amplitude()[1..].iter().all(|a| *a < 1e-9));
        assert!(s.phase()[0].abs() < 1e-12);
    }

    #[test]
    fn parseval() {
        let p = random_plane(16, 16, 1);
        let s = fft2(&p).unwrap();
        let lhs: f64 = p.data().iter().map(|v| v * v).sum();
        let rhs: f64 = s.amplitude().iter().map(|a| a * a).sum::<f64>() / 256.0;
        assert!(((lhs - rhs) / lhs).abs() < 1e-4);
    }

    #[test]
    fn cosine_has_two_bins() {
        let (h, w, u) = (8, 16, 3);
        let p = LumaPlane::from_fn(h, w, |_, x| math::cos(2.0 * math::PI * (u * x) as f64 / w as f64));
        let s = fft2(&p).unwrap();
        let nonzero: Vec<usize> = (0..h * w).filter(|&k| s.amplitude()[k] > 1e-9).collect();
        assert_eq!(nonzero, vec![u, w - u]);
        assert!((s.amplitude()[u] - (h * w) as f64 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_round_trip_and_linearity() {
        let p = random_plane(12, 10, 2);
        let s = fft2(&p).unwrap();
        let (back, residue) = ifft2_with_residue(&s).unwrap();
        assert!(back.max_abs_diff(&p) < 1e-5);
        assert!(residue < 1e-9);
        let mut doubled = s.clone();
        doubled.amplitude_mut().iter_mut().for_each(|a| *a *= 2.0);
        let d = ifft2(&doubled).unwrap();
        for (x, y) in d.data().iter().zip(p.data()) {
            assert!((x - 2.0 * y).abs() < 1e-9);
        }
        let zero = ifft2(&Spectrum::zeros(8, 8)).unwrap();
        assert!(zero.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn too_small_and_non_finite_rejected() {
        assert!(matches!(fft2(&LumaPlane::filled(4, 8, 0.0)), Err(Error::TooSmall { .. })));
        let mut p = LumaPlane::filled(8, 8, 0.0);
        p.data_mut()[3] = f64::INFINITY;
        assert!(matches!(fft2(&p), Err(Error::NonFinite { index: 3 })));
    }

    #[test]
    fn self_swap_and_phase_preservation() {
        let content = random_plane(16, 16, 3);
        let donor = random_plane(16, 16, 4);
        assert!(swap_amplitude(&content, &content).unwrap().max_abs_diff(&content) < 1e-5);
        let out = swap_amplitude(&content, &donor).unwrap();
        let so = fft2(&out).unwrap();
        let sc = fft2(&content).unwrap();
        let sd = fft2(&donor).unwrap();
        for k in 0..256 {
            if so.amplitude()[k] > 1e-6 {
                assert!(math::wrap_angle(so.phase()[k] - sc.phase()[k]).abs() < 1e-4, "bin {k}");
            }
            assert!((so.amplitude()[k] - sd.amplitude()[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn flattened_donor_lowers_contrast() {
        let content = LumaPlane::from_fn(32, 32, |y, x| 0.5 + 0.4 * math::sin((x + 2 * y) as f64 * 0.4));
        // gamma-flattened copy: same layout, compressed dynamic range
        let donor = LumaPlane::from_fn(32, 32, |y, x| 0.5 + 0.5 * libm::pow(content.get(y, x), 0.3) - 0.3);
        assert!(donor.std_dev() < content.std_dev());
        let out = swap_amplitude(&content, &donor).unwrap();
        assert!(out.std_dev() < content.std_dev());
    }

    #[test]
    fn fourier_distance_examples() {
        let a = random_image(8, 8, 5).clamped();
        assert_eq!(fourier_distance(&a, &a).unwrap(), 0.0);
        let base = RgbImage::from_fn(8, 8, |y, x| {
            let v = 0.2 + 0.05 * ((x + y) % 4) as f64;
            [v, v + 0.1, v + 0.2]
        });
        let mut shifted = base.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += 0.1);
        let d = fourier_distance(&shifted, &base).unwrap();
        assert!((d - 0.1).abs() < 1e-12, "{d}");
        let b = random_image(8, 8, 6);
        let ab = fourier_distance(&a, &b).unwrap();
        let ba = fourier_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab > 0.0);
    }

    #[test]
    fn real_imag_mode_dc_shift() {
        let base = RgbImage::filled(8, 8, [0.4; 3]);
        let mut shifted = base.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += 0.1);
        // only the DC real part moves, by 0.1 * 64, averaged over 2 * 64 entries, times 2
        let d = fourier_distance_with(&shifted, &base, FourierMode::RealImag).unwrap();
        assert!((d - 0.1).abs() < 1e-12, "{d}");
    }
}
