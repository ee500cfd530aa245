//! The two cycle generators.
//!
//! Restoration works on decoupled components: a luminance U-net on Y and a
//! light encoder/decoder on CbCr, recombined into RGB. Re-degradation adds
//! Gaussian noise to CbCr, guides Y with a pool patch through LDGM, recombines
//! and refines the result with a 3-channel U-net.
//!
//! Tape variants (`*_var`) are used for training; the image-level functions
//! run them on a throwaway tape.

use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::colorspace::{RGB_TO_YCBCR, YCBCR_TO_RGB};
use crate::ldgm::{self, DegradationPool, LdgmConfig};
use crate::nn::{self, Activation, NetConfig, NetVariant};
use crate::params::ParameterSet;
use crate::rng;
use crate::spectral::{image_tensor, plane_tensor};
use crate::tape::{Tape, Tensor, Var};
use crate::{Error, LumaPlane, Result, RgbImage};

/// Module switches. Each one removes a component from the compute graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    /// Replace the decoupled restoration generator by a plain RGB U-net.
    pub no_gd2c: bool,
    /// Re-degradation becomes the identity.
    pub no_gc2d: bool,
    /// Skip the reconstruction net after recombination.
    pub no_jc2d: bool,
    /// Leave re-degraded luminance unguided.
    pub no_ldgm: bool,
    /// Drop the contrastive term.
    pub no_dacr: bool,
}

impl Ablation {
    pub const FLAGS: [&'static str; 5] = ["no_gd2c", "no_gc2d", "no_jc2d", "no_ldgm", "no_dacr"];

    pub fn get(&self, flag: &str) -> Option<bool> {
        Some(match flag {
            "no_gd2c" => self.no_gd2c,
            "no_gc2d" => self.no_gc2d,
            "no_jc2d" => self.no_jc2d,
            "no_ldgm" => self.no_ldgm,
            "no_dacr" => self.no_dacr,
            _ => return None,
        })
    }

    pub fn set(&mut self, flag: &str, on: bool) -> bool {
        let slot = match flag {
            "no_gd2c" => &mut self.no_gd2c,
            "no_gc2d" => &mut self.no_gc2d,
            "no_jc2d" => &mut self.no_jc2d,
            "no_ldgm" => &mut self.no_ldgm,
            "no_dacr" => &mut self.no_dacr,
            _ => return false,
        };
        *slot = on;
        true
    }

    pub fn only(flag: &str) -> Self {
        let mut a = Self::default();
        a.set(flag, true);
        a
    }

    fn uses_ldgm(&self) -> bool {
        !self.no_gc2d && !self.no_ldgm
    }

    fn uses_jc2d(&self) -> bool {
        !self.no_gc2d && !self.no_jc2d
    }
}

/// Architecture of both generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub base_width: usize,
    pub depth: usize,
    pub kernel: usize,
    pub activation: Activation,
    pub ldgm: LdgmConfig,
    /// Side of the square training crop; sizes the per-bin LDGM filter.
    pub crop: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_width: 8,
            depth: 2,
            kernel: 3,
            activation: Activation::default(),
            ldgm: LdgmConfig::default(),
            crop: 64,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn net(&self, variant: NetVariant) -> NetConfig {
        NetConfig { base_width: self.base_width, depth: self.depth, kernel: self.kernel, activation: self.activation, variant }
    }

    /// Networks present under the current ablation, in a fixed order.
    pub fn enabled_nets(&self) -> Vec<NetVariant> {
        let mut v = Vec::new();
        if self.ablation.no_gd2c {
            v.push(NetVariant::PlainRgb);
        } else {
            v.push(NetVariant::LumaBackbone);
            v.push(NetVariant::ChromaCodec);
        }
        if self.ablation.uses_jc2d() {
            v.push(NetVariant::ReconNet);
        }
        v
    }

    /// Parameter name prefixes of the enabled modules.
    pub fn enabled_prefixes(&self) -> Vec<&'static str> {
        let mut v: Vec<&'static str> = self.enabled_nets().into_iter().map(NetVariant::prefix).collect();
        if self.ablation.uses_ldgm() {
            v.push(ldgm::PREFIX);
        }
        v
    }

    /// Image sides must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        (1usize << self.depth).max(2)
    }

    pub fn validate(&self) -> Result<()> {
        for v in [NetVariant::LumaBackbone, NetVariant::ChromaCodec] {
            self.net(v).validate()?;
        }
        self.ldgm.cta.validate()?;
        let m = self.size_multiple();
        if self.crop < crate::image::MIN_SIDE || self.crop % m != 0 {
            return Err(Error::InvalidConfig(format!(
                "crop must be >= {} and a multiple of {m}, got {}",
                crate::image::MIN_SIDE,
                self.crop
            )));
        }
        Ok(())
    }
}

/// Parameters of every enabled module, each drawn from its own stream of `seed`.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut set = ParameterSet::new();
    for v in cfg.enabled_nets() {
        set.merge(nn::init_params(&cfg.net(v), seed)?)?;
    }
    if cfg.ablation.uses_ldgm() {
        set.merge(ldgm::init_params(&cfg.ldgm, cfg.crop, cfg.crop, seed)?)?;
    }
    Ok(set)
}

/// Parameters of all modules regardless of the ablation switches.
pub fn init_full_model(cfg: &ModelConfig, seed: u64) -> Result<ParameterSet> {
    let full = ModelConfig { ablation: Ablation::default(), ..*cfg };
    let mut set = init_model(&full, seed)?;
    set.merge(nn::init_params(&cfg.net(NetVariant::PlainRgb), seed)?)?;
    Ok(set)
}

fn clamp01(tape: &mut Tape, x: Var) -> Var {
    tape.clamp(x, 0.0, 1.0)
}

fn to_ycbcr(tape: &mut Tape, rgb: Var) -> (Var, Var) {
    let ycc = tape.channel_mix(rgb, &RGB_TO_YCBCR.matrix_flat(), &RGB_TO_YCBCR.offset);
    (tape.slice(ycc, 0, 1), tape.slice(ycc, 1, 2))
}

fn to_rgb(tape: &mut Tape, y: Var, c: Var) -> Var {
    let ycc = tape.concat(&[y, c]);
    tape.channel_mix(ycc, &YCBCR_TO_RGB.matrix_flat(), &YCBCR_TO_RGB.offset)
}

/// Restoration of `degraded: [3, H, W]`, clamped to `[0, 1]`.
pub fn restore_var(tape: &mut Tape, params: &ParameterSet, cfg: &ModelConfig, degraded: Var) -> Result<Var> {
    let out = if cfg.ablation.no_gd2c {
        let v = NetVariant::PlainRgb;
        nn::forward(tape, params, &cfg.net(v), v.prefix(), degraded)?
    } else {
        let (y, c) = to_ycbcr(tape, degraded);
        let luma = NetVariant::LumaBackbone;
        let chroma = NetVariant::ChromaCodec;
        let y = nn::forward(tape, params, &cfg.net(luma), luma.prefix(), y)?;
        let c = nn::forward(tape, params, &cfg.net(chroma), chroma.prefix(), c)?;
        to_rgb(tape, y, c)
    };
    Ok(clamp01(tape, out))
}

/// Values produced along the re-degradation path.
#[derive(Debug, Clone, Copy)]
pub struct RedegradeVars {
    pub output: Var,
    /// Luminance after guidance, `[1, H, W]`.
    pub luma: Var,
    /// Chrominance after noise, `[2, H, W]`.
    pub chroma: Var,
    /// Recombined RGB before the reconstruction net.
    pub pre_j: Var,
}

/// Chroma noise `N(0, sigma^2)` for a `h x w` image, fixed by `seed`.
pub fn chroma_noise(h: usize, w: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::rng(seed);
    (0..2 * h * w)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            sigma * z
        })
        .collect()
}

/// Re-degradation of `clean: [3, H, W]`. `patch` must already match the
/// image size; `noise` holds `2 H W` chroma offsets.
pub fn redegrade_var(
    tape: &mut Tape,
    params: &ParameterSet,
    cfg: &ModelConfig,
    clean: Var,
    patch: &LumaPlane,
    noise: &[f64],
) -> Result<RedegradeVars> {
    if cfg.ablation.no_gc2d {
        return Ok(RedegradeVars { output: clean, luma: clean, chroma: clean, pre_j: clean });
    }
    let (_, h, w) = tape.value(clean).chw();
    if noise.len() != 2 * h * w {
        return Err(Error::dims(&[2 * h * w], &[noise.len()]));
    }
    let (y, c) = to_ycbcr(tape, clean);
    let n = tape.constant(Tensor::new(alloc::vec![2, h, w], noise.to_vec()));
    let chroma = tape.add(c, n);
    let luma = if cfg.ablation.no_ldgm {
        y
    } else {
        let p = tape.constant(plane_tensor(patch));
        ldgm::ldgm_var(tape, params, y, p, &cfg.ldgm.cta)?.output
    };
    let pre_j = to_rgb(tape, luma, chroma);
    let out = if cfg.ablation.no_jc2d {
        pre_j
    } else {
        let v = NetVariant::ReconNet;
        nn::forward(tape, params, &cfg.net(v), v.prefix(), pre_j)?
    };
    let output = clamp01(tape, out);
    Ok(RedegradeVars { output, luma, chroma, pre_j })
}

/// Stream ids under a re-degradation seed.
const PATCH_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Pool patch and chroma noise for one re-degradation, both fixed by `seed`.
pub fn redegrade_inputs(pool: &DegradationPool, h: usize, w: usize, sigma: f64, seed: u64) -> Result<(LumaPlane, Vec<f64>)> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma_chroma must be >= 0, got {sigma}")));
    }
    let patch = ldgm::sample_pool(pool, rng::derive(seed, &[PATCH_STREAM]))?;
    let patch = if patch.dims() == (h, w) { patch.clone() } else { patch.resize_bilinear(h, w) };
    Ok((patch, chroma_noise(h, w, sigma, rng::derive(seed, &[NOISE_STREAM]))))
}

fn image_from(tape: &Tape, v: Var) -> Result<RgbImage> {
    let (_, h, w) = tape.value(v).chw();
    RgbImage::from_planar(h, w, tape.value(v).data.clone())
}

pub fn restore(params: &ParameterSet, cfg: &ModelConfig, degraded: &RgbImage) -> Result<RgbImage> {
    degraded.validate()?;
    let mut tape = Tape::new();
    let x = tape.constant(image_tensor(degraded));
    let y = restore_var(&mut tape, params, cfg, x)?;
    image_from(&tape, y)
}

pub fn redegrade(
    params: &ParameterSet,
    cfg: &ModelConfig,
    clean: &RgbImage,
    pool: &DegradationPool,
    noise_seed: u64,
    sigma_chroma: f64,
) -> Result<RgbImage> {
    clean.validate()?;
    let (h, w) = clean.dims();
    let (patch, noise) = redegrade_inputs(pool, h, w, sigma_chroma, noise_seed)?;
    let mut tape = Tape::new();
    let x = tape.constant(image_tensor(clean));
    let v = redegrade_var(&mut tape, params, cfg, x, &patch, &noise)?;
    image_from(&tape, v.output)
}
