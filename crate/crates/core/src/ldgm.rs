//! Luminance degradation guidance.
//!
//! A degraded luminance patch drawn from a [`DegradationPool`] is passed
//! through channel top-k attention (CTA), transformed to the frequency domain,
//! and its amplitude is turned into a per-bin filter
//!
//! ```text
//! F = sigmoid(C1b(LR(C1a(log(1 + |FFT(CTA(patch))|))))) * gamma
//! ```
//!
//! which modulates the encoded clean amplitude as `A' = A * F + A`. The clean
//! phase is kept (after its own encoder) and the result is transformed back.
//!
//! `gamma` is one learnable value per frequency bin. It is symmetrized over
//! conjugate bins before use, and the phase encoder is made odd, so the
//! modulated spectrum stays Hermitian and the output is real.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::fft::conjugate_index;
use crate::nn::{self, LEAKY_SLOPE};
use crate::params::{Dtype, Param, ParameterSet};
use crate::rng;
use crate::spectral::plane_tensor;
use crate::tape::{Tape, Tensor, Var};
use crate::{Error, LumaPlane, Result};

pub const PREFIX: &str = "ldgm";
pub const GAMMA: &str = "ldgm.gamma";

/// Luminance patches from the degraded domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationPool {
    patches: Vec<LumaPlane>,
}

impl DegradationPool {
    pub fn new(patches: Vec<LumaPlane>) -> Result<Self> {
        let first = patches.first().ok_or(Error::EmptyPool)?;
        let dims = first.dims();
        for p in &patches[1..] {
            if p.dims() != dims {
                return Err(Error::dims(&[dims.0, dims.1], &[p.height(), p.width()]));
            }
        }
        Ok(Self { patches })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch(&self, i: usize) -> &LumaPlane {
        &self.patches[i]
    }

    pub fn patches(&self) -> &[LumaPlane] {
        &self.patches
    }

    pub fn patch_dims(&self) -> (usize, usize) {
        self.patches[0].dims()
    }

    /// Uniformly drawn index, fixed by `seed`.
    pub fn sample_index(&self, seed: u64) -> Result<usize> {
        if self.patches.is_empty() {
            return Err(Error::EmptyPool);
        }
        Ok(rng::rng(seed).random_range(0..self.patches.len()))
    }
}

/// Uniformly drawn pool patch, fixed by `seed`.
pub fn sample_pool(pool: &DegradationPool, seed: u64) -> Result<&LumaPlane> {
    Ok(pool.patch(pool.sample_index(seed)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CtaConfig {
    pub lift_channels: usize,
    pub topk: usize,
}

impl Default for CtaConfig {
    fn default() -> Self {
        Self { lift_channels: 16, topk: 8 }
    }
}

impl CtaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lift_channels < 2 {
            return Err(Error::InvalidConfig(format!("cta_channels must be >= 2, got {}", self.lift_channels)));
        }
        if self.topk < 1 || self.topk > self.lift_channels {
            return Err(Error::InvalidConfig(format!(
                "cta_topk must be in 1..={}, got {}",
                self.lift_channels, self.topk
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LdgmConfig {
    pub cta: CtaConfig,
    /// Hidden channels of the amplitude filter.
    pub hidden: usize,
}

impl Default for LdgmConfig {
    fn default() -> Self {
        Self { cta: CtaConfig::default(), hidden: 8 }
    }
}

fn insert(set: &mut ParameterSet, name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<()> {
    set.insert(name, Param::new(shape, Dtype::F64, values)?)
}

/// A 1 -> 2 -> 1 stack of 1x1 convs around a leaky rectifier that computes
/// the identity: `(LR(x) - LR(-x)) / (1 + slope) = x`. The odd phase
/// encoder has no output bias since it would cancel.
fn insert_identity_encoder(set: &mut ParameterSet, name: &str, out_bias: bool) -> Result<()> {
    let k = 1.0 / (1.0 + LEAKY_SLOPE);
    insert(set, &format!("{name}.0.w"), vec![2, 1, 1, 1], vec![1.0, -1.0])?;
    insert(set, &format!("{name}.0.b"), vec![2], vec![0.0; 2])?;
    insert(set, &format!("{name}.1.w"), vec![1, 2, 1, 1], vec![k, -k])?;
    if out_bias {
        insert(set, &format!("{name}.1.b"), vec![1], vec![0.0])?;
    }
    Ok(())
}

/// Parameters for an `height x width` luminance plane. `gamma` starts at one
/// and both clean encoders start as the identity.
pub fn init_params(cfg: &LdgmConfig, height: usize, width: usize, seed: u64) -> Result<ParameterSet> {
    cfg.cta.validate()?;
    if cfg.hidden == 0 {
        return Err(Error::InvalidConfig("ldgm_hidden must be >= 1".into()));
    }
    let c = cfg.cta.lift_channels;
    let mut set = ParameterSet::new();
    nn::init_conv(&mut set, "ldgm.cta.lift", 1, c, 3, seed)?;
    let bound = 1.0 / crate::math::sqrt(c as f64);
    let mut r = rng::rng(rng::derive(seed, &[rng::hash_str("ldgm.cta.score.w")]));
    let w: Vec<f64> = (0..c * c).map(|_| r.random_range(-bound..bound)).collect();
    insert(&mut set, "ldgm.cta.score.w", vec![c, c], w)?;
    insert(&mut set, "ldgm.cta.score.b", vec![c], vec![0.0; c])?;
    nn::init_conv(&mut set, "ldgm.cta.proj", c, 1, 1, seed)?;
    nn::init_conv(&mut set, "ldgm.filter.0", 1, cfg.hidden, 1, seed)?;
    nn::init_conv(&mut set, "ldgm.filter.1", cfg.hidden, 1, 1, seed)?;
    insert_identity_encoder(&mut set, "ldgm.amp_enc", true)?;
    insert_identity_encoder(&mut set, "ldgm.phase_enc", false)?;
    insert(&mut set, GAMMA, vec![height, width], vec![1.0; height * width])?;
    Ok(set)
}

/// Indices of the `k` largest scores; ties go to the lower index.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Channel top-k attention on a `[1, H, W]` patch.
pub fn cta_var(tape: &mut Tape, params: &ParameterSet, patch: Var, cfg: &CtaConfig) -> Result<Var> {
    cfg.validate()?;
    let lifted = nn::conv(tape, params, "ldgm.cta.lift", patch)?;
    let c = tape.shape(lifted)[0];
    if c != cfg.lift_channels {
        return Err(Error::ShapeMismatch {
            name: "ldgm.cta.lift.w".into(),
            expected: vec![cfg.lift_channels],
            found: vec![c],
        });
    }
    let pooled = tape.global_avg_pool(lifted);
    let w = tape.param(params, "ldgm.cta.score.w")?;
    let b = tape.param(params, "ldgm.cta.score.b")?;
    let s = tape.matvec(w, pooled);
    let s = tape.add(s, b);
    let scores = tape.sigmoid(s);
    let mut mask = vec![0.0; c];
    for i in topk_indices(&tape.value(scores).data, cfg.topk) {
        mask[i] = 1.0;
    }
    let mask = tape.constant(Tensor::new(vec![c], mask));
    let gate = tape.mul(scores, mask);
    let attended = tape.channel_scale(lifted, gate);
    nn::conv(tape, params, "ldgm.cta.proj", attended)
}

pub fn cta_forward(params: &ParameterSet, patch: &LumaPlane, cfg: &CtaConfig) -> Result<LumaPlane> {
    let mut tape = Tape::new();
    let x = tape.constant(plane_tensor(patch));
    let y = cta_var(&mut tape, params, x, cfg)?;
    let (h, w) = patch.dims();
    LumaPlane::new(h, w, tape.value(y).data.clone())
}

fn encoder(tape: &mut Tape, params: &ParameterSet, name: &str, x: Var) -> Result<Var> {
    let h = nn::conv(tape, params, &format!("{name}.0"), x)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE);
    nn::conv(tape, params, &format!("{name}.1"), h)
}

/// Intermediate values of one LDGM evaluation, all `[1, H, W]`.
#[derive(Debug, Clone, Copy)]
pub struct LdgmVars {
    pub output: Var,
    pub degraded_amp: Var,
    /// Encoded clean amplitude.
    pub clean_amp: Var,
    /// Encoded clean phase.
    pub phase: Var,
    /// Filtered degradation prior, in `[0, max gamma]`.
    pub filter: Var,
    pub fused_amp: Var,
    /// `[2, H, W]` inverse transform before taking the real part.
    pub complex_output: Var,
}

/// Guides `clean: [1, H, W]` with `patch: [1, H, W]` of the same size.
pub fn ldgm_var(tape: &mut Tape, params: &ParameterSet, clean: Var, patch: Var, cfg: &CtaConfig) -> Result<LdgmVars> {
    let (_, h, w) = tape.value(clean).chw();
    let (_, ph, pw) = tape.value(patch).chw();
    if (ph, pw) != (h, w) {
        return Err(Error::dims(&[h, w], &[ph, pw]));
    }
    let gamma = params.get(GAMMA).ok_or_else(|| Error::MissingParam(GAMMA.into()))?;
    if gamma.shape() != [h, w] {
        return Err(Error::ShapeMismatch { name: GAMMA.into(), expected: vec![h, w], found: gamma.shape().to_vec() });
    }
    let conj = conjugate_index(h, w);

    let att = cta_var(tape, params, patch, cfg)?;
    let z = tape.to_complex(att);
    let z = tape.dft2(z, false);
    let degraded_amp = tape.amplitude(z);
    let logamp = tape.offset(degraded_amp, 1.0);
    let logamp = tape.ln(logamp);
    let f = nn::conv(tape, params, "ldgm.filter.0", logamp)?;
    let f = tape.leaky_relu(f, LEAKY_SLOPE);
    let f = nn::conv(tape, params, "ldgm.filter.1", f)?;
    let f = tape.sigmoid(f);
    let g = tape.param(params, GAMMA)?;
    let g = tape.reshape(g, vec![1, h, w]);
    let g_mirror = tape.gather(g, conj.clone());
    let g = tape.add(g, g_mirror);
    let g = tape.scale(g, 0.5);
    let filter = tape.mul(f, g);

    let zc = tape.to_complex(clean);
    let zc = tape.dft2(zc, false);
    let amp = tape.amplitude(zc);
    let phi = tape.phase(zc);
    let clean_amp = encoder(tape, params, "ldgm.amp_enc", amp)?;

    // Odd part of the phase encoder, applied away from self-conjugate bins.
    let e_pos = encoder(tape, params, "ldgm.phase_enc", phi)?;
    let neg_phi = tape.scale(phi, -1.0);
    let e_neg = encoder(tape, params, "ldgm.phase_enc", neg_phi)?;
    let odd = tape.sub(e_pos, e_neg);
    let odd = tape.scale(odd, 0.5);
    let delta = tape.sub(odd, phi);
    let mask: Vec<f64> = conj.iter().enumerate().map(|(k, &c)| if c == k { 0.0 } else { 1.0 }).collect();
    let mask = tape.constant(Tensor::new(vec![1, h, w], mask));
    let delta = tape.mul(delta, mask);
    let phase = tape.add(phi, delta);

    let modulated = tape.mul(clean_amp, filter);
    let fused_amp = tape.add(modulated, clean_amp);
    let spec = tape.polar(fused_amp, phase);
    let complex_output = tape.dft2(spec, true);
    let output = tape.slice(complex_output, 0, 1);
    Ok(LdgmVars { output, degraded_amp, clean_amp, phase, filter, fused_amp, complex_output })
}

/// Plain-value view of [`LdgmVars`].
#[derive(Debug, Clone, PartialEq)]
pub struct LdgmTrace {
    pub output: LumaPlane,
    pub clean_amp: Vec<f64>,
    pub phase: Vec<f64>,
    pub filter: Vec<f64>,
    pub fused_amp: Vec<f64>,
    /// Max-abs imaginary part of the inverse transform.
    pub residue: f64,
}

fn prepare_patch(clean: &LumaPlane, patch: &LumaPlane) -> LumaPlane {
    if patch.dims() == clean.dims() {
        patch.clone()
    } else {
        patch.resize_bilinear(clean.height(), clean.width())
    }
}

/// Like [`ldgm_forward`], also returning the intermediate values.
pub fn ldgm_trace(params: &ParameterSet, clean: &LumaPlane, patch: &LumaPlane, cfg: &CtaConfig) -> Result<LdgmTrace> {
    let patch = prepare_patch(clean, patch);
    let mut tape = Tape::new();
    let c = tape.constant(plane_tensor(clean));
    let p = tape.constant(plane_tensor(&patch));
    let v = ldgm_var(&mut tape, params, c, p, cfg)?;
    let (h, w) = clean.dims();
    let n = h * w;
    let residue = tape.value(v.complex_output).data[n..].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(LdgmTrace {
        output: LumaPlane::new(h, w, tape.value(v.output).data.clone())?,
        clean_amp: tape.value(v.clean_amp).data.clone(),
        phase: tape.value(v.phase).data.clone(),
        filter: tape.value(v.filter).data.clone(),
        fused_amp: tape.value(v.fused_amp).data.clone(),
        residue,
    })
}

/// Clean luminance guided by a degraded patch. The patch is resized
/// bilinearly when its size differs from the clean plane.
pub fn ldgm_forward(params: &ParameterSet, clean: &LumaPlane, patch: &LumaPlane, cfg: &CtaConfig) -> Result<LumaPlane> {
    Ok(ldgm_trace(params, clean, patch, cfg)?.output)
}
