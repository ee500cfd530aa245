//! Small residual convolutional networks used as generator building blocks.
//!
//! Three shapes are available:
//! - a U-shaped network with skip connections (`LumaBackbone`, `ReconNet`,
//!   `PlainRgb`), channel width doubling at every downsampling stage;
//! - a three-stage encoder/decoder without skips (`ChromaCodec`) at half the
//!   base width.
//!
//! All of them add their output to their input, so zeroing the `tail` layer
//! turns a network into the identity map.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::params::{Dtype, Param, ParameterSet};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    Relu,
    #[default]
    LeakyRelu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "leaky_relu" => Some(Activation::LeakyRelu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.leaky_relu(x, 0.0),
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetVariant {
    /// 1 -> 1 channel U-net on luminance.
    LumaBackbone,
    /// 2 -> 2 channel encoder/decoder on chrominance.
    ChromaCodec,
    /// 3 -> 3 channel U-net refining a recombined RGB image.
    ReconNet,
    /// 3 -> 3 channel U-net on RGB, replacing the decoupled restoration
    /// generator when that ablation is active.
    PlainRgb,
}

impl NetVariant {
    pub fn channels(self) -> usize {
        match self {
            NetVariant::LumaBackbone => 1,
            NetVariant::ChromaCodec => 2,
            NetVariant::ReconNet | NetVariant::PlainRgb => 3,
        }
    }

    /// Name prefix of this variant's parameters.
    pub fn prefix(self) -> &'static str {
        match self {
            NetVariant::LumaBackbone => "h_d2c",
            NetVariant::ChromaCodec => "e_d2c",
            NetVariant::ReconNet => "j_c2d",
            NetVariant::PlainRgb => "plain_d2c",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub base_width: usize,
    pub depth: usize,
    pub kernel: usize,
    pub activation: Activation,
    pub variant: NetVariant,
}

impl NetConfig {
    pub fn new(variant: NetVariant, base_width: usize, depth: usize) -> Self {
        Self { base_width, depth, kernel: 3, activation: Activation::default(), variant }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width < 4 {
            return Err(Error::InvalidConfig(format!("base_width must be >= 4, got {}", self.base_width)));
        }
        if self.depth < 1 {
            return Err(Error::InvalidConfig("depth must be >= 1".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("kernel must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    /// Spatial sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        match self.variant {
            NetVariant::ChromaCodec => 2,
            _ => 1 << self.depth,
        }
    }

    fn codec_width(&self) -> usize {
        (self.base_width / 2).max(2)
    }
}

/// One convolution of a network: `name`, input channels, output channels, kernel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
}

/// Convolutions of a network in forward order, with unprefixed names.
pub fn conv_layers(cfg: &NetConfig) -> Vec<ConvSpec> {
    let k = cfg.kernel;
    let n = cfg.variant.channels();
    let spec = |name: String, cin, cout| ConvSpec { name, cin, cout, kernel: k };
    let mut out = Vec::new();
    match cfg.variant {
        NetVariant::ChromaCodec => {
            let c = cfg.codec_width();
            out.push(spec("enc".into(), n, c));
            out.push(spec("mid".into(), c, c));
            out.push(spec("dec".into(), c, c));
            out.push(spec("tail".into(), c, n));
        }
        _ => {
            let w = cfg.base_width;
            let width = |d: usize| w << d;
            out.push(spec("head".into(), n, w));
            for d in 1..=cfg.depth {
                out.push(spec(format!("down{d}"), width(d - 1), width(d)));
            }
            for d in (1..=cfg.depth).rev() {
                out.push(spec(format!("up{d}"), width(d), width(d - 1)));
                out.push(spec(format!("fuse{d}"), width(d - 1), width(d - 1)));
            }
            out.push(spec("tail".into(), w, n));
        }
    }
    out
}

/// Adds uniformly initialized weights `[cout, cin, k, k]` (bound
/// `1/sqrt(cin k k)`) and zero biases for one convolution.
pub(crate) fn init_conv(set: &mut ParameterSet, name: &str, cin: usize, cout: usize, k: usize, seed: u64) -> Result<()> {
    let wname = format!("{name}.w");
    let fan_in = (cin * k * k) as f64;
    let bound = 1.0 / crate::math::sqrt(fan_in);
    let mut r = rng::rng(rng::derive(seed, &[rng::hash_str(&wname)]));
    let w: Vec<f64> = (0..cout * cin * k * k).map(|_| r.random_range(-bound..bound)).collect();
    set.insert(&wname, Param::new(vec![cout, cin, k, k], Dtype::F64, w)?)?;
    set.insert(&format!("{name}.b"), Param::new(vec![cout], Dtype::F64, vec![0.0; cout])?)?;
    Ok(())
}

/// Deterministic parameters for one network, named `<variant prefix>.<layer>.{w,b}`.
pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<ParameterSet> {
    init_params_with_prefix(cfg, cfg.variant.prefix(), seed)
}

pub fn init_params_with_prefix(cfg: &NetConfig, prefix: &str, seed: u64) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut set = ParameterSet::new();
    for layer in conv_layers(cfg) {
        init_conv(&mut set, &format!("{prefix}.{}", layer.name), layer.cin, layer.cout, layer.kernel, seed)?;
    }
    Ok(set)
}

/// A bias is added when `{name}.b` exists.
pub(crate) fn conv(tape: &mut Tape, params: &ParameterSet, name: &str, x: Var) -> Result<Var> {
    let w = tape.param(params, &format!("{name}.w"))?;
    let bias = format!("{name}.b");
    let b = if params.contains(&bias) { Some(tape.param(params, &bias)?) } else { None };
    let ws = tape.shape(w);
    let xs = tape.shape(x);
    if ws.len() != 4 || xs.len() != 3 || ws[1] != xs[0] {
        return Err(Error::ShapeMismatch { name: format!("{name}.w"), expected: xs.to_vec(), found: ws.to_vec() });
    }
    Ok(tape.conv2d(x, w, b))
}

/// Runs the network on `x: [C, H, W]` and returns `x + residual`.
pub fn forward(tape: &mut Tape, params: &ParameterSet, cfg: &NetConfig, prefix: &str, x: Var) -> Result<Var> {
    let (c, h, w) = tape.value(x).chw();
    if c != cfg.variant.channels() {
        return Err(Error::dims(&[cfg.variant.channels()], &[c]));
    }
    let m = cfg.size_multiple();
    if h % m != 0 || w % m != 0 {
        return Err(Error::InvalidConfig(format!("spatial size {h}x{w} is not a multiple of {m}")));
    }
    let act = cfg.activation;
    let name = |layer: &str| format!("{prefix}.{layer}");
    let residual = match cfg.variant {
        NetVariant::ChromaCodec => {
            let e = conv(tape, params, &name("enc"), x)?;
            let e = act.apply(tape, e);
            let p = tape.avg_pool2(e);
            let mid = conv(tape, params, &name("mid"), p)?;
            let mid = act.apply(tape, mid);
            let u = tape.upsample2(mid);
            let d = conv(tape, params, &name("dec"), u)?;
            let d = act.apply(tape, d);
            conv(tape, params, &name("tail"), d)?
        }
        _ => {
            let f0 = conv(tape, params, &name("head"), x)?;
            let mut skips = vec![act.apply(tape, f0)];
            for d in 1..=cfg.depth {
                let p = tape.avg_pool2(skips[d - 1]);
                let f = conv(tape, params, &name(&format!("down{d}")), p)?;
                skips.push(act.apply(tape, f));
            }
            let mut cur = skips[cfg.depth];
            for d in (1..=cfg.depth).rev() {
                let u = tape.upsample2(cur);
                let u = conv(tape, params, &name(&format!("up{d}")), u)?;
                let u = act.apply(tape, u);
                let merged = tape.add(u, skips[d - 1]);
                let f = conv(tape, params, &name(&format!("fuse{d}")), merged)?;
                cur = act.apply(tape, f);
            }
            conv(tape, params, &name("tail"), cur)?
        }
    };
    Ok(tape.add(x, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tensor;

    fn run(cfg: &NetConfig, params: &ParameterSet, h: usize, w: usize) -> Tensor {
        let mut tape = Tape::new();
        let n = cfg.variant.channels();
        let data: Vec<f64> = (0..n * h * w).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let x = tape.constant(Tensor::new(vec![n, h, w], data));
        let y = forward(&mut tape, params, cfg, cfg.variant.prefix(), x).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn shapes_are_preserved() {
        for variant in [NetVariant::LumaBackbone, NetVariant::ChromaCodec, NetVariant::ReconNet, NetVariant::PlainRgb] {
            let cfg = NetConfig::new(variant, 4, 2);
            let p = init_params(&cfg, 1).unwrap();
            let out = run(&cfg, &p, 16, 12);
            assert_eq!(out.shape, vec![variant.channels(), 16, 12]);
        }
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        let cfg = NetConfig::new(NetVariant::LumaBackbone, 4, 1);
        assert_eq!(init_params(&cfg, 3).unwrap(), init_params(&cfg, 3).unwrap());
        let a = init_params(&cfg, 3).unwrap();
        let b = init_params(&cfg, 4).unwrap();
        assert_ne!(a.get("h_d2c.head.w").unwrap().values(), b.get("h_d2c.head.w").unwrap().values());
        assert!(a.get("h_d2c.head.b").unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_tail_is_identity() {
        let cfg = NetConfig::new(NetVariant::ReconNet, 4, 1);
        let mut p = init_params(&cfg, 9).unwrap();
        p.zero_prefix("j_c2d.tail");
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..3 * 8 * 8).map(|i| (i % 7) as f64 / 7.0).collect();
        let x = tape.constant(Tensor::new(vec![3, 8, 8], data.clone()));
        let y = forward(&mut tape, &p, &cfg, "j_c2d", x).unwrap();
        assert_eq!(tape.value(y).data, data);
    }

    #[test]
    fn bad_sizes_and_configs() {
        let cfg = NetConfig::new(NetVariant::LumaBackbone, 4, 2);
        let p = init_params(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(vec![1, 10, 8]));
        assert!(forward(&mut tape, &p, &cfg, "h_d2c", x).is_err());
        assert!(NetConfig::new(NetVariant::LumaBackbone, 2, 1).validate().is_err());
        assert!(NetConfig::new(NetVariant::LumaBackbone, 4, 0).validate().is_err());
    }
}
