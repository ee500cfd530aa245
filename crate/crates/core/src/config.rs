//! Training configuration and its flat `key = value` text form.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown and repeated
//! keys are errors. [`TrainConfig::to_text`] writes every key in a fixed
//! order and parses back to an equal value.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use crate::augment::AugmentConfig;
use crate::dacr::{ClassifierInput, DacrSelect, DacrWeights, DEFAULT_PROMPTS};
use crate::generators::{Ablation, ModelConfig};
use crate::ldgm::{CtaConfig, LdgmConfig};
use crate::losses::LossWeights;
use crate::nn::Activation;
use crate::optim::AdamConfig;
use crate::params::Dtype;
use crate::spectral::FourierMode;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub iterations: u64,
    pub batch: usize,
    pub crop: usize,
    pub seed: u64,
    pub loss: LossWeights,
    pub fourier_mode: FourierMode,
    pub dacr: DacrWeights,
    pub dacr_include_positive: bool,
    pub dacr_select: DacrSelect,
    pub classifier_input: ClassifierInput,
    pub prompts: [String; 3],
    /// `stub` or `external:<path>`.
    pub embedding_backend: String,
    pub sigma_chroma: f64,
    pub pool_size: usize,
    /// Pool patch side; 0 means the crop size.
    pub pool_patch: usize,
    pub base_width: usize,
    pub depth: usize,
    pub kernel: usize,
    pub activation: Activation,
    pub cta_channels: usize,
    pub cta_topk: usize,
    pub ldgm_hidden: usize,
    pub grad_clip: bool,
    pub grad_clip_norm: f64,
    pub dtype: Dtype,
    pub ablation: Ablation,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 2e-4,
            lr_min: 1e-6,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            iterations: 500_000,
            batch: 8,
            crop: 256,
            seed: 0,
            loss: LossWeights::default(),
            fourier_mode: FourierMode::default(),
            dacr: DacrWeights::default(),
            dacr_include_positive: false,
            dacr_select: DacrSelect::default(),
            classifier_input: ClassifierInput::default(),
            prompts: DEFAULT_PROMPTS.map(|s| s.to_string()),
            embedding_backend: "stub".to_string(),
            sigma_chroma: 0.02,
            pool_size: 256,
            pool_patch: 0,
            base_width: 16,
            depth: 2,
            kernel: 3,
            activation: Activation::default(),
            cta_channels: 16,
            cta_topk: 8,
            ldgm_hidden: 8,
            grad_clip: false,
            grad_clip_norm: 1.0,
            dtype: Dtype::F32,
            ablation: Ablation::default(),
            augment: AugmentConfig::default(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> core::result::Result<T, String> {
    value.parse().map_err(|_| format!("`{key}`: cannot parse `{value}`"))
}

fn parse_bool(key: &str, value: &str) -> core::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("`{key}`: expected true or false, got `{value}`")),
    }
}

fn parse_rot90(value: &str) -> core::result::Result<Vec<u8>, String> {
    value
        .split(',')
        .map(|s| match s.trim() {
            "0" => Ok(0),
            "90" => Ok(1),
            "180" => Ok(2),
            "270" => Ok(3),
            other => Err(format!("`aug_rot90`: `{other}` is not one of 0, 90, 180, 270")),
        })
        .collect()
}

impl TrainConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            base_width: self.base_width,
            depth: self.depth,
            kernel: self.kernel,
            activation: self.activation,
            ldgm: LdgmConfig { cta: CtaConfig { lift_channels: self.cta_channels, topk: self.cta_topk }, hidden: self.ldgm_hidden },
            crop: self.crop,
            ablation: self.ablation,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn pool_patch_size(&self) -> usize {
        if self.pool_patch == 0 {
            self.crop
        } else {
            self.pool_patch
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr0 > self.lr_min && self.lr_min >= 0.0) {
            return bad(format!("need lr0 > lr_min >= 0, got lr0={} lr_min={}", self.lr0, self.lr_min));
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if self.pool_size == 0 {
            return bad("pool_size must be >= 1".into());
        }
        if !(self.sigma_chroma >= 0.0 && self.sigma_chroma.is_finite()) {
            return bad(format!("sigma_chroma must be >= 0, got {}", self.sigma_chroma));
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad(format!("grad_clip_norm must be > 0, got {}", self.grad_clip_norm));
        }
        if self.embedding_backend != "stub" && !self.embedding_backend.starts_with("external:") {
            return bad(format!("embedding_backend must be `stub` or `external:<path>`, got `{}`", self.embedding_backend));
        }
        self.loss.validate()?;
        self.dacr.validate()?;
        self.adam().validate()?;
        self.augment.validate()?;
        self.model().validate()
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> core::result::Result<(), String> {
        let v = value;
        match key {
            "lr0" => self.lr0 = parse_num(key, v)?,
            "lr_min" => self.lr_min = parse_num(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "iterations" => self.iterations = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "crop" => self.crop = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "lambda_cyc" => self.loss.lambda_cyc = parse_num(key, v)?,
            "lambda_dacr" => self.loss.lambda_dacr = parse_num(key, v)?,
            "fourier_weight" => self.loss.fourier_weight = parse_num(key, v)?,
            "fourier_mode" => {
                self.fourier_mode = FourierMode::parse(v).ok_or_else(|| format!("`{key}`: unknown mode `{v}`"))?
            }
            "dacr_alpha" => self.dacr.alpha = parse_num(key, v)?,
            "dacr_beta" => self.dacr.beta = parse_num(key, v)?,
            "dacr_tau" => self.dacr.tau = parse_num(key, v)?,
            "dacr_include_positive" => self.dacr_include_positive = parse_bool(key, v)?,
            "dacr_select" => {
                self.dacr_select = DacrSelect::parse(v).ok_or_else(|| format!("`{key}`: expected hard or all, got `{v}`"))?
            }
            "classifier_input" => {
                self.classifier_input =
                    ClassifierInput::parse(v).ok_or_else(|| format!("`{key}`: expected proxy or restored, got `{v}`"))?
            }
            "prompt_easy" => self.prompts[0] = v.to_string(),
            "prompt_hard" => self.prompts[1] = v.to_string(),
            "prompt_very_hard" => self.prompts[2] = v.to_string(),
            "embedding_backend" => self.embedding_backend = v.to_string(),
            "sigma_chroma" => self.sigma_chroma = parse_num(key, v)?,
            "pool_size" => self.pool_size = parse_num(key, v)?,
            "pool_patch" => self.pool_patch = parse_num(key, v)?,
            "base_width" => self.base_width = parse_num(key, v)?,
            "depth" => self.depth = parse_num(key, v)?,
            "kernel" => self.kernel = parse_num(key, v)?,
            "activation" => {
                self.activation = Activation::parse(v).ok_or_else(|| format!("`{key}`: unknown activation `{v}`"))?
            }
            "cta_channels" => self.cta_channels = parse_num(key, v)?,
            "cta_topk" => self.cta_topk = parse_num(key, v)?,
            "ldgm_hidden" => self.ldgm_hidden = parse_num(key, v)?,
            "grad_clip" => self.grad_clip = parse_bool(key, v)?,
            "grad_clip_norm" => self.grad_clip_norm = parse_num(key, v)?,
            "dtype" => self.dtype = Dtype::parse(v).ok_or_else(|| format!("`{key}`: expected f32 or f64, got `{v}`"))?,
            "aug_hflip" => self.augment.hflip_prob = parse_num(key, v)?,
            "aug_rot90" => self.augment.rot90_choices = parse_rot90(v)?,
            "aug_brightness" => self.augment.brightness = parse_num(key, v)?,
            "aug_contrast" => self.augment.contrast = parse_num(key, v)?,
            "aug_saturation" => self.augment.saturation = parse_num(key, v)?,
            "aug_jitter_clean" => self.augment.jitter_clean = parse_bool(key, v)?,
            "aug_jitter_degraded" => self.augment.jitter_degraded = parse_bool(key, v)?,
            flag if Ablation::FLAGS.contains(&flag) => {
                let on = parse_bool(key, v)?;
                self.ablation.set(flag, on);
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let rot = self
            .augment
            .rot90_choices
            .iter()
            .map(|q| format!("{}", *q as u32 * 90))
            .collect::<Vec<_>>()
            .join(",");
        let mut out: Vec<(&'static str, String)> = alloc::vec![
            ("lr0", format!("{}", self.lr0)),
            ("lr_min", format!("{}", self.lr_min)),
            ("adam_beta1", format!("{}", self.adam_beta1)),
            ("adam_beta2", format!("{}", self.adam_beta2)),
            ("adam_eps", format!("{}", self.adam_eps)),
            ("iterations", format!("{}", self.iterations)),
            ("batch", format!("{}", self.batch)),
            ("crop", format!("{}", self.crop)),
            ("seed", format!("{}", self.seed)),
            ("lambda_cyc", format!("{}", self.loss.lambda_cyc)),
            ("lambda_dacr", format!("{}", self.loss.lambda_dacr)),
            ("fourier_weight", format!("{}", self.loss.fourier_weight)),
            ("fourier_mode", self.fourier_mode.name().to_string()),
            ("dacr_alpha", format!("{}", self.dacr.alpha)),
            ("dacr_beta", format!("{}", self.dacr.beta)),
            ("dacr_tau", format!("{}", self.dacr.tau)),
            ("dacr_include_positive", format!("{}", self.dacr_include_positive)),
            ("dacr_select", self.dacr_select.name().to_string()),
            ("classifier_input", self.classifier_input.name().to_string()),
            ("prompt_easy", self.prompts[0].clone()),
            ("prompt_hard", self.prompts[1].clone()),
            ("prompt_very_hard", self.prompts[2].clone()),
            ("embedding_backend", self.embedding_backend.clone()),
            ("sigma_chroma", format!("{}", self.sigma_chroma)),
            ("pool_size", format!("{}", self.pool_size)),
            ("pool_patch", format!("{}", self.pool_patch)),
            ("base_width", format!("{}", self.base_width)),
            ("depth", format!("{}", self.depth)),
            ("kernel", format!("{}", self.kernel)),
            ("activation", self.activation.name().to_string()),
            ("cta_channels", format!("{}", self.cta_channels)),
            ("cta_topk", format!("{}", self.cta_topk)),
            ("ldgm_hidden", format!("{}", self.ldgm_hidden)),
            ("grad_clip", format!("{}", self.grad_clip)),
            ("grad_clip_norm", format!("{}", self.grad_clip_norm)),
            ("dtype", self.dtype.name().to_string()),
            ("aug_hflip", format!("{}", self.augment.hflip_prob)),
            ("aug_rot90", rot),
            ("aug_brightness", format!("{}", self.augment.brightness)),
            ("aug_contrast", format!("{}", self.augment.contrast)),
            ("aug_saturation", format!("{}", self.augment.saturation)),
            ("aug_jitter_clean", format!("{}", self.augment.jitter_clean)),
            ("aug_jitter_degraded", format!("{}", self.augment.jitter_degraded)),
        ];
        for flag in Ablation::FLAGS {
            out.push((flag, format!("{}", self.ablation.get(flag).unwrap_or(false))));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Parses `key = value` lines over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_over(Self::default(), text)
    }

    pub fn parse_over(mut cfg: Self, text: &str) -> Result<Self> {
        let mut seen: Vec<String> = Vec::new();
        for ((line, key), value) in parse_lines(text)? {
            if seen.contains(&key) {
                return Err(Error::ConfigParse { line, message: format!("duplicate key `{key}`") });
            }
            cfg.set(&key, &value).map_err(|message| Error::ConfigParse { line, message })?;
            seen.push(key);
        }
        Ok(cfg)
    }
}

/// Splits config text into `((line number, key), value)` pairs.
pub fn parse_lines(text: &str) -> Result<Vec<((usize, String), String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::ConfigParse { line: i + 1, message: format!("expected `key = value`, got `{line}`") })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::ConfigParse { line: i + 1, message: "empty key".into() });
        }
        out.push(((i + 1, k.to_string()), v.trim().to_string()));
    }
    Ok(out)
}
