//! One optimization step over both cycles.
//!
//! For every batch item, on a single tape:
//!
//! ```text
//! D -> restore -> C_d2c -> redegrade -> D_d2c2d     (compared with D)
//! C -> redegrade -> D_c2d -> restore -> C_c2d2c     (compared with C)
//! ```
//!
//! The restored `C_d2c` outputs are the contrastive anchors, the clean crops
//! the positives and every degraded crop of the batch a negative weighted by
//! its difficulty label. Only parameters on the anchor path get gradient
//! from the contrastive term.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::augment::Batch;
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::dacr::{self, classify_difficulty, hard_set, ClassifierInput, DifficultyLabel, DifficultyLevel, EmbeddingBackend};
use crate::generators::{init_model, redegrade_inputs, redegrade_var, restore_var};
use crate::ldgm::DegradationPool;
use crate::losses::cycle_loss_var;
use crate::metrics::psnr_from_mse;
use crate::optim::{adam_step, clip_global_norm, cosine_lr, global_norm, OptimizerState};
use crate::params::ParameterSet;
use crate::rng;
use crate::spectral::image_tensor;
use crate::tape::{Tape, Var};
use crate::{Error, Result, RgbImage};

/// Embedding models used by a step: `features` for the contrastive term
/// (needs a differentiable image path), `classifier` for difficulty labels.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub features: &'a dyn EmbeddingBackend,
    pub classifier: &'a dyn EmbeddingBackend,
}

impl<'a> Backends<'a> {
    pub fn same(b: &'a dyn EmbeddingBackend) -> Self {
        Self { features: b, classifier: b }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub params: ParameterSet,
    pub optimizer: OptimizerState,
    /// Completed steps.
    pub step: u64,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = init_model(&config.model(), config.seed)?.with_dtype(config.dtype);
        let optimizer = OptimizerState::new(&params);
        Ok(Self { config, params, optimizer, step: 0 })
    }

    /// Restores a state, checking the stored parameters against the
    /// architecture its config describes.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        Self::from_checkpoint_with(ck.config.clone(), ck)
    }

    /// Restores a state under `config`, which must describe the same
    /// architecture as the stored parameters.
    pub fn from_checkpoint_with(config: TrainConfig, ck: Checkpoint) -> Result<Self> {
        config.validate()?;
        let expected = init_model(&config.model(), config.seed)?;
        expected.ensure_compatible(&ck.params)?;
        ck.optimizer.ensure_matches(&ck.params)?;
        Ok(Self { config, params: ck.params, optimizer: ck.optimizer, step: ck.step })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            seed: self.config.seed,
            config: self.config.clone(),
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    pub fn lr(&self) -> Result<f64> {
        let total = self.config.iterations;
        cosine_lr(self.step.min(total), total, self.config.lr0, self.config.lr_min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// Index of the step (0-based).
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub cycle: f64,
    pub dacr: f64,
    /// Anchors that entered the contrastive term.
    pub dacr_selected: usize,
    /// Set when no anchor was selected and the term defaulted to zero.
    pub dacr_empty: bool,
    pub labels: Vec<DifficultyLevel>,
    /// Mean PSNR of `D_d2c2d` against `D`.
    pub psnr_degraded_cycle: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Seed of one re-degradation: pass 0 is `C_d2c -> D_d2c2d`, pass 1 `C -> D_c2d`.
pub fn redegrade_seed(seed: u64, step: u64, item: usize, pass: u64) -> u64 {
    rng::derive(seed, &[0x7265_6465, step, item as u64, pass])
}

/// Batch seed of a step.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    rng::derive(seed, &[0x6261_7463, step])
}

/// Pool seed of an epoch.
pub fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    rng::derive(seed, &[0x706f_6f6c, epoch])
}

fn check_finite(tape: &Tape, v: Var, term: &str, index: Option<usize>) -> Result<f64> {
    let x = tape.scalar_value(v);
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFiniteLoss { term: term.to_string(), index })
    }
}

fn image_of(tape: &Tape, v: Var) -> Result<RgbImage> {
    let (_, h, w) = tape.value(v).chw();
    RgbImage::from_planar(h, w, tape.value(v).data.clone())
}

/// Losses and parameter gradients for `batch` without updating anything.
pub fn compute_gradients(
    state: &TrainState,
    batch: &Batch,
    pool: &DegradationPool,
    backends: Backends<'_>,
) -> Result<(LossBreakdown, BTreeMap<String, Vec<f64>>)> {
    let cfg = &state.config;
    let model = cfg.model();
    let n = batch.len();
    if n == 0 || batch.degraded.len() != n {
        return Err(Error::InvalidConfig("batch needs matching, non-empty clean and degraded lists".into()));
    }
    for img in batch.clean.iter().chain(&batch.degraded) {
        if img.dims() != (cfg.crop, cfg.crop) {
            return Err(Error::dims(&[cfg.crop, cfg.crop], &[img.height(), img.width()]));
        }
    }
    let (h, w) = (cfg.crop, cfg.crop);
    let mut tape = Tape::new();
    let mut cycle_terms = Vec::with_capacity(n);
    let mut anchors = Vec::with_capacity(n);
    let mut psnr_sum = 0.0;
    for i in 0..n {
        let d = tape.constant(image_tensor(&batch.degraded[i]));
        let c = tape.constant(image_tensor(&batch.clean[i]));
        let c_d2c = restore_var(&mut tape, &state.params, &model, d)?;
        let (patch, noise) = redegrade_inputs(pool, h, w, cfg.sigma_chroma, redegrade_seed(cfg.seed, state.step, i, 0))?;
        let d_d2c2d = redegrade_var(&mut tape, &state.params, &model, c_d2c, &patch, &noise)?.output;
        let (patch, noise) = redegrade_inputs(pool, h, w, cfg.sigma_chroma, redegrade_seed(cfg.seed, state.step, i, 1))?;
        let d_c2d = redegrade_var(&mut tape, &state.params, &model, c, &patch, &noise)?.output;
        let c_c2d2c = restore_var(&mut tape, &state.params, &model, d_c2d)?;
        let term = cycle_loss_var(&mut tape, d_d2c2d, d, c_c2d2c, c, cfg.loss.fourier_weight, cfg.fourier_mode)?;
        check_finite(&tape, term, "cycle", Some(i))?;
        let mse = {
            let a = &tape.value(d_d2c2d).data;
            let b = &tape.value(d).data;
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
        };
        psnr_sum += psnr_from_mse(mse);
        cycle_terms.push(term);
        anchors.push(c_d2c);
    }
    let stacked = tape.concat(&cycle_terms);
    let cycle = tape.mean(stacked);
    let cycle_value = check_finite(&tape, cycle, "cycle", None)?;

    let mut labels = Vec::new();
    let mut dacr_var = None;
    let mut dacr_selected = 0;
    let mut dacr_empty = false;
    if !cfg.ablation.no_dacr {
        let prompts: Vec<String> = cfg.prompts.to_vec();
        let mut full_labels: Vec<DifficultyLabel> = Vec::with_capacity(n);
        for i in 0..n {
            let img = match cfg.classifier_input {
                ClassifierInput::Proxy => batch.degraded[i].clone(),
                ClassifierInput::Restored => image_of(&tape, anchors[i])?,
            };
            full_labels.push(classify_difficulty(backends.classifier, &img, &prompts)?);
        }
        let f = backends.features;
        let mut z_anchor = Vec::with_capacity(n);
        let mut z_pos = Vec::with_capacity(n);
        let mut z_neg = Vec::with_capacity(n);
        for i in 0..n {
            z_anchor.push(f.embed_image_var(&mut tape, anchors[i])?);
            let c = tape.constant(image_tensor(&batch.clean[i]));
            z_pos.push(f.embed_image_var(&mut tape, c)?);
            let d = tape.constant(image_tensor(&batch.degraded[i]));
            z_neg.push((f.embed_image_var(&mut tape, d)?, dacr::weight_of(&full_labels[i], &cfg.dacr)));
        }
        let selected = hard_set(&full_labels, cfg.dacr_select);
        let out = dacr::dacr_loss_var(&mut tape, &z_anchor, &z_pos, &z_neg, &selected, cfg.dacr.tau, cfg.dacr_include_positive)?;
        for (t, &i) in out.terms.iter().zip(&selected) {
            check_finite(&tape, *t, "dacr", Some(i))?;
        }
        dacr_selected = selected.len();
        dacr_empty = out.loss.is_none();
        dacr_var = out.loss;
        labels = full_labels.into_iter().map(|l| l.level).collect();
    }
    let dacr_value = match dacr_var {
        Some(v) => check_finite(&tape, v, "dacr", None)?,
        None => 0.0,
    };

    let weighted_cycle = tape.scale(cycle, cfg.loss.lambda_cyc);
    let total = match dacr_var {
        Some(v) if cfg.loss.lambda_dacr != 0.0 => {
            let wd = tape.scale(v, cfg.loss.lambda_dacr);
            tape.add(weighted_cycle, wd)
        }
        _ => weighted_cycle,
    };
    let total_value = check_finite(&tape, total, "total", None)?;
    let grads = tape.backward(total).params(&tape);
    if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFiniteLoss { term: alloc::format!("gradient of {name}"), index: None });
    }
    let breakdown = LossBreakdown {
        step: state.step,
        lr: state.lr()?,
        total: total_value,
        cycle: cycle_value,
        dacr: dacr_value,
        dacr_selected,
        dacr_empty,
        labels,
        psnr_degraded_cycle: psnr_sum / n as f64,
        grad_norm: global_norm(&grads),
    };
    Ok((breakdown, grads))
}

/// Computes the losses, applies one Adam update and advances the step.
pub fn train_step(state: &mut TrainState, batch: &Batch, pool: &DegradationPool, backends: Backends<'_>) -> Result<LossBreakdown> {
    let (breakdown, mut grads) = compute_gradients(state, batch, pool, backends)?;
    if state.config.grad_clip {
        clip_global_norm(&mut grads, state.config.grad_clip_norm);
    }
    let adam = state.config.adam();
    adam_step(&mut state.params, &grads, &mut state.optimizer, breakdown.lr, &adam)?;
    state.step += 1;
    Ok(breakdown)
}
