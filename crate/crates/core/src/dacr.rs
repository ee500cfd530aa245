//! Difficulty-aware contrastive regularization.
//!
//! A prompt-similarity classifier labels each degraded image as an easy,
//! hard or very hard negative. The contrastive term for anchor `a` with
//! positive `p` and negatives `n_j` weighted by `w_j` is
//!
//! ```text
//! term = -s(a, p) / tau + ln( sum_j w_j exp(s(a, n_j) / tau) )
//! ```
//!
//! with `s` the dot product of unit embeddings. Optionally the positive also
//! appears in the denominator with weight one.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::colorspace::RGB_TO_YCBCR;
use crate::math;
use crate::rng;
use crate::spectral::image_tensor;
use crate::tape::{Tape, Tensor, Var};
use crate::{Error, Result, RgbImage};

/// Image and text encoder producing unit-norm vectors of a fixed size.
pub trait EmbeddingBackend: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed_image(&self, img: &RgbImage) -> Result<Vec<f64>>;

    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;

    /// Embedding of `img: [3, H, W]` on the tape. The default evaluates
    /// [`Self::embed_image`] and records a constant, so no gradient reaches
    /// the image.
    fn embed_image_var(&self, tape: &mut Tape, img: Var) -> Result<Var> {
        let (_, h, w) = tape.value(img).chw();
        let image = RgbImage::from_planar(h, w, tape.value(img).data.clone())?;
        let z = self.embed_image(&image)?;
        Ok(tape.constant(Tensor::new(vec![z.len()], z)))
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn embed_image(&self, img: &RgbImage) -> Result<Vec<f64>> {
        (**self).embed_image(img)
    }
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        (**self).embed_text(text)
    }
    fn embed_image_var(&self, tape: &mut Tape, img: Var) -> Result<Var> {
        (**self).embed_image_var(tape, img)
    }
}

pub const DEFAULT_PROMPTS: [&str; 3] = ["a clean sharp photo", "a mildly degraded photo", "a severely degraded photo"];

const GRID: usize = 8;
const EPS: f64 = 1e-12;

/// Handcrafted deterministic features: an 8x8 average-pooled luminance grid,
/// twice the luminance standard deviation and the mean Cb and Cr, all
/// centered on mid-gray and L2-normalized (67 values).
///
/// The three default prompts map to orthogonal directions: high contrast
/// (clean), uniformly raised luminance (a veil) and a color cast. Other
/// prompts map to pseudo-random unit vectors derived from their text.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubBackend;

impl StubBackend {
    pub const DIM: usize = GRID * GRID + 3;
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = math::sqrt(v.iter().map(|x| x * x).sum::<f64>() + EPS);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

impl EmbeddingBackend for StubBackend {
    fn name(&self) -> &str {
        "stub"
    }

    fn dim(&self) -> usize {
        Self::DIM
    }

    fn embed_image(&self, img: &RgbImage) -> Result<Vec<f64>> {
        img.validate()?;
        let mut tape = Tape::new();
        let x = tape.constant(image_tensor(img));
        let z = self.embed_image_var(&mut tape, x)?;
        Ok(tape.value(z).data.clone())
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let d = Self::DIM;
        let mut v = vec![0.0; d];
        match DEFAULT_PROMPTS.iter().position(|p| *p == text) {
            Some(0) => v[GRID * GRID] = 1.0,
            Some(1) => v[..GRID * GRID].fill(1.0 / GRID as f64),
            Some(_) => {
                v[d - 2] = core::f64::consts::FRAC_1_SQRT_2;
                v[d - 1] = core::f64::consts::FRAC_1_SQRT_2;
            }
            None => {
                let mut r = rng::rng(rng::hash_str(text));
                v.iter_mut().for_each(|x| *x = r.random_range(-1.0..1.0));
                v = normalize(v);
            }
        }
        Ok(v)
    }

    fn embed_image_var(&self, tape: &mut Tape, img: Var) -> Result<Var> {
        let (c, h, w) = tape.value(img).chw();
        if c != 3 {
            return Err(Error::dims(&[3], &[c]));
        }
        if h < GRID || w < GRID {
            return Err(Error::TooSmall { height: h, width: w, min: GRID });
        }
        let ycc = tape.channel_mix(img, &RGB_TO_YCBCR.matrix_flat(), &RGB_TO_YCBCR.offset);
        let y = tape.slice(ycc, 0, 1);
        let grid = tape.adaptive_avg_pool(y, GRID, GRID);
        let grid = tape.reshape(grid, vec![GRID * GRID]);
        let grid = tape.offset(grid, -0.5);

        let mean_y = tape.mean(y);
        let neg_mean = tape.scale(mean_y, -1.0);
        let centered = tape.add_scalar(y, neg_mean);
        let sq = tape.square(centered);
        let var = tape.mean(sq);
        let var = tape.offset(var, EPS);
        let contrast = tape.sqrt(var);
        let contrast = tape.scale(contrast, 2.0);
        let contrast = tape.reshape(contrast, vec![1]);

        let mut chroma = Vec::with_capacity(2);
        for ch in 1..3 {
            let plane = tape.slice(ycc, ch, 1);
            let m = tape.mean(plane);
            let m = tape.offset(m, -0.5);
            chroma.push(tape.reshape(m, vec![1]));
        }
        let f = tape.concat(&[grid, contrast, chroma[0], chroma[1]]);
        let sq = tape.square(f);
        let ss = tape.sum(sq);
        let ss = tape.offset(ss, EPS);
        let norm = tape.sqrt(ss);
        let one = tape.constant(Tensor::scalar(1.0));
        let inv = tape.div(one, norm);
        Ok(tape.mul_scalar(f, inv))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DifficultyLevel {
    EasyNeg,
    HardNeg,
    VeryHard,
}

impl DifficultyLevel {
    pub const ALL: [DifficultyLevel; 3] = [DifficultyLevel::EasyNeg, DifficultyLevel::HardNeg, DifficultyLevel::VeryHard];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            DifficultyLevel::EasyNeg => "easy-neg",
            DifficultyLevel::HardNeg => "hard-neg",
            DifficultyLevel::VeryHard => "very-hard",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyLabel {
    pub level: DifficultyLevel,
    /// Cosine similarity to each prompt, easy to very hard.
    pub scores: Vec<f64>,
}

impl DifficultyLabel {
    pub fn fixed(level: DifficultyLevel) -> Self {
        Self { level, scores: Vec::new() }
    }

    /// Argmax of `scores`; ties go to the harder level.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.len() != 3 {
            return Err(Error::InvalidConfig(format!("need 3 prompt scores, got {}", scores.len())));
        }
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if *s >= scores[best] {
                best = i;
            }
        }
        Ok(Self { level: DifficultyLevel::ALL[best], scores })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DacrWeights {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl Default for DacrWeights {
    fn default() -> Self {
        Self { alpha: 3.0, beta: 5.0, tau: 0.1 }
    }
}

impl DacrWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.beta > self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "need beta > alpha > 1, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

pub fn weight_of(label: &DifficultyLabel, w: &DacrWeights) -> f64 {
    level_weight(label.level, w)
}

pub fn level_weight(level: DifficultyLevel, w: &DacrWeights) -> f64 {
    match level {
        DifficultyLevel::EasyNeg => 1.0,
        DifficultyLevel::HardNeg => w.alpha,
        DifficultyLevel::VeryHard => w.beta,
    }
}

fn backend_err(backend: &dyn EmbeddingBackend, e: Error) -> Error {
    match e {
        Error::Backend { .. } => e,
        other => Error::Backend { backend: backend.name().to_string(), message: other.to_string() },
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    dot / math::sqrt(na * nb).max(EPS)
}

/// Scores `image` against three prompts ordered easy to very hard.
pub fn classify_difficulty(backend: &dyn EmbeddingBackend, image: &RgbImage, prompts: &[String]) -> Result<DifficultyLabel> {
    if prompts.len() != 3 {
        return Err(Error::InvalidConfig(format!("need exactly 3 prompts, got {}", prompts.len())));
    }
    let z = backend.embed_image(image).map_err(|e| backend_err(backend, e))?;
    let mut scores = Vec::with_capacity(3);
    for p in prompts {
        let t = backend.embed_text(p).map_err(|e| backend_err(backend, e))?;
        if t.len() != z.len() {
            return Err(Error::Backend {
                backend: backend.name().to_string(),
                message: format!("text embedding has {} values, image embedding {}", t.len(), z.len()),
            });
        }
        scores.push(cosine(&z, &t));
    }
    DifficultyLabel::from_scores(scores)
}

pub fn default_prompts() -> Vec<String> {
    DEFAULT_PROMPTS.iter().map(|s| s.to_string()).collect()
}

/// Which anchors contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DacrSelect {
    /// Anchors whose own degraded input is not an easy negative.
    #[default]
    Hard,
    All,
}

impl DacrSelect {
    pub fn name(self) -> &'static str {
        match self {
            DacrSelect::Hard => "hard",
            DacrSelect::All => "all",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hard" => Some(DacrSelect::Hard),
            "all" => Some(DacrSelect::All),
            _ => None,
        }
    }
}

/// Image the classifier sees for each degraded input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassifierInput {
    /// Output of the proxy restorer, which is the identity here.
    #[default]
    Proxy,
    /// Current restoration output.
    Restored,
}

impl ClassifierInput {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierInput::Proxy => "proxy",
            ClassifierInput::Restored => "restored",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "proxy" => Some(ClassifierInput::Proxy),
            "restored" => Some(ClassifierInput::Restored),
            _ => None,
        }
    }
}

pub fn hard_set(labels: &[DifficultyLabel], select: DacrSelect) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, l)| select == DacrSelect::All || l.level != DifficultyLevel::EasyNeg)
        .map(|(i, _)| i)
        .collect()
}

/// Loss value plus bookkeeping.
#[derive(Debug, Clone)]
pub struct DacrVar {
    /// `None` when no anchor was selected.
    pub loss: Option<Var>,
    /// One `[1]` term per selected anchor, in hard-set order.
    pub terms: Vec<Var>,
}

fn dot(tape: &mut Tape, a: Var, b: Var) -> Var {
    let m = tape.mul(a, b);
    tape.sum(m)
}

fn unit(tape: &mut Tape, v: Var) -> Var {
    let ss = dot(tape, v, v);
    let ss = tape.offset(ss, EPS);
    let n = tape.sqrt(ss);
    let one = tape.constant(Tensor::scalar(1.0));
    let inv = tape.div(one, n);
    tape.mul_scalar(v, inv)
}

/// Contrastive loss over embeddings already on the tape, with cosine
/// similarity. Anchor `i` pairs with positive `i`; every anchor sees all
/// negatives.
pub fn dacr_loss_var(
    tape: &mut Tape,
    anchors: &[Var],
    positives: &[Var],
    negatives: &[(Var, f64)],
    hard_set: &[usize],
    tau: f64,
    include_positive: bool,
) -> Result<DacrVar> {
    if negatives.is_empty() {
        return Err(Error::NoNegatives);
    }
    if positives.len() != anchors.len() {
        return Err(Error::dims(&[anchors.len()], &[positives.len()]));
    }
    if let Some(&i) = hard_set.iter().find(|&&i| i >= anchors.len()) {
        return Err(Error::InvalidConfig(format!("hard set index {i} out of range for {} anchors", anchors.len())));
    }
    if hard_set.is_empty() {
        return Ok(DacrVar { loss: None, terms: Vec::new() });
    }
    let inv_tau = 1.0 / tau;
    let mut weights: Vec<f64> = negatives.iter().map(|(_, w)| *w).collect();
    if include_positive {
        weights.push(1.0);
    }
    let negatives: Vec<(Var, f64)> = negatives.iter().map(|&(n, w)| (unit(tape, n), w)).collect();
    let mut terms = Vec::with_capacity(hard_set.len());
    for &i in hard_set {
        let a = unit(tape, anchors[i]);
        let p = unit(tape, positives[i]);
        let pos = dot(tape, a, p);
        let pos = tape.scale(pos, inv_tau);
        let mut logits = Vec::with_capacity(weights.len());
        for (n, _) in &negatives {
            let s = dot(tape, a, *n);
            let s = tape.scale(s, inv_tau);
            logits.push(tape.reshape(s, vec![1]));
        }
        if include_positive {
            logits.push(tape.reshape(pos, vec![1]));
        }
        let logits = tape.concat(&logits);
        let lse = tape.weighted_logsumexp(logits, &weights);
        let term = tape.sub(lse, pos);
        terms.push(tape.reshape(term, vec![1]));
    }
    let stacked = tape.concat(&terms);
    Ok(DacrVar { loss: Some(tape.mean(stacked)), terms })
}

/// Loss value for plain images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DacrValue {
    pub loss: f64,
    /// Set when the hard set was empty and the loss defaulted to zero.
    pub empty: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn dacr_loss(
    backend: &dyn EmbeddingBackend,
    anchors: &[RgbImage],
    positives: &[RgbImage],
    negatives: &[(RgbImage, DifficultyLabel)],
    w: &DacrWeights,
    hard_set: &[usize],
    include_positive: bool,
) -> Result<DacrValue> {
    w.validate()?;
    let mut tape = Tape::new();
    let embed = |tape: &mut Tape, img: &RgbImage| -> Result<Var> {
        let x = tape.constant(image_tensor(img));
        backend.embed_image_var(tape, x).map_err(|e| backend_err(backend, e))
    };
    let a: Vec<Var> = anchors.iter().map(|i| embed(&mut tape, i)).collect::<Result<_>>()?;
    let p: Vec<Var> = positives.iter().map(|i| embed(&mut tape, i)).collect::<Result<_>>()?;
    let n: Vec<(Var, f64)> = negatives
        .iter()
        .map(|(i, l)| Ok((embed(&mut tape, i)?, weight_of(l, w))))
        .collect::<Result<_>>()?;
    let out = dacr_loss_var(&mut tape, &a, &p, &n, hard_set, w.tau, include_positive)?;
    Ok(match out.loss {
        Some(v) => DacrValue { loss: tape.scalar_value(v), empty: false },
        None => DacrValue { loss: 0.0, empty: true },
    })
}
