//! Cropping, augmentation and unpaired batch sampling over decoded images.
//!
//! Every item of a batch gets its own seed derived from the step seed, the
//! domain and the item position, so a batch is the same whichever order or
//! thread its items are produced in.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::rng::{self, Rng};
use crate::{Error, Result, RgbImage};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    /// Allowed rotations in quarter turns (0..=3).
    pub rot90_choices: Vec<u8>,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub jitter_clean: bool,
    pub jitter_degraded: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            rot90_choices: alloc::vec![0, 1, 2, 3],
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
            jitter_clean: true,
            jitter_degraded: true,
        }
    }
}

impl AugmentConfig {
    /// No flips, no rotation, no jitter.
    pub fn none() -> Self {
        Self {
            hflip_prob: 0.0,
            rot90_choices: alloc::vec![0],
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            jitter_clean: false,
            jitter_degraded: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::InvalidConfig(format!("aug_hflip must be in [0, 1], got {}", self.hflip_prob)));
        }
        if self.rot90_choices.is_empty() || self.rot90_choices.iter().any(|&q| q > 3) {
            return Err(Error::InvalidConfig("aug_rot90 must list quarter turns among 0, 90, 180, 270".into()));
        }
        for (name, v) in [("aug_brightness", self.brightness), ("aug_contrast", self.contrast), ("aug_saturation", self.saturation)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn crop(img: &RgbImage, y0: usize, x0: usize, h: usize, w: usize) -> RgbImage {
    RgbImage::from_fn(h, w, |y, x| img.pixel(y0 + y, x0 + x))
}

pub fn random_crop(img: &RgbImage, size: usize, r: &mut Rng) -> Result<RgbImage> {
    let (h, w) = img.dims();
    if size > h || size > w {
        return Err(Error::TooSmall { height: h, width: w, min: size });
    }
    let y0 = r.random_range(0..=h - size);
    let x0 = r.random_range(0..=w - size);
    Ok(crop(img, y0, x0, size, size))
}

pub fn hflip(img: &RgbImage) -> RgbImage {
    let w = img.width();
    RgbImage::from_fn(img.height(), w, |y, x| img.pixel(y, w - 1 - x))
}

/// Counter-clockwise rotation by `quarters` quarter turns.
pub fn rot90(img: &RgbImage, quarters: u8) -> RgbImage {
    let (h, w) = img.dims();
    match quarters % 4 {
        0 => img.clone(),
        1 => RgbImage::from_fn(w, h, |y, x| img.pixel(x, w - 1 - y)),
        2 => RgbImage::from_fn(h, w, |y, x| img.pixel(h - 1 - y, w - 1 - x)),
        _ => RgbImage::from_fn(w, h, |y, x| img.pixel(h - 1 - x, y)),
    }
}

/// Brightness offset, contrast scaling about the mean and saturation scaling
/// about the per-pixel gray value, each drawn uniformly within its bound.
pub fn jitter(img: &RgbImage, cfg: &AugmentConfig, r: &mut Rng) -> RgbImage {
    let draw = |r: &mut Rng, bound: f64| if bound > 0.0 { r.random_range(-bound..=bound) } else { 0.0 };
    let db = draw(r, cfg.brightness);
    let dc = draw(r, cfg.contrast);
    let ds = draw(r, cfg.saturation);
    let mean = img.data().iter().sum::<f64>() / img.data().len() as f64;
    let [kr, kg, kb] = crate::colorspace::RGB_TO_YCBCR.matrix[0];
    let (h, w) = img.dims();
    RgbImage::from_fn(h, w, |y, x| {
        let mut p = img.pixel(y, x);
        for v in &mut p {
            *v = (*v + db - mean) * (1.0 + dc) + mean;
        }
        let gray = kr * p[0] + kg * p[1] + kb * p[2];
        p.map(|v| (gray + (v - gray) * (1.0 + ds)).clamp(0.0, 1.0))
    })
}

/// Crop plus augmentations for one item.
pub fn augment_item(img: &RgbImage, size: usize, cfg: &AugmentConfig, with_jitter: bool, seed: u64) -> Result<RgbImage> {
    let mut r = rng::rng(seed);
    let mut out = random_crop(img, size, &mut r)?;
    if cfg.hflip_prob > 0.0 && r.random_bool(cfg.hflip_prob) {
        out = hflip(&out);
    }
    let q = cfg.rot90_choices[r.random_range(0..cfg.rot90_choices.len())];
    out = rot90(&out, q);
    if with_jitter {
        out = jitter(&out, cfg, &mut r);
    }
    Ok(out)
}

/// Independently drawn clean and degraded crops.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub clean: Vec<RgbImage>,
    pub degraded: Vec<RgbImage>,
    pub clean_indices: Vec<usize>,
    pub degraded_indices: Vec<usize>,
    /// Per-item seeds, clean then degraded.
    pub seeds: Vec<u64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }
}

const CLEAN_DOMAIN: u64 = 0;
const DEGRADED_DOMAIN: u64 = 1;

/// Seed of item `i` of a domain (0 clean, 1 degraded) under `step_seed`.
pub fn item_seed(step_seed: u64, domain: u64, i: usize) -> u64 {
    rng::derive(step_seed, &[domain, i as u64])
}

/// Draws `batch` items from each domain with replacement.
pub fn sample_batch(
    clean: &[RgbImage],
    degraded: &[RgbImage],
    size: usize,
    cfg: &AugmentConfig,
    batch: usize,
    step_seed: u64,
) -> Result<Batch> {
    if batch == 0 {
        return Err(Error::InvalidConfig("batch must be >= 1".into()));
    }
    if clean.is_empty() || degraded.is_empty() {
        return Err(Error::InvalidConfig("both domains need at least one image".into()));
    }
    cfg.validate()?;
    let mut out = Batch {
        clean: Vec::with_capacity(batch),
        degraded: Vec::with_capacity(batch),
        clean_indices: Vec::with_capacity(batch),
        degraded_indices: Vec::with_capacity(batch),
        seeds: Vec::with_capacity(2 * batch),
    };
    for (domain, images, jit) in [(CLEAN_DOMAIN, clean, cfg.jitter_clean), (DEGRADED_DOMAIN, degraded, cfg.jitter_degraded)] {
        for i in 0..batch {
            let seed = item_seed(step_seed, domain, i);
            let idx = rng::rng(seed).random_range(0..images.len());
            let item = augment_item(&images[idx], size, cfg, jit, rng::mix64(seed))?;
            out.seeds.push(seed);
            if domain == CLEAN_DOMAIN {
                out.clean.push(item);
                out.clean_indices.push(idx);
            } else {
                out.degraded.push(item);
                out.degraded_indices.push(idx);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> RgbImage {
        RgbImage::from_fn(h, w, |y, x| [(y * w + x) as f64 / (h * w) as f64, 0.5, 1.0 - x as f64 / w as f64])
    }

    #[test]
    fn rotations_compose() {
        let img = ramp(6, 4);
        assert_eq!(rot90(&img, 1).dims(), (4, 6));
        assert_eq!(rot90(&rot90(&img, 1), 3), img);
        assert_eq!(rot90(&rot90(&img, 2), 2), img);
        assert_eq!(rot90(&rot90(&img, 1), 1), rot90(&img, 2));
        assert_eq!(hflip(&hflip(&img)), img);
        // Top-right corner moves to top-left under a counter-clockwise turn.
        assert_eq!(rot90(&img, 1).pixel(0, 0), img.pixel(0, 3));
    }

    #[test]
    fn no_op_pipeline_returns_raw_image() {
        let img = ramp(8, 8);
        let b = sample_batch(core::slice::from_ref(&img), core::slice::from_ref(&img), 8, &AugmentConfig::none(), 1, 3).unwrap();
        assert_eq!(b.clean[0], img);
        assert_eq!(b.degraded[0], img);
    }

    #[test]
    fn batches_are_deterministic_and_in_range() {
        let imgs: Vec<RgbImage> = (0..3).map(|i| ramp(12 + i, 10)).collect();
        let cfg = AugmentConfig { brightness: 0.5, contrast: 0.5, saturation: 0.5, ..AugmentConfig::default() };
        let a = sample_batch(&imgs, &imgs, 8, &cfg, 4, 11).unwrap();
        assert_eq!(a, sample_batch(&imgs, &imgs, 8, &cfg, 4, 11).unwrap());
        assert_ne!(a, sample_batch(&imgs, &imgs, 8, &cfg, 4, 12).unwrap());
        for img in a.clean.iter().chain(&a.degraded) {
            assert_eq!(img.dims(), (8, 8));
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(sample_batch(&imgs, &imgs, 20, &cfg, 1, 0).is_err());
        assert!(sample_batch(&imgs, &imgs, 8, &cfg, 0, 0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = AugmentConfig::default();
        c.hflip_prob = 1.5;
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::default();
        c.rot90_choices = alloc::vec![4];
        assert!(c.validate().is_err());
        let mut c = AugmentConfig::default();
        c.contrast = -0.1;
        assert!(c.validate().is_err());
    }
}
