//! Unpaired image folders.
//!
//! ```text
//! <root>/clean/*.{png,jpg}
//! <root>/degraded/*.{png,jpg}
//! <root>/manifest.txt      optional
//! ```
//!
//! A manifest lists one image path per line, relative to the root, with `#`
//! comments. When present it replaces directory scanning; each path is
//! assigned to a domain by its first component (`clean/` or `degraded/`).

use std::fs;
use std::path::{Path, PathBuf};

use weathercycle_core::augment::{self, AugmentConfig, Batch};
use weathercycle_core::colorspace::rgb_to_ycbcr;
use weathercycle_core::ldgm::DegradationPool;
use weathercycle_core::rng;
use weathercycle_core::{LumaPlane, RgbImage};

use crate::error::{CliError, CliResult};
use crate::io::{is_image_path, read_image};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Clean,
    Degraded,
}

impl Domain {
    pub fn dir_name(self) -> &'static str {
        match self {
            Domain::Clean => "clean",
            Domain::Degraded => "degraded",
        }
    }
}

/// Sorted image files directly inside `dir`.
pub fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    out.sort();
    Ok(out)
}

/// Paths listed in a manifest, resolved against `root`, split by domain.
pub fn read_manifest(root: &Path, text: &str) -> CliResult<(Vec<PathBuf>, Vec<PathBuf>)> {
    let mut clean = Vec::new();
    let mut degraded = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let rel = Path::new(line);
        match rel.components().next().and_then(|c| c.as_os_str().to_str()) {
            Some("clean") => clean.push(root.join(rel)),
            Some("degraded") => degraded.push(root.join(rel)),
            _ => {
                return Err(CliError::data(format!(
                    "{MANIFEST} line {}: `{line}` is not under clean/ or degraded/",
                    i + 1
                )))
            }
        }
    }
    Ok((clean, degraded))
}

/// Decodes every path, skipping unreadable files with a warning.
pub fn load_images(paths: &[PathBuf]) -> (Vec<PathBuf>, Vec<RgbImage>) {
    let mut kept = Vec::with_capacity(paths.len());
    let mut images = Vec::with_capacity(paths.len());
    for p in paths {
        match read_image(p) {
            Ok(img) => {
                kept.push(p.clone());
                images.push(img);
            }
            Err(e) => log::warn!("skipping {e}"),
        }
    }
    (kept, images)
}

#[derive(Debug, Clone)]
pub struct UnpairedDataset {
    pub clean_paths: Vec<PathBuf>,
    pub degraded_paths: Vec<PathBuf>,
    pub clean: Vec<RgbImage>,
    pub degraded: Vec<RgbImage>,
    pub crop: usize,
}

impl UnpairedDataset {
    pub fn from_images(
        clean_paths: Vec<PathBuf>,
        clean: Vec<RgbImage>,
        degraded_paths: Vec<PathBuf>,
        degraded: Vec<RgbImage>,
        crop: usize,
    ) -> CliResult<Self> {
        for (domain, imgs) in [(Domain::Clean, &clean), (Domain::Degraded, &degraded)] {
            if imgs.is_empty() {
                return Err(CliError::data(format!("{} domain has no decodable images", domain.dir_name())));
            }
        }
        if let Some(p) = clean_paths.iter().find(|p| degraded_paths.contains(p)) {
            return Err(CliError::data(format!("{} appears in both domains", p.display())));
        }
        let paths = clean_paths.iter().chain(&degraded_paths);
        for (img, p) in clean.iter().chain(&degraded).zip(paths) {
            let (h, w) = img.dims();
            if h < crop || w < crop {
                return Err(CliError::data(format!("{} is {h}x{w}, smaller than the {crop}px crop", p.display())));
            }
        }
        Ok(Self { clean_paths, degraded_paths, clean, degraded, crop })
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.clean.len(), self.degraded.len())
    }

    pub fn sample_batch(&self, aug: &AugmentConfig, batch: usize, step_seed: u64) -> CliResult<Batch> {
        Ok(augment::sample_batch(&self.clean, &self.degraded, self.crop, aug, batch, step_seed)?)
    }
}

pub fn load_dirs(clean_dir: &Path, degraded_dir: &Path, crop: usize) -> CliResult<UnpairedDataset> {
    let (cp, ci) = load_images(&list_images(clean_dir)?);
    let (dp, di) = load_images(&list_images(degraded_dir)?);
    UnpairedDataset::from_images(cp, ci, dp, di, crop)
}

/// Loads `<root>/clean` and `<root>/degraded`, or the files named by
/// `<root>/manifest.txt` when it exists.
pub fn load_unpaired(root: &Path, crop: usize) -> CliResult<UnpairedDataset> {
    let manifest = root.join(MANIFEST);
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| CliError::io(&manifest, e))?;
        let (clean, degraded) = read_manifest(root, &text)?;
        let (cp, ci) = load_images(&clean);
        let (dp, di) = load_images(&degraded);
        return UnpairedDataset::from_images(cp, ci, dp, di, crop);
    }
    load_dirs(&root.join(Domain::Clean.dir_name()), &root.join(Domain::Degraded.dir_name()), crop)
}

/// A degradation pool with the source image index of every patch.
#[derive(Debug, Clone)]
pub struct BuiltPool {
    pub pool: DegradationPool,
    pub sources: Vec<usize>,
}

/// `n` random `patch x patch` luminance crops from the degraded domain.
pub fn build_pool(ds: &UnpairedDataset, n: usize, patch: usize, seed: u64) -> CliResult<BuiltPool> {
    if n == 0 {
        return Err(CliError::usage("pool size must be >= 1"));
    }
    let mut patches: Vec<LumaPlane> = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    for k in 0..n {
        let s = rng::derive(seed, &[k as u64]);
        let idx = (rng::mix64(s) % ds.degraded.len() as u64) as usize;
        let mut r = rng::rng(s);
        let crop = augment::random_crop(&ds.degraded[idx], patch, &mut r)
            .map_err(|e| CliError::data(format!("{}: {e}", ds.degraded_paths[idx].display())))?;
        patches.push(rgb_to_ycbcr(&crop)?.0);
        sources.push(idx);
    }
    Ok(BuiltPool { pool: DegradationPool::new(patches)?, sources })
}
