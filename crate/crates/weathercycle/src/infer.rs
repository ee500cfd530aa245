//! Batch restoration with optional reference metrics.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use weathercycle_core::generators::{restore, ModelConfig};
use weathercycle_core::metrics::{psnr_in, ssim, PsnrSpace};
use weathercycle_core::params::ParameterSet;
use weathercycle_core::rng::hash_str;
use weathercycle_core::trainer::TrainState;
use weathercycle_core::RgbImage;

use crate::dataset::list_images;
use crate::error::{CliError, CliResult};
use crate::io::{is_image_path, read_image, write_image};
use crate::settings::load_checkpoint;

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub path: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub count: usize,
    pub failed: usize,
    pub restored: usize,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub psnr_space: String,
    pub config_fingerprint: String,
    pub images: Vec<ImageMetrics>,
}

impl MetricReport {
    pub fn new(images: Vec<ImageMetrics>, restored: usize, failed: usize, space: PsnrSpace, fingerprint: String) -> Self {
        let n = images.len();
        let mean = |f: fn(&ImageMetrics) -> f64| (n > 0).then(|| images.iter().map(f).sum::<f64>() / n as f64);
        Self {
            count: n,
            failed,
            restored,
            mean_psnr: mean(|m| m.psnr),
            mean_ssim: mean(|m| m.ssim),
            psnr_space: space.name().to_string(),
            config_fingerprint: fingerprint,
            images,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,psnr,ssim\n");
        for m in &self.images {
            s.push_str(&format!("{},{:.6},{:.6}\n", m.path, m.psnr, m.ssim));
        }
        s
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let csv = dir.join(REPORT_CSV);
        fs::write(&csv, self.to_csv()).map_err(|e| CliError::io(&csv, e))?;
        let json = dir.join(REPORT_JSON);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::data(e.to_string()))?;
        fs::write(&json, text + "\n").map_err(|e| CliError::io(&json, e))
    }
}

/// Parses `path,psnr,ssim` lines back into metrics.
pub fn parse_csv(text: &str) -> CliResult<Vec<ImageMetrics>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.rsplitn(3, ',');
            let (s, p, path) = (it.next(), it.next(), it.next());
            match (path, p.and_then(|p| p.parse().ok()), s.and_then(|s| s.parse().ok())) {
                (Some(path), Some(psnr), Some(ssim)) => Ok(ImageMetrics { path: path.to_string(), psnr, ssim }),
                _ => Err(CliError::data(format!("bad report line `{l}`"))),
            }
        })
        .collect()
}

/// Edge-replicates `img` up to the next multiple of `m` on both axes.
pub fn pad_to_multiple(img: &RgbImage, m: usize) -> RgbImage {
    let (h, w) = img.dims();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return img.clone();
    }
    RgbImage::from_fn(ph, pw, |y, x| img.pixel(y.min(h - 1), x.min(w - 1)))
}

pub fn crop_to(img: &RgbImage, h: usize, w: usize) -> RgbImage {
    RgbImage::from_fn(h, w, |y, x| img.pixel(y, x))
}

/// Restoration of an image of any size.
pub fn restore_any(params: &ParameterSet, cfg: &ModelConfig, img: &RgbImage) -> CliResult<RgbImage> {
    let (h, w) = img.dims();
    let padded = pad_to_multiple(img, cfg.size_multiple());
    Ok(crop_to(&restore(params, cfg, &padded)?, h, w))
}

fn find_reference(dir: &Path, input: &Path) -> Option<PathBuf> {
    let name = input.file_name()?;
    let direct = dir.join(name);
    if direct.is_file() {
        return Some(direct);
    }
    let stem = input.file_stem()?;
    fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image_path(p) && p.file_stem() == Some(stem))
        .min()
}

#[derive(Debug, Clone)]
pub struct InferOptions {
    pub psnr_space: PsnrSpace,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self { psnr_space: PsnrSpace::Rgb }
    }
}

pub fn run_inference(ckpt: &Path, input: &Path, output: &Path, reference: Option<&Path>, opts: &InferOptions) -> CliResult<MetricReport> {
    let state = TrainState::from_checkpoint(load_checkpoint(ckpt)?)?;
    let model = state.config.model();
    let fingerprint = format!("{:016x}", hash_str(&state.config.to_text()));
    let files = list_images(input)?;
    fs::create_dir_all(output).map_err(|e| CliError::io(output, e))?;
    if files.is_empty() {
        log::warn!("no images found in {}", input.display());
    }
    let mut metrics = Vec::new();
    let mut failed = 0;
    let mut restored_count = 0;
    for path in &files {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let result = (|| -> CliResult<Option<ImageMetrics>> {
            let img = read_image(path)?;
            let restored = restore_any(&state.params, &model, &img)?;
            let out = output.join(Path::new(&name).with_extension("png"));
            write_image(&out, &restored)?;
            let Some(ref_dir) = reference else { return Ok(None) };
            let ref_path = find_reference(ref_dir, path)
                .ok_or_else(|| CliError::data(format!("no reference for {name} in {}", ref_dir.display())))?;
            let clean = read_image(&ref_path)?;
            Ok(Some(ImageMetrics {
                path: name.clone(),
                psnr: psnr_in(&restored, &clean, opts.psnr_space)?,
                ssim: ssim(&restored, &clean)?,
            }))
        })();
        match result {
            Ok(m) => {
                restored_count += 1;
                metrics.extend(m);
            }
            Err(e) => {
                failed += 1;
                log::warn!("{}: {e}", path.display());
            }
        }
    }
    let report = MetricReport::new(metrics, restored_count, failed, opts.psnr_space, fingerprint);
    if reference.is_some() {
        report.write(output)?;
    }
    Ok(report)
}
