//! `analyze-swap` and `classify`.

use std::fs;
use std::path::Path;

use serde::Serialize;
use weathercycle_core::dacr::{classify_difficulty, EmbeddingBackend};
use weathercycle_core::motivation::motivation_experiment;

use crate::dataset::list_images;
use crate::error::{CliError, CliResult};
use crate::io::{read_image, write_image};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwapSummary {
    pub psnr_raw: f64,
    pub psnr_swap_luma: f64,
    pub psnr_swap_amplitude: f64,
}

/// Writes `swap_luma.png`, `swap_amplitude.png` and `swap.json` into `out`.
pub fn analyze_swap(degraded: &Path, clean: &Path, out: &Path) -> CliResult<SwapSummary> {
    let d = read_image(degraded)?;
    let c = read_image(clean)?;
    let r = motivation_experiment(&d, &c)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_image(&out.join("swap_luma.png"), &r.swap_luma)?;
    write_image(&out.join("swap_amplitude.png"), &r.swap_amplitude)?;
    let s = SwapSummary { psnr_raw: r.psnr_raw, psnr_swap_luma: r.psnr_swap_luma, psnr_swap_amplitude: r.psnr_swap_amplitude };
    let json = out.join("swap.json");
    let text = serde_json::to_string_pretty(&s).map_err(|e| CliError::data(e.to_string()))?;
    fs::write(&json, text + "\n").map_err(|e| CliError::io(&json, e))?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classified {
    pub path: String,
    pub level: String,
    pub scores: Vec<f64>,
}

/// Difficulty level of every image in `dir`; unreadable files are skipped
/// with a warning.
pub fn classify_dir(dir: &Path, backend: &dyn EmbeddingBackend, prompts: &[String]) -> CliResult<Vec<Classified>> {
    let mut out = Vec::new();
    for path in list_images(dir)? {
        let img = match read_image(&path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {e}");
                continue;
            }
        };
        let label = classify_difficulty(backend, &img, prompts)?;
        out.push(Classified {
            path: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            level: label.level.name().to_string(),
            scores: label.scores.clone(),
        });
    }
    Ok(out)
}
