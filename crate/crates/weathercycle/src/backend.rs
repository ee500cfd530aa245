//! Embedding backends selected by the `embedding_backend` key.
//!
//! `stub` is the built-in handcrafted embedding. `external:<path>` runs an
//! executable once per query:
//!
//! ```text
//! <path> image <png file>    prints the image embedding
//! <path> text <prompt>       prints the text embedding
//! ```
//!
//! Embeddings are whitespace-separated decimal numbers on stdout. External
//! backends give no gradient, so training still uses the stub for contrastive
//! features and the external model only for difficulty classification.

use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use weathercycle_core::dacr::{EmbeddingBackend, StubBackend};
use weathercycle_core::{Error as CoreError, Result as CoreResult, RgbImage};

use crate::error::{CliError, CliResult};
use crate::io::write_image;

#[derive(Debug, Clone)]
pub struct ExternalBackend {
    pub program: PathBuf,
    name: String,
    dim: usize,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ExternalBackend {
    /// Probes the program with an empty prompt to learn its dimension.
    pub fn new(program: impl Into<PathBuf>) -> CliResult<Self> {
        let program = program.into();
        let mut b = Self { name: format!("external:{}", program.display()), program, dim: 0 };
        let probe = b.run(&["text", ""]).map_err(CliError::from)?;
        if probe.is_empty() {
            return Err(CliError::data(format!("{} returned an empty embedding", b.name)));
        }
        b.dim = probe.len();
        Ok(b)
    }

    fn fail(&self, message: String) -> CoreError {
        CoreError::Backend { backend: self.name.clone(), message }
    }

    fn run(&self, args: &[&str]) -> CoreResult<Vec<f64>> {
        let out = Command::new(&self.program).args(args).output().map_err(|e| self.fail(e.to_string()))?;
        if !out.status.success() {
            let stderr = String::from_utf8_lossy(&out.stderr);
            return Err(self.fail(format!("exited with {}: {}", out.status, stderr.trim())));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let v = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| self.fail(format!("non-numeric output `{t}`"))))
            .collect::<CoreResult<Vec<f64>>>()?;
        if self.dim != 0 && v.len() != self.dim {
            return Err(self.fail(format!("expected {} values, got {}", self.dim, v.len())));
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(CoreError::NonFinite { index: i });
        }
        Ok(v)
    }
}

impl EmbeddingBackend for ExternalBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, img: &RgbImage) -> CoreResult<Vec<f64>> {
        let n = TEMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = std::env::temp_dir().join(format!("weathercycle-embed-{}-{n}.png", std::process::id()));
        write_image(&path, img).map_err(|e| self.fail(e.message))?;
        let out = self.run(&["image", &path.to_string_lossy()]);
        let _ = std::fs::remove_file(&path);
        out
    }

    fn embed_text(&self, text: &str) -> CoreResult<Vec<f64>> {
        self.run(&["text", text])
    }
}

/// Parses `stub` or `external:<path>`.
pub fn make_backend(spec: &str) -> CliResult<Box<dyn EmbeddingBackend>> {
    match spec.split_once(':') {
        None if spec == "stub" => Ok(Box::new(StubBackend)),
        Some(("external", path)) if !path.is_empty() => Ok(Box::new(ExternalBackend::new(path)?)),
        _ => Err(CliError::usage(format!("unknown embedding backend `{spec}`; use `stub` or `external:<path>`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_specs() {
        assert_eq!(make_backend("stub").unwrap().name(), "stub");
        assert_eq!(make_backend("bogus").err().unwrap().exit_code(), 1);
        assert_eq!(make_backend("external:").err().unwrap().exit_code(), 1);
        assert_eq!(make_backend("external:/nonexistent/model").err().unwrap().exit_code(), 2);
    }

    #[cfg(unix)]
    #[test]
    fn external_script_round_trip() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("embed.sh");
        std::fs::write(
            &script,
            "#!/bin/sh\nif [ \"$1\" = image ]; then test -s \"$2\" && echo 1 0 0; \
             elif [ \"$2\" = \"a clean sharp photo\" ]; then echo 1 0 0; else echo 0 1 0; fi\n",
        )
        .unwrap();
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
        let b = make_backend(&format!("external:{}", script.display())).unwrap();
        assert_eq!(b.dim(), 3);
        let img = RgbImage::filled(8, 8, [0.2, 0.4, 0.6]);
        assert_eq!(b.embed_image(&img).unwrap(), vec![1.0, 0.0, 0.0]);
        let prompts = weathercycle_core::dacr::default_prompts();
        let label = weathercycle_core::dacr::classify_difficulty(b.as_ref(), &img, &prompts).unwrap();
        assert_eq!(label.level, weathercycle_core::dacr::DifficultyLevel::EasyNeg);
    }
}
