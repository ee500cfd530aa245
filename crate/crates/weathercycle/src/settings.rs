//! Run configuration: every training key plus where data and outputs live.
//!
//! ```text
//! # weathercycle.conf
//! data_root = data/toy
//! out_dir = runs/toy
//! crop = 64
//! batch = 4
//! iterations = 200
//! ```
//!
//! Relative paths are resolved against the config file's directory.
//! `WEATHERCYCLE_SEED` replaces `seed` when set.

use std::fs;
use std::path::{Path, PathBuf};

use weathercycle_core::checkpoint;
use weathercycle_core::config::{parse_lines, TrainConfig};
use weathercycle_core::Error as CoreError;

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "WEATHERCYCLE_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data_root: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub log_every: u64,
    /// 0 saves only at the end.
    pub save_every: u64,
    pub resume: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data_root: None,
            out_dir: PathBuf::from("runs"),
            log_every: 100,
            save_every: 5000,
            resume: None,
        }
    }
}

pub const RUN_KEYS: [&str; 5] = ["data_root", "out_dir", "log_every", "save_every", "resume"];

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for ((line, key), value) in parse_lines(text)? {
            let err = |message: String| CliError::from(CoreError::ConfigParse { line, message });
            if seen.contains(&key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            let path = || {
                let p = PathBuf::from(&value);
                if p.is_absolute() { p } else { base.join(p) }
            };
            let int = |v: &str| v.parse::<u64>().map_err(|_| err(format!("`{key}` expects a non-negative integer, got `{v}`")));
            match key.as_str() {
                "data_root" => cfg.data_root = Some(path()),
                "out_dir" => cfg.out_dir = path(),
                "log_every" => cfg.log_every = int(&value)?.max(1),
                "save_every" => cfg.save_every = int(&value)?,
                "resume" => cfg.resume = Some(path()),
                _ => cfg.train.set(&key, &value).map_err(err)?,
            }
            seen.push(key);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e).context("reading config"))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::parse(&text, base).map_err(|e| e.context(path.display()))?;
        cfg.apply_seed_env(std::env::var(SEED_ENV).ok().as_deref())?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn apply_seed_env(&mut self, value: Option<&str>) -> CliResult<()> {
        if let Some(v) = value {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("{SEED_ENV} must be an unsigned integer, got `{v}`")))?;
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, ck: &checkpoint::Checkpoint) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, checkpoint::encode(ck)).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> CliResult<checkpoint::Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    checkpoint::decode(&bytes).map_err(|e| CliError::from(e).context(path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_and_train_keys_mix() {
        let text = "data_root = d\nout_dir = /abs/out\nsave_every = 0\nbatch = 2\n# note\nno_ldgm = true\n";
        let c = RunConfig::parse(text, Path::new("/cfg")).unwrap();
        assert_eq!(c.data_root.as_deref(), Some(Path::new("/cfg/d")));
        assert_eq!(c.out_dir, PathBuf::from("/abs/out"));
        assert_eq!(c.save_every, 0);
        assert_eq!(c.train.batch, 2);
        assert!(c.train.ablation.no_ldgm);
    }

    #[test]
    fn bad_lines_name_the_line() {
        let e = RunConfig::parse("batch = 2\nbogus = 1\n", Path::new(".")).unwrap_err();
        assert!(e.message.contains("line 2"), "{}", e.message);
        let e = RunConfig::parse("out_dir = a\nout_dir = b\n", Path::new(".")).unwrap_err();
        assert!(e.message.contains("duplicate"));
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn seed_override() {
        let mut c = RunConfig::default();
        c.apply_seed_env(Some(" 99 ")).unwrap();
        assert_eq!(c.train.seed, 99);
        c.apply_seed_env(None).unwrap();
        assert_eq!(c.train.seed, 99);
        assert!(c.apply_seed_env(Some("x")).is_err());
    }
}
