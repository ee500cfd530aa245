//! Training loop over an unpaired dataset.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use weathercycle_core::dacr::{EmbeddingBackend, StubBackend};
use weathercycle_core::trainer::{self, Backends, LossBreakdown, TrainState};

use crate::backend::make_backend;
use crate::dataset::{build_pool, load_unpaired, BuiltPool, UnpairedDataset};
use crate::error::{CliError, CliResult};
use crate::settings::{load_checkpoint, save_checkpoint, RunConfig};

pub const LOSS_LOG: &str = "losses.csv";
pub const LAST_CHECKPOINT: &str = "last.wcc";

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint-{step:08}.wcc")
}

pub struct Trainer {
    pub state: TrainState,
    pub dataset: UnpairedDataset,
    pub pool: BuiltPool,
    pool_epoch: u64,
    classifier: Box<dyn EmbeddingBackend>,
}

impl Trainer {
    pub fn new(state: TrainState, dataset: UnpairedDataset, classifier: Box<dyn EmbeddingBackend>) -> CliResult<Self> {
        if dataset.crop != state.config.crop {
            return Err(CliError::usage(format!("dataset crop {} differs from config crop {}", dataset.crop, state.config.crop)));
        }
        let epoch = Self::epoch_of(&state, &dataset);
        let pool = Self::pool_for(&state, &dataset, epoch)?;
        Ok(Self { state, dataset, pool, pool_epoch: epoch, classifier })
    }

    /// Steps per epoch: enough batches to visit the larger domain once.
    pub fn steps_per_epoch(&self) -> u64 {
        steps_per_epoch(&self.dataset, self.state.config.batch)
    }

    fn epoch_of(state: &TrainState, ds: &UnpairedDataset) -> u64 {
        state.step / steps_per_epoch(ds, state.config.batch)
    }

    fn pool_for(state: &TrainState, ds: &UnpairedDataset, epoch: u64) -> CliResult<BuiltPool> {
        let c = &state.config;
        build_pool(ds, c.pool_size, c.pool_patch_size(), trainer::epoch_seed(c.seed, epoch))
    }

    pub fn step(&mut self) -> CliResult<LossBreakdown> {
        let epoch = Self::epoch_of(&self.state, &self.dataset);
        if epoch != self.pool_epoch {
            self.pool = Self::pool_for(&self.state, &self.dataset, epoch)?;
            self.pool_epoch = epoch;
        }
        let c = &self.state.config;
        let batch = self.dataset.sample_batch(&c.augment, c.batch, trainer::step_seed(c.seed, self.state.step))?;
        let backends = Backends { features: &StubBackend, classifier: self.classifier.as_ref() };
        let step = self.state.step;
        trainer::train_step(&mut self.state, &batch, &self.pool.pool, backends).map_err(|e| CliError::from(e).context(format!("step {step}")))
    }
}

pub fn steps_per_epoch(ds: &UnpairedDataset, batch: usize) -> u64 {
    let (c, d) = ds.sizes();
    (c.max(d).div_ceil(batch.max(1)) as u64).max(1)
}

pub fn csv_header() -> &'static str {
    "step,lr,total,cycle,dacr,dacr_selected,psnr_degraded_cycle,grad_norm"
}

pub fn csv_row(l: &LossBreakdown) -> String {
    format!(
        "{},{:e},{:.9},{:.9},{:.9},{},{:.4},{:.6}",
        l.step, l.lr, l.total, l.cycle, l.dacr, l.dacr_selected, l.psnr_degraded_cycle, l.grad_norm
    )
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps_run: u64,
    pub final_step: u64,
    pub last: Option<LossBreakdown>,
    pub checkpoint: PathBuf,
}

/// Builds the state (fresh or resumed) and the trainer for `cfg`.
pub fn prepare(cfg: &RunConfig) -> CliResult<Trainer> {
    let root = cfg.data_root.as_deref().ok_or_else(|| CliError::usage("config needs `data_root`"))?;
    let state = match &cfg.resume {
        Some(p) => TrainState::from_checkpoint_with(cfg.train.clone(), load_checkpoint(p)?)?,
        None => TrainState::new(cfg.train.clone())?,
    };
    let ds = load_unpaired(root, cfg.train.crop)?;
    log::info!("dataset {}: {} clean, {} degraded", root.display(), ds.clean.len(), ds.degraded.len());
    Trainer::new(state, ds, make_backend(&cfg.train.embedding_backend)?)
}

pub fn run_training(cfg: &RunConfig) -> CliResult<TrainSummary> {
    let mut t = prepare(cfg)?;
    run_loop(&mut t, cfg)
}

pub fn run_loop(t: &mut Trainer, cfg: &RunConfig) -> CliResult<TrainSummary> {
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let log_path = out.join(LOSS_LOG);
    let append = t.state.step > 0 && log_path.exists();
    let file = File::options()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&log_path)
        .map_err(|e| CliError::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let io_err = |e: std::io::Error| CliError::io(&log_path, e);
    if !append {
        writeln!(log, "{}", csv_header()).map_err(io_err)?;
    }
    let start = t.state.step;
    let mut last = None;
    while t.state.step < t.state.config.iterations {
        let l = t.step()?;
        writeln!(log, "{}", csv_row(&l)).map_err(io_err)?;
        if l.step % cfg.log_every == 0 {
            log::info!("step {} lr {:.3e} total {:.5} cycle {:.5} dacr {:.5}", l.step, l.lr, l.total, l.cycle, l.dacr);
        }
        if l.dacr_empty {
            log::debug!("step {}: no hard anchors, contrastive term skipped", l.step);
        }
        last = Some(l);
        if cfg.save_every > 0 && t.state.step % cfg.save_every == 0 {
            save(t, out, true)?;
        }
    }
    log.flush().map_err(io_err)?;
    let checkpoint = save(t, out, false)?;
    Ok(TrainSummary { steps_run: t.state.step - start, final_step: t.state.step, last, checkpoint })
}

fn save(t: &Trainer, out: &Path, numbered: bool) -> CliResult<PathBuf> {
    let ck = t.state.checkpoint();
    if numbered {
        save_checkpoint(&out.join(checkpoint_name(t.state.step)), &ck)?;
    }
    let last = out.join(LAST_CHECKPOINT);
    save_checkpoint(&last, &ck)?;
    Ok(last)
}
