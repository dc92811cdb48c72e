//! End-to-end training runs driven by a [`RunConfig`]: load, augment, train,
//! validate, checkpoint, resume.
//!
//! An output directory holds `config.json` (the resolved config),
//! `metrics.jsonl` (one line per epoch), `checkpoint/` (the latest
//! checkpoint) and, after the final epoch, `test_metrics.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{KgeError, Result};
use crate::eval::{EvalOptions, MetricsReport};
use crate::kgdata::{FilterIndex, Split, TripleStore};
use crate::models::{count_parameters, BlockSize, Registry};
use crate::trainer::{Checkpoint, EpochRecord, Trainer};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TEST_METRICS_FILE: &str = "test_metrics.json";

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Continue from `<output_dir>/checkpoint` instead of starting fresh.
    pub resume: bool,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Stop once this many epochs are complete (the β schedule still uses
    /// the configured budget).
    pub stop_after: Option<usize>,
    /// Evaluate the test split after the final epoch.
    pub final_test: bool,
    /// Print one progress line per epoch to stderr.
    pub verbose: bool,
    pub eval: EvalOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            resume: false,
            checkpoint_every: 1,
            stop_after: None,
            final_test: true,
            verbose: false,
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub epochs_completed: usize,
    pub history: Vec<EpochRecord>,
    pub test: Option<MetricsReport>,
}

/// Loads a dataset directory and adds reciprocal relations.
pub fn load_dataset(dir: &Path) -> Result<TripleStore> {
    Ok(TripleStore::load(dir)?.augment_reciprocal())
}

/// Parameter count for a resolved config, read off the dataset's sizes.
pub fn count_config_parameters(registry: &Registry, cfg: &RunConfig) -> Result<usize> {
    let data = TripleStore::load(&cfg.dataset_dir)?;
    let n_e = data.num_entities();
    let n_r = 2 * data.num_relations();
    let block = cfg.isd.enabled.then(|| BlockSize {
        k_b: cfg.isd.k_b.unwrap_or(cfg.model.d_e),
        batch_size: cfg.train.batch_size,
    });
    count_parameters(registry, &cfg.model, n_e, n_r, block)
}

fn write_metrics(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| KgeError::io(path, e))
}

fn append_metrics(path: &Path, record: &EpochRecord) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| KgeError::io(path, e))?;
    let line = serde_json::to_string(record).expect("record serializes");
    writeln!(f, "{line}").map_err(|e| KgeError::io(path, e))
}

/// Writes the checkpoint next to the live one and swaps it in.
fn save_checkpoint(
    trainer: &Trainer,
    out: &Path,
    cfg: &RunConfig,
    data: &TripleStore,
    history: &[EpochRecord],
) -> Result<()> {
    let live = out.join(CHECKPOINT_DIR);
    let staging = out.join(format!("{CHECKPOINT_DIR}.tmp"));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| KgeError::io(&staging, e))?;
    }
    trainer.save(&staging, cfg, data, history)?;
    if live.exists() {
        fs::remove_dir_all(&live).map_err(|e| KgeError::io(&live, e))?;
    }
    fs::rename(&staging, &live).map_err(|e| KgeError::io(&live, e))
}

/// Trains according to `cfg`, writing every artifact under `cfg.output_dir`.
pub fn run(registry: &Registry, cfg: &RunConfig, options: &RunOptions) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    cfg.resolve(registry)?;
    let data = load_dataset(&cfg.dataset_dir)?;
    let filter = FilterIndex::build(&data);
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| KgeError::io(&out, e))?;
    let metrics_path = out.join(METRICS_FILE);

    let (mut trainer, mut history) = if options.resume {
        let ckpt = Checkpoint::load(&out.join(CHECKPOINT_DIR))?;
        let trainer = Trainer::restore(registry, &cfg, &data, &ckpt)?;
        let history = ckpt.manifest.history.clone();
        // drop lines written after the checkpoint
        write_metrics(&metrics_path, &history)?;
        (trainer, history)
    } else {
        let trainer = Trainer::from_run_config(registry, &cfg, &data)?;
        write_metrics(&metrics_path, &[])?;
        (trainer, Vec::new())
    };
    let config_path = out.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_json()).map_err(|e| KgeError::io(&config_path, e))?;

    let budget = cfg.train.epochs;
    let stop = options.stop_after.map_or(budget, |s| s.min(budget));
    let has_valid = !data.original(Split::Valid).is_empty();
    while trainer.epoch() < stop {
        let report = trainer.train_epoch()?;
        let mut record = report.record();
        let done = trainer.epoch();
        if cfg.train.eval_every > 0 && done % cfg.train.eval_every == 0 && has_valid {
            let m = trainer.evaluate(&data, &filter, Split::Valid, options.eval)?;
            record.valid_mrr = Some(m.mrr);
            record.valid_h1 = Some(m.h1);
            record.valid_h3 = Some(m.h3);
            record.valid_h10 = Some(m.h10);
        }
        append_metrics(&metrics_path, &record)?;
        if options.verbose {
            let valid = record
                .valid_mrr
                .map(|m| format!(" valid_mrr={m:.4}"))
                .unwrap_or_default();
            eprintln!(
                "epoch {:>4}  bce={:.6} kl={:.6} beta={:.4} lr={:.3e}{valid}",
                record.epoch, record.loss_bce, record.loss_kl, record.beta, record.lr
            );
        }
        history.push(record);
        let periodic = options.checkpoint_every > 0 && done % options.checkpoint_every == 0;
        if periodic || done == stop {
            save_checkpoint(&trainer, &out, &cfg, &data, &history)?;
        }
    }

    let mut test = None;
    if options.final_test && trainer.epoch() == budget && !data.original(Split::Test).is_empty() {
        let report = trainer.evaluate(&data, &filter, Split::Test, options.eval)?;
        let path = out.join(TEST_METRICS_FILE);
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&path, text).map_err(|e| KgeError::io(&path, e))?;
        test = Some(report);
    }
    Ok(RunSummary {
        output_dir: out,
        epochs_completed: trainer.epoch(),
        history,
        test,
    })
}
