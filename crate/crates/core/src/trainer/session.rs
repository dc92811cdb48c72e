use std::path::Path;

use indexmap::IndexMap;

use super::adam::{lr_at_epoch, AdamState};
use super::checkpoint::{
    Checkpoint, EpochRecord, Manifest, TensorEntry, CHECKPOINT_FORMAT, CHECKPOINT_VERSION,
};
use crate::config::RunConfig;
use crate::error::{KgeError, Result};
use crate::eval::{evaluate, EvalOptions, MetricsReport};
use crate::isd::{
    beta_at_epoch, distill_loss_on_tape, total_loss_on_tape, DistillConfig, SemanticBlock,
    TeacherCache,
};
use crate::kgdata::{label_smooth, FilterIndex, QueryIndex, Split, TripleStore};
use crate::models::{KgeModel, ModelConfig, Registry};
use crate::numkernel::tape::apply_pending;
use crate::numkernel::{ParamStore, RngState, Tape, Tensor};

use super::TrainConfig;

/// Rng streams derived from the run seed.
pub const STREAM_MODEL_INIT: u64 = 0;
pub const STREAM_TRAINING: u64 = 1;
pub const STREAM_BLOCK_INIT: u64 = 2;

/// Loss values of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub bce: f64,
    /// 0 when the distillation term was skipped.
    pub kl: f64,
    pub total: f64,
    pub kl_applied: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub beta: f64,
    pub lr: f64,
    pub mean_bce: f64,
    pub mean_kl: f64,
    pub mean_total: f64,
    pub iterations: Vec<IterationRecord>,
}

impl EpochReport {
    pub fn record(&self) -> EpochRecord {
        EpochRecord {
            epoch: self.epoch,
            loss_bce: self.mean_bce,
            loss_kl: self.mean_kl,
            beta: self.beta,
            lr: self.lr,
            valid_mrr: None,
            valid_h1: None,
            valid_h3: None,
            valid_h10: None,
        }
    }
}

/// Model, optional distillation block, optimizer and teacher cache for one
/// training run over a reciprocal-augmented dataset.
pub struct Trainer {
    model: KgeModel,
    block: Option<SemanticBlock>,
    store: ParamStore,
    adam: AdamState,
    rng: RngState,
    teacher: TeacherCache,
    queries: QueryIndex,
    train: TrainConfig,
    distill: DistillConfig,
    epoch: usize,
}

impl Trainer {
    /// `data` must already carry reciprocal relations.
    pub fn new(
        registry: &Registry,
        model: &ModelConfig,
        train: &TrainConfig,
        distill: &DistillConfig,
        data: &TripleStore,
    ) -> Result<Self> {
        train.validate()?;
        distill.validate()?;
        let mut model_cfg = model.clone();
        model_cfg.resolve(registry)?;
        let root = RngState::new(train.seed);
        let mut store = ParamStore::new();
        let (n_e, n_r) = (data.num_entities(), data.num_relations());
        let model = KgeModel::new(
            registry,
            &model_cfg,
            n_e,
            n_r,
            &mut store,
            &mut root.fork(STREAM_MODEL_INIT),
        )?;
        let block = if distill.enabled {
            let k_b = distill.k_b.unwrap_or(model_cfg.d_e);
            Some(SemanticBlock::new(
                &mut store,
                model_cfg.d_e,
                k_b,
                train.batch_size,
                n_e,
                &mut root.fork(STREAM_BLOCK_INIT),
            )?)
        } else {
            None
        };
        let queries = QueryIndex::build(data.split(Split::Train), n_e);
        if queries.len() < train.batch_size {
            return Err(KgeError::Config(format!(
                "batch size {} exceeds the {} distinct training queries",
                train.batch_size,
                queries.len()
            )));
        }
        Ok(Self {
            adam: AdamState::new(&store),
            model,
            block,
            store,
            rng: root.fork(STREAM_TRAINING),
            teacher: TeacherCache::empty(),
            queries,
            train: train.clone(),
            distill: distill.clone(),
            epoch: 0,
        })
    }

    pub fn from_run_config(
        registry: &Registry,
        cfg: &RunConfig,
        data: &TripleStore,
    ) -> Result<Self> {
        Self::new(registry, &cfg.model, &cfg.train, &cfg.isd, data)
    }

    pub fn model(&self) -> &KgeModel {
        &self.model
    }

    pub fn block(&self) -> Option<&SemanticBlock> {
        self.block.as_ref()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn teacher(&self) -> &TeacherCache {
        &self.teacher
    }

    /// Drops the cached teacher; the next step runs without distillation.
    pub fn clear_teacher(&mut self) {
        self.teacher.clear();
    }

    /// Number of completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train
    }

    /// β for the upcoming epoch; always 0 without a block.
    fn beta(&self, epoch: usize) -> Result<f64> {
        if self.block.is_none() {
            return Ok(0.0);
        }
        beta_at_epoch(epoch, self.train.epochs, self.distill.beta_init)
    }

    /// Runs one pass over the shuffled training queries.
    pub fn train_epoch(&mut self) -> Result<EpochReport> {
        let ep = self.epoch;
        if ep >= self.train.epochs {
            return Err(KgeError::Usage(format!(
                "the epoch budget of {} is used up",
                self.train.epochs
            )));
        }
        let beta = self.beta(ep)?;
        let lr = lr_at_epoch(ep, self.train.lr, self.train.lr_decay);
        let temperature = self.distill.temperature();
        let entity = self.model.entity_param();

        let schedule = self
            .queries
            .schedule(self.train.batch_size, &mut self.rng)?;
        let mut iterations = Vec::with_capacity(schedule.num_batches());
        let mut first_heads: Option<Vec<usize>> = None;
        for (index, batch) in schedule.iter().enumerate() {
            let targets = label_smooth(&batch.targets, self.train.label_smoothing)?;
            self.store.zero_grad();
            let (record, grads, pending) = {
                let mut tape = Tape::new(&self.store);
                let logits = self.model.forward(
                    &mut tape,
                    &batch.heads,
                    &batch.relations,
                    true,
                    &mut self.rng,
                )?;
                let bce = tape.bce_logits(logits, targets)?;
                // β = 0 leaves the distillation term out entirely
                let kl = match (&self.block, self.teacher.get()) {
                    (Some(block), Some(teacher)) if beta > 0.0 => {
                        let e = tape.param(entity);
                        let student = block.extract(&mut tape, e, &batch.heads)?;
                        let t = tape.constant(teacher.clone().reshape(&[1, teacher.len()])?);
                        Some(distill_loss_on_tape(&mut tape, student, t, temperature)?)
                    }
                    _ => None,
                };
                let total = total_loss_on_tape(&mut tape, bce, kl, beta)?;
                let bce_value = tape.value(bce).item();
                let kl_value = kl.map_or(0.0, |k| tape.value(k).item());
                if !bce_value.is_finite() || !kl_value.is_finite() {
                    return Err(KgeError::NumericAbort {
                        epoch: ep,
                        batch: index,
                        bce: bce_value,
                        kl: kl_value,
                    });
                }
                let record = IterationRecord {
                    bce: bce_value,
                    kl: kl_value,
                    total: tape.value(total).item(),
                    kl_applied: kl.is_some(),
                };
                let grads = tape.backward(total)?;
                (record, grads, tape.take_pending())
            };
            grads.accumulate_into(&mut self.store)?;
            apply_pending(&mut self.store, pending);
            self.adam.step(&mut self.store, lr);
            iterations.push(record);

            if let Some(block) = &self.block {
                let heads = if self.distill.static_input {
                    first_heads.get_or_insert_with(|| batch.heads.clone())
                } else {
                    &batch.heads
                };
                self.teacher
                    .store(block.extract_detached(&self.store, entity, heads)?);
            }
        }
        self.epoch += 1;

        let n = iterations.len().max(1) as f64;
        let mean = |f: fn(&IterationRecord) -> f64| iterations.iter().map(f).sum::<f64>() / n;
        Ok(EpochReport {
            epoch: ep,
            beta,
            lr,
            mean_bce: mean(|r| r.bce),
            mean_kl: mean(|r| r.kl),
            mean_total: mean(|r| r.total),
            iterations,
        })
    }

    /// Filtered metrics on the original triples of `split`.
    pub fn evaluate(
        &self,
        data: &TripleStore,
        filter: &FilterIndex,
        split: Split,
        options: EvalOptions,
    ) -> Result<MetricsReport> {
        evaluate(
            &self.model,
            &self.store,
            data.original(split),
            filter,
            data.base_relations(),
            options,
        )
    }

    /// Snapshot of the full training state.
    pub fn checkpoint(
        &self,
        config: &RunConfig,
        data: &TripleStore,
        history: &[EpochRecord],
    ) -> Checkpoint {
        let mut params = IndexMap::new();
        let mut moments = IndexMap::new();
        let mut entries = Vec::new();
        for (id, name, p) in self.store.iter() {
            params.insert(name.to_string(), p.value.clone());
            if let Some((m, v)) = self.adam.moments(id.index()) {
                moments.insert(name.to_string(), (m.clone(), v.clone()));
            }
            entries.push(TensorEntry {
                name: name.to_string(),
                trainable: p.trainable,
            });
        }
        let vocab = &data.vocab;
        Checkpoint {
            manifest: Manifest {
                format: CHECKPOINT_FORMAT.to_string(),
                version: CHECKPOINT_VERSION,
                config: config.clone(),
                epoch: self.epoch,
                seed: self.train.seed,
                rng: self.rng.snapshot(),
                adam_step: self.adam.step_count(),
                num_entities: self.model.num_entities(),
                num_relations: self.model.num_relations(),
                params: entries,
                teacher: self.teacher.is_present(),
                history: history.to_vec(),
            },
            params,
            moments,
            teacher: self.teacher.get().cloned(),
            entities: vocab.entities().map(str::to_string).collect(),
            relations: vocab.relations().map(str::to_string).collect(),
        }
    }

    pub fn save(
        &self,
        dir: &Path,
        config: &RunConfig,
        data: &TripleStore,
        history: &[EpochRecord],
    ) -> Result<()> {
        self.checkpoint(config, data, history).save(dir)
    }

    /// Rebuilds the trainer from `ckpt`. `config` must be resolved and agree
    /// with the checkpoint on everything that shapes parameters.
    pub fn restore(
        registry: &Registry,
        config: &RunConfig,
        data: &TripleStore,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        check_compatible(config, data, ckpt)?;
        let mut trainer = Self::from_run_config(registry, config, data)?;
        ckpt.fill_store(&mut trainer.store)?;
        let mut slots = Vec::with_capacity(trainer.store.len());
        for (_, name, p) in trainer.store.iter() {
            if p.trainable {
                let (m, v) = ckpt.moments.get(name).ok_or_else(|| {
                    KgeError::Checkpoint(format!("missing optimizer moments for {name:?}"))
                })?;
                slots.push(Some((m.clone(), v.clone())));
            } else {
                slots.push(None);
            }
        }
        trainer.adam = AdamState::from_parts(&trainer.store, ckpt.manifest.adam_step, slots)?;
        trainer.rng = RngState::restore(&ckpt.manifest.rng)
            .map_err(|e| KgeError::Checkpoint(format!("bad rng position: {e}")))?;
        trainer.teacher = TeacherCache::empty();
        if let Some(t) = &ckpt.teacher {
            trainer.teacher.store(t.clone());
        }
        trainer.epoch = ckpt.manifest.epoch;
        Ok(trainer)
    }
}

/// Confirms that a checkpoint can serve `config` on `data`.
pub fn check_compatible(config: &RunConfig, data: &TripleStore, ckpt: &Checkpoint) -> Result<()> {
    let saved = &ckpt.manifest.config;
    let mismatch = |what: &str| {
        Err(KgeError::CheckpointMismatch(format!(
            "{what} differs between the checkpoint and the configuration"
        )))
    };
    if saved.model != config.model {
        return Err(KgeError::CheckpointMismatch(format!(
            "model {} (d_e={}) in the checkpoint, {} (d_e={}) in the configuration",
            saved.model.kind, saved.model.d_e, config.model.kind, config.model.d_e
        )));
    }
    if saved.isd.enabled != config.isd.enabled || saved.isd.k_b != config.isd.k_b {
        return mismatch("the distillation block");
    }
    if saved.train.batch_size != config.train.batch_size || saved.train.seed != config.train.seed {
        return mismatch("batch size or seed");
    }
    check_vocabulary(data, ckpt)
}

/// The dataset's vocabulary must be the one the checkpoint was trained on.
pub fn check_vocabulary(data: &TripleStore, ckpt: &Checkpoint) -> Result<()> {
    let vocab = &data.vocab;
    let same_entities = vocab.num_entities() == ckpt.entities.len()
        && vocab.entities().zip(&ckpt.entities).all(|(a, b)| a == b);
    let same_relations = vocab.num_relations() == ckpt.relations.len()
        && vocab.relations().zip(&ckpt.relations).all(|(a, b)| a == b);
    if !same_entities || !same_relations {
        return Err(KgeError::CheckpointMismatch(format!(
            "dataset has {} entities / {} relations, checkpoint has {} / {}",
            vocab.num_entities(),
            vocab.num_relations(),
            ckpt.entities.len(),
            ckpt.relations.len()
        )));
    }
    Ok(())
}

/// Model and parameters from a checkpoint, for inference only.
pub fn restore_model(registry: &Registry, ckpt: &Checkpoint) -> Result<(KgeModel, ParamStore)> {
    let m = &ckpt.manifest;
    let mut store = ParamStore::new();
    let model = KgeModel::new(
        registry,
        &m.config.model,
        m.num_entities,
        m.num_relations,
        &mut store,
        &mut RngState::new(m.seed),
    )?;
    ckpt.fill_store(&mut store)?;
    Ok((model, store))
}

/// Entity embedding table of a checkpoint.
pub fn entity_embeddings(ckpt: &Checkpoint) -> Result<&Tensor> {
    ckpt.params
        .get(crate::models::ENTITY_PARAM)
        .ok_or_else(|| KgeError::Checkpoint("checkpoint has no entity table".into()))
}
