use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use smae_tensor::Tensor;

use super::data::{batches_per_epoch, BatchPipeline, PreparedBatch, SampleRecipe};
use super::{adamw_step, grad_norm, AdamHyper, AdamState, LrSchedule, TrainConfig, TrainLogRecord, TrainMode};
use crate::error::{Error, Result};
use crate::hog::HogConfig;
use crate::keyed;
use crate::model::checkpoint::{ArrayData, Checkpoint};
use crate::model::{forward_sample, ModelConfig, ModelParams, SampleOutput};
use crate::selection::{baseline_plan, plan_epoch_selection, SelectionConfig};

use super::data::Dataset;

const SALT_SELECT: u64 = 0x7365_6c65;
const SALT_INIT: u64 = 0x696e_6974;

/// Seed of the parameter initialization for run seed `seed`.
pub fn init_seed(seed: u64) -> u64 {
    keyed::derive(seed, &[SALT_INIT])
}

/// Key of the random draws in one sample's selection plan.
pub fn selection_key(seed: u64, epoch: usize, index: usize) -> u64 {
    keyed::derive(seed, &[SALT_SELECT, epoch as u64, index as u64])
}

/// Hooks into the training loop.
pub trait TrainObserver {
    fn on_record(&mut self, _record: &TrainLogRecord) -> Result<()> {
        Ok(())
    }

    /// Called with the batch-averaged gradients before any check or update.
    fn adjust_gradients(&mut self, _epoch: usize, _step: u64, _grads: &mut [Vec<f32>]) {}
}

impl TrainObserver for () {}

/// Collects every record.
impl TrainObserver for Vec<TrainLogRecord> {
    fn on_record(&mut self, record: &TrainLogRecord) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Parameters, optimizer state and counters of one run.
pub struct Trainer {
    train: TrainConfig,
    sel: SelectionConfig,
    model: ModelConfig,
    hog: HogConfig,
    params: ModelParams<f32>,
    opt: AdamState<f32>,
    decay: Vec<bool>,
    step: u64,
    epochs_done: usize,
    explosions: usize,
    schedule: LrSchedule,
    pool: rayon::ThreadPool,
    timing: bool,
}

impl Trainer {
    /// Fresh run over a dataset of `dataset_len` images.
    pub fn new(
        train: &TrainConfig,
        sel: &SelectionConfig,
        model: &ModelConfig,
        dataset_len: usize,
    ) -> Result<Self> {
        let params = ModelParams::init(model, init_seed(train.seed))?;
        Self::with_params(train, sel, model, dataset_len, params)
    }

    fn with_params(
        train: &TrainConfig,
        sel: &SelectionConfig,
        model: &ModelConfig,
        dataset_len: usize,
        params: ModelParams<f32>,
    ) -> Result<Self> {
        let mut sel = sel.clone();
        sel.total_epochs = train.epochs;
        sel.validate()?;
        train.validate(&sel)?;
        model.validate()?;
        if dataset_len == 0 {
            return Err(Error::Capability("dataset is empty".into()));
        }
        let n = model.num_patches();
        match train.mode {
            TrainMode::Selective => {
                // Surface cardinality problems before any work starts.
                let encoded = sel.encode_count(n);
                if encoded == 0 {
                    return Err(Error::Config(format!("m={} leaves no visible token at N={n}", sel.mask_ratio)));
                }
                if sel.recon_count(n) == 0 {
                    return Err(Error::Config(format!(
                        "reconstruction ratio r={} selects no token at N={n}",
                        sel.recon_ratio
                    )));
                }
                if sel.recon_count(n) > n - encoded {
                    return Err(Error::Config(format!(
                        "reconstruction of ⌊rN⌋={} tokens exceeds the {} masked tokens (m={}, r={}, N={n})",
                        sel.recon_count(n),
                        n - encoded,
                        sel.mask_ratio,
                        sel.recon_ratio
                    )));
                }
            }
            TrainMode::MaeBaseline => {
                baseline_plan(n, train.baseline_mask_ratio, 1, 1, 0)?;
            }
        }
        let peak = train.peak_lr(&sel);
        if train.mode == TrainMode::Selective && train.lr_scale_mode == super::LrScaleMode::MaskOverRecon {
            log::info!("lr scaled by m/r = {}", sel.mask_ratio / sel.recon_ratio);
        }
        let steps = batches_per_epoch(dataset_len, train.batch_size);
        let schedule = LrSchedule::new(peak, train.warmup_epochs, train.epochs, steps);
        // Weight decay on projection matrices only.
        let decay = params.tensors().iter().map(|t| t.ndim() == 2 && t.shape()[0] > 1).collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(train.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", train.workers)))?;
        Ok(Self {
            train: train.clone(),
            sel,
            model: model.clone(),
            hog: HogConfig::default(),
            opt: AdamState::zeros_like(params.tensors()),
            params,
            decay,
            step: 0,
            epochs_done: 0,
            explosions: 0,
            schedule,
            pool,
            timing: true,
        })
    }

    /// Restores parameters, optimizer moments and counters.
    pub fn from_checkpoint(
        ck: &Checkpoint,
        train: &TrainConfig,
        sel: &SelectionConfig,
        model: &ModelConfig,
        dataset_len: usize,
    ) -> Result<Self> {
        let tensors = model
            .layout()
            .iter()
            .map(|spec| Ok(ck.require(&spec.name)?.to_tensor::<f32>()))
            .collect::<Result<Vec<_>>>()?;
        let params = ModelParams::from_tensors(model, tensors)?;
        let mut t = Self::with_params(train, sel, model, dataset_len, params)?;
        let names = t.params.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            let m = ck.require(&format!("optim.m.{name}"))?.to_tensor::<f32>();
            let v = ck.require(&format!("optim.v.{name}"))?.to_tensor::<f32>();
            if m.numel() != t.opt.m[i].len() || v.numel() != t.opt.v[i].len() {
                return Err(Error::Contract(format!("optimizer state for {name} has the wrong size")));
            }
            t.opt.m[i] = m.into_data();
            t.opt.v[i] = v.into_data();
        }
        let scalar = |name: &str| -> Result<u64> {
            Ok(ck.require(name)?.to_tensor::<f64>().item()? as u64)
        };
        t.opt.t = scalar("optim.t")?;
        t.step = scalar("train.step")?;
        t.epochs_done = scalar("train.epoch")? as usize;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            ck.push(name.clone(), t.clone());
        }
        for (i, (name, t)) in self.params.names().iter().zip(self.params.tensors()).enumerate() {
            let shape = t.shape().to_vec();
            ck.push(format!("optim.m.{name}"), Tensor::new(shape.clone(), self.opt.m[i].clone()).expect("shape"));
            ck.push(format!("optim.v.{name}"), Tensor::new(shape, self.opt.v[i].clone()).expect("shape"));
        }
        let scalar = |v: u64| ArrayData::F64(Tensor::scalar(v as f64));
        ck.push("optim.t", scalar(self.opt.t));
        ck.push("train.step", scalar(self.step));
        ck.push("train.epoch", scalar(self.epochs_done as u64));
        ck
    }

    /// Emit wall-clock throughput in records (on by default).
    pub fn set_timing(&mut self, on: bool) {
        self.timing = on;
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn selection(&self) -> &SelectionConfig {
        &self.sel
    }

    pub fn schedule(&self) -> &LrSchedule {
        &self.schedule
    }

    pub fn recipe(&self) -> SampleRecipe {
        SampleRecipe {
            image_size: self.model.image_size,
            patch: self.model.patch,
            channels: self.model.channels,
            hog: (self.train.mode == TrainMode::Selective).then_some(self.hog),
            seed: self.train.seed,
        }
    }

    fn forward_batch(&self, batch: &PreparedBatch, want_grads: bool) -> Result<Vec<SampleOutput<f32>>> {
        let n = self.model.num_patches();
        let epoch = batch.epoch;
        let stage = self.sel.stage(epoch);
        let (train, sel, params) = (&self.train, &self.sel, &self.params);
        self.pool.install(|| {
            batch
                .samples
                .par_iter()
                .map(|s| {
                    let key = selection_key(train.seed, epoch, s.index);
                    forward_sample(
                        params,
                        &s.grid,
                        |emb, d| match train.mode {
                            TrainMode::Selective => {
                                let scores = s.scores.as_ref().ok_or_else(|| {
                                    Error::Contract("selective mode needs HOG scores".into())
                                })?;
                                plan_epoch_selection(emb, d, scores, sel, epoch, key)
                            }
                            TrainMode::MaeBaseline => {
                                baseline_plan(n, train.baseline_mask_ratio, epoch, stage, key)
                            }
                        },
                        want_grads,
                    )
                })
                .collect()
        })
    }

    /// Mean loss of a batch at the current parameters, without updating.
    pub fn batch_loss(&self, batch: &PreparedBatch) -> Result<f64> {
        let outs = self.forward_batch(batch, false)?;
        Ok(outs.iter().map(|o| o.loss as f64).sum::<f64>() / outs.len() as f64)
    }

    /// Forward, backward and one optimizer update on `batch`.
    pub fn step_batch(
        &mut self,
        batch: &PreparedBatch,
        observer: &mut dyn TrainObserver,
    ) -> Result<TrainLogRecord> {
        let start = Instant::now();
        let epoch = batch.epoch;
        if batch.samples.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let diverged = |reason: String, step: u64| Error::Diverged { epoch, step, reason };
        let outs = self.forward_batch(batch, true)?;
        let b = outs.len();
        let loss = outs.iter().map(|o| o.loss as f64).sum::<f64>() / b as f64;
        let mut grads: Vec<Vec<f32>> = self.params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        for o in &outs {
            for (acc, g) in grads.iter_mut().zip(&o.grads) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
        }
        let inv = 1.0 / b as f32;
        grads.iter_mut().flatten().for_each(|v| *v *= inv);
        observer.adjust_gradients(epoch, self.step, &mut grads);

        if !loss.is_finite() {
            return Err(diverged(format!("non-finite loss {loss}"), self.step));
        }
        let norm = grad_norm(&grads);
        if !norm.is_finite() {
            return Err(diverged(format!("non-finite gradient norm {norm}"), self.step));
        }
        if norm > self.train.explosion_threshold {
            self.explosions += 1;
            if self.explosions >= self.train.explosion_patience {
                return Err(diverged(
                    format!(
                        "gradient norm {norm} above {} for {} consecutive steps",
                        self.train.explosion_threshold, self.explosions
                    ),
                    self.step,
                ));
            }
        } else {
            self.explosions = 0;
        }
        if let Some(max) = self.train.grad_clip {
            if norm > max {
                let s = (max / (norm + 1e-6)) as f32;
                grads.iter_mut().flatten().for_each(|v| *v *= s);
            }
        }
        let lr = self.schedule.lr_at(self.step as f64);
        let hyper = AdamHyper {
            lr,
            beta1: self.train.betas.0,
            beta2: self.train.betas.1,
            eps: self.train.adam_eps,
            weight_decay: self.train.weight_decay,
        };
        adamw_step(self.params.tensors_mut(), &grads, &self.decay, &mut self.opt, &hyper).map_err(|e| match e {
            Error::Diverged { reason, .. } => diverged(reason, self.step),
            other => other,
        })?;
        let plan = &outs[0].plan;
        let record = TrainLogRecord {
            epoch,
            step: self.step,
            loss,
            grad_norm: norm,
            lr,
            stage: plan.stage,
            tokens_encoded: plan.encode_set.len(),
            tokens_reconstructed: plan.reconstruction_targets.len(),
            images_per_minute: self
                .timing
                .then(|| b as f64 * 60.0 / start.elapsed().as_secs_f64().max(1e-9)),
        };
        self.step += 1;
        observer.on_record(&record)?;
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    /// Mean step loss of each epoch run.
    pub epoch_losses: Vec<f64>,
    pub checkpoint: Checkpoint,
}

/// Runs epochs `epochs_done+1 ..= T`, writing `checkpoint_path` at the end
/// and `<path>.epochK` every `checkpoint_every` epochs.
pub fn train(
    ds: &Dataset,
    trainer: &mut Trainer,
    checkpoint_path: Option<&Path>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainSummary> {
    let first = trainer.epochs_done + 1;
    let last = trainer.train.epochs;
    let recipe = trainer.recipe();
    let workers = trainer.train.workers;
    let mut epoch_losses = Vec::new();
    if first <= last {
        BatchPipeline::run(ds, &recipe, trainer.train.batch_size, first..=last, workers, |pipeline| {
            let mut sum = 0.0;
            let mut count = 0usize;
            let per_epoch = batches_per_epoch(ds.len(), trainer.train.batch_size);
            for batch in pipeline {
                let batch = batch?;
                let rec = trainer.step_batch(&batch, observer)?;
                sum += rec.loss;
                count += 1;
                if batch.batch + 1 == per_epoch {
                    epoch_losses.push(sum / count as f64);
                    sum = 0.0;
                    count = 0;
                    trainer.epochs_done = batch.epoch;
                    let every = trainer.train.checkpoint_every;
                    if let Some(path) = checkpoint_path {
                        if every > 0 && batch.epoch % every == 0 && batch.epoch != last {
                            let mut p = PathBuf::from(path).into_os_string();
                            p.push(format!(".epoch{}", batch.epoch));
                            trainer.checkpoint().save(Path::new(&p))?;
                        }
                    }
                }
            }
            Ok::<(), Error>(())
        })?;
    }
    let checkpoint = trainer.checkpoint();
    if let Some(path) = checkpoint_path {
        checkpoint.save(path)?;
    }
    Ok(TrainSummary { steps: trainer.step, epoch_losses, checkpoint })
}
