use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::metrics::{EpochRecord, MetricsLog, StepRecord};
use crate::data::{make_views, Batcher, PairAugmentation, PairedDataset, ViewBatch, ViewEntry};
use crate::error::{Error, Result};
use crate::loss::{combined_loss, LossWeights};
use crate::model::{Checkpoint, MViTacModel};
use crate::rng::{derive_path, derive_seed};
use crate::tensor::{Tape, Tensor};

const STREAM_BATCHES: u64 = 10;
const STREAM_VIEWS: u64 = 11;

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::with_lr(0.003),
            batch_size: 64,
            epochs: 30,
            momentum: 0.99,
            seed: 0,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule: lr 0.03, batch 256, 240 epochs.
    pub fn paper_scale() -> Self {
        Self {
            adam: AdamConfig::with_lr(0.03),
            batch_size: 256,
            epochs: 240,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.loss.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Range {
                what: "momentum",
                value: self.momentum,
                range: "[0, 1]",
            });
        }
        Ok(())
    }
}

fn diverged(what: String) -> Error {
    Error::DivergedTraining { what, last_good: None }
}

/// Step-by-step driver of self-supervised pretraining.
pub struct Pretrainer<'a> {
    model: MViTacModel<f32>,
    adam: Adam<f32>,
    names: Vec<String>,
    config: TrainConfig,
    dataset: &'a PairedDataset,
    aug: PairAugmentation,
    batcher: Batcher,
    step: u64,
    log: MetricsLog,
}

impl<'a> Pretrainer<'a> {
    pub fn new(
        model: MViTacModel<f32>,
        dataset: &'a PairedDataset,
        aug: PairAugmentation,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if dataset.len() < config.batch_size {
            return Err(Error::Config(format!(
                "{} training samples cannot fill one batch of {}",
                dataset.len(),
                config.batch_size
            )));
        }
        let adam = Adam::new(config.adam, model.query_params())?;
        let batcher = Batcher::new(dataset.len(), config.batch_size, derive_seed(config.seed, STREAM_BATCHES), true)?;
        Ok(Self {
            names: model.query_param_names(),
            model,
            adam,
            config,
            dataset,
            aug,
            batcher,
            step: 0,
            log: MetricsLog::default(),
        })
    }

    pub fn model(&self) -> &MViTacModel<f32> {
        &self.model
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn batcher(&self) -> &Batcher {
        &self.batcher
    }

    /// Augments the samples at `indices` into the four view batches of `epoch`.
    pub fn views(&self, epoch: u64, indices: &[usize]) -> Result<ViewBatch<f32>> {
        let entries = indices
            .iter()
            .map(|&i| {
                let seed = derive_path(self.config.seed, &[STREAM_VIEWS, epoch, i as u64]);
                make_views(&self.dataset.samples[i], &self.aug, seed)
            })
            .collect::<Result<Vec<ViewEntry>>>()?;
        ViewBatch::from_entries(&entries)
    }

    /// Forward, backward, Adam on the query side, then the momentum update.
    pub fn train_step(&mut self, epoch: u64, indices: &[usize]) -> Result<StepRecord> {
        let views = self.views(epoch, indices)?;
        let step = self.step + 1;
        let mut tape = Tape::new();
        let qv = self.model.bind_query(&mut tape);
        let z = self.model.forward_views(&mut tape, &qv, &views).map_err(|e| match e {
            Error::DegenerateEmbedding { norm, .. } if !norm.is_finite() => {
                diverged(format!("embeddings at step {step}"))
            }
            other => other,
        })?;
        if z.all().iter().any(|&v| !tape.value(v).is_finite()) {
            return Err(diverged(format!("embeddings at step {step}")));
        }
        let (loss, breakdown) = combined_loss(&mut tape, &z, &self.config.loss)?;
        if !breakdown.is_finite() {
            return Err(diverged(format!("loss at step {step}")));
        }
        tape.backward(loss)?;
        let grads: Vec<Vec<f32>> = qv
            .vars()
            .iter()
            .map(|&v| tape.grad(v).map_or_else(|| vec![0.0; tape.value(v).numel()], <[f32]>::to_vec))
            .collect();
        drop(tape);
        let grad_refs: Vec<&[f32]> = grads.iter().map(Vec::as_slice).collect();
        self.adam.step(&mut self.model.query_params_mut(), &grad_refs, &self.names)?;
        self.model.momentum_update(self.config.momentum)?;
        self.step = step;
        let record = StepRecord::new(step, epoch, &breakdown);
        self.log.push_step(record);
        Ok(record)
    }

    /// Runs every batch of `epoch` (1-based) and returns the epoch means.
    pub fn run_epoch(&mut self, epoch: u64) -> Result<EpochRecord> {
        for batch in self.batcher.epoch(epoch) {
            self.train_step(epoch, &batch)?;
        }
        let record = self.log.close_epoch(epoch).expect("at least one batch per epoch");
        if !record.l_mm.is_finite() {
            return Err(diverged(format!("epoch {epoch} mean loss")));
        }
        Ok(record)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let seeds = BTreeMap::from([
            ("model".to_string(), self.model.config().seed),
            ("train".to_string(), self.config.seed),
        ]);
        Checkpoint::from_model(&self.model, self.step, seeds, Some(self.aug.clone()))
    }

    pub fn into_parts(self) -> (MViTacModel<f32>, MetricsLog) {
        (self.model, self.log)
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub model: MViTacModel<f32>,
    pub metrics: MetricsLog,
    pub checkpoint: Checkpoint,
}

/// Full pretraining run. With `out_dir`, `last.ckpt` is rewritten after every
/// epoch, `final.ckpt`, `metrics.csv` and `epochs.csv` at the end. On
/// divergence the error carries the path of the last completed epoch's checkpoint.
pub fn pretrain(
    model: MViTacModel<f32>,
    dataset: &PairedDataset,
    aug: PairAugmentation,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<PretrainOutput> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut trainer = Pretrainer::new(model, dataset, aug, config.clone())?;
    let mut last_good: Option<PathBuf> = None;
    for epoch in 1..=config.epochs as u64 {
        match trainer.run_epoch(epoch) {
            Ok(rec) => log::info!("epoch {epoch}: l_mm {:.4}", rec.l_mm),
            Err(e) => {
                if let Some(dir) = out_dir {
                    trainer.log().write_steps(&dir.join(METRICS_FILE))?;
                }
                return Err(match e {
                    Error::DivergedTraining { what, .. } => Error::DivergedTraining { what, last_good },
                    other => other,
                });
            }
        }
        if let Some(dir) = out_dir {
            let path = dir.join(LAST_CHECKPOINT);
            trainer.checkpoint().save(&path)?;
            last_good = Some(path);
        }
    }
    let checkpoint = trainer.checkpoint();
    let (model, metrics) = trainer.into_parts();
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join(FINAL_CHECKPOINT))?;
        metrics.write_steps(&dir.join(METRICS_FILE))?;
        metrics.write_epochs(&dir.join(EPOCHS_FILE))?;
    }
    Ok(PretrainOutput {
        model,
        metrics,
        checkpoint,
    })
}

/// Order-sensitive digest of a parameter list, for frozen-parameter checks.
pub fn param_digest<'t>(params: impl IntoIterator<Item = &'t Tensor<f32>>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in params {
        for d in p.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in p.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
