//! Mini-batch SGD over training pairs with per-epoch validation. The
//! parameters from the epoch with the lowest validation Pk are kept.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{config_hash, Checkpoint};
use crate::corpus::{derive_gold, Document, SplitRatios};
use crate::embedder::{EmbedError, EmbeddingMatrix};
use crate::metrics::{self, MetricError, MetricReport};
use crate::model::{multitask_loss_parallel, HeadParams, LabeledPair, LossWeights, ModelError, Reduction};
use crate::sampler::PairExample;
use crate::scalar::Scalar;
use crate::segmenter::{segment, SegmentError, SegmentMode};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged { epoch: usize, step: usize, reason: String },
    #[error("pair references unknown document {0}")]
    UnknownDocument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear decay from `lr0` towards `0.1 * lr0` over all steps.
    #[default]
    LinearDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Sgd,
    /// Heavy-ball momentum with coefficient 0.9.
    SgdMomentum,
}

const MOMENTUM: f64 = 0.9;

/// Training hyperparameters. Serialized as JSON; missing fields take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr0: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    pub weights: LossWeights,
    pub optimizer: Optimizer,
    /// Used by the CLI to split a corpus before training.
    pub split: SplitRatios,
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 48,
            max_epochs: 14,
            lr0: 0.5,
            lr_schedule: LrSchedule::LinearDecay,
            seed: 0,
            weights: LossWeights::STP_TC_NSP,
            optimizer: Optimizer::Sgd,
            split: SplitRatios::default(),
            reduction: Reduction::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be at least 1".into()));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(TrainError::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        self.weights.validate()?;
        self.split.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }

    /// Validation segments with STP unless the STP head is switched off.
    pub fn segment_mode(&self) -> SegmentMode {
        if self.weights.stp > 0.0 {
            SegmentMode::Stp
        } else {
            SegmentMode::TcOnly
        }
    }
}

/// Learning rate at `step` of `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, config: &TrainConfig) -> f64 {
    match config.lr_schedule {
        LrSchedule::Constant => config.lr0,
        LrSchedule::LinearDecay => {
            let frac = step as f64 / total_steps.max(1) as f64;
            config.lr0 * (1.0 - 0.9 * frac)
        }
    }
}

/// `params -= lr * grads`.
pub fn sgd_step<T: Scalar>(params: &mut HeadParams<T>, grads: &HeadParams<T>, lr: f64) {
    params.add_scaled(grads, T::lit(-lr));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_pk: f64,
    pub val_wd: f64,
    pub lr: f64,
}

pub fn write_log<W: Write>(records: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub struct TrainData<'a> {
    pub train_docs: &'a [Document],
    pub pairs: &'a [PairExample],
    pub valid_docs: &'a [Document],
    pub embeddings: &'a EmbeddingMatrix,
    /// Topic labels; their count fixes the TC head width.
    pub topics: &'a [String],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Segments `docs` and scores them against their gold topics.
pub fn evaluate_documents<T: Scalar>(
    params: &HeadParams<T>,
    docs: &[Document],
    embeddings: &EmbeddingMatrix,
    mode: SegmentMode,
) -> Result<MetricReport, TrainError> {
    let hyp = docs
        .par_iter()
        .map(|doc| segment(params, doc, embeddings, mode))
        .collect::<Result<Vec<_>, _>>()?;
    let gold: Vec<_> = docs.iter().map(derive_gold).collect();
    Ok(metrics::evaluate(&gold, &hyp)?)
}

fn labeled_pairs<'a>(data: &TrainData<'a>) -> Result<Vec<LabeledPair<'a, f32>>, TrainError> {
    let by_id: HashMap<&str, &Document> = data.train_docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    data.pairs
        .iter()
        .map(|p| {
            let doc = by_id
                .get(p.doc_id.as_str())
                .ok_or_else(|| TrainError::UnknownDocument(p.doc_id.clone()))?;
            let sentence = |idx: usize| {
                doc.sentences.get(idx).ok_or_else(|| {
                    TrainError::Config(format!("pair index {idx} out of range in {}", p.doc_id))
                })
            };
            let (si, sj) = (sentence(p.i)?, sentence(p.j)?);
            Ok(LabeledPair {
                u: data.embeddings.row(si.sid)?,
                v: data.embeddings.row(sj.sid)?,
                stp: p.stp as usize,
                nsp: p.nsp as usize,
                topic_u: Some(p.topic_i),
                topic_v: Some(p.topic_j),
            })
        })
        .collect()
}

pub fn train(config: &TrainConfig, data: &TrainData<'_>) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if data.pairs.is_empty() {
        return Err(TrainError::Config("no training pairs".into()));
    }
    if data.valid_docs.is_empty() {
        return Err(TrainError::Config("no validation documents".into()));
    }
    if data.topics.is_empty() {
        return Err(TrainError::Config("topic vocabulary is empty".into()));
    }
    log::info!(
        "lr schedule {:?} (decays to 0.1 * lr0), optimizer {:?}",
        config.lr_schedule,
        config.optimizer
    );

    let examples = labeled_pairs(data)?;
    let (d, k) = (data.embeddings.d(), data.topics.len());
    let mode = config.segment_mode();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = HeadParams::<f32>::xavier(d, k, &mut rng);
    let mut velocity = HeadParams::<f32>::zeros(d, k);

    let steps_per_epoch = examples.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.max_epochs;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut log = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(HeadParams<f32>, usize, f64)> = None;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let epoch_lr = lr_at((epoch - 1) * steps_per_epoch, total_steps, config);
        let mut loss_sum = 0.0f64;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let step = (epoch - 1) * steps_per_epoch + b;
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i]));
            let out = multitask_loss_parallel(&params, &batch, &config.weights, config.reduction).map_err(|e| match e {
                ModelError::NonFinite { .. } => TrainError::Diverged {
                    epoch,
                    step,
                    reason: e.to_string(),
                },
                other => TrainError::Model(other),
            })?;
            loss_sum += out.loss as f64 * chunk.len() as f64;
            let lr = lr_at(step, total_steps, config);
            match config.optimizer {
                Optimizer::Sgd => sgd_step(&mut params, &out.grads, lr),
                Optimizer::SgdMomentum => {
                    velocity.scale(MOMENTUM as f32);
                    velocity.add_scaled(&out.grads, 1.0);
                    sgd_step(&mut params, &velocity, lr);
                }
            }
            if !params.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    reason: "non-finite parameters after update".into(),
                });
            }
        }

        let report = evaluate_documents(&params, data.valid_docs, data.embeddings, mode)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / examples.len() as f64,
            val_pk: report.pk,
            val_wd: report.windowdiff,
            lr: epoch_lr,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val Pk {:.4} WD {:.4}",
            record.train_loss,
            record.val_pk,
            record.val_wd
        );
        if best.as_ref().is_none_or(|(_, _, pk)| report.pk < *pk) {
            best = Some((params.clone(), epoch, report.pk));
        }
        log.push(record);
    }

    let (params, epoch, validation_pk) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params,
            epoch,
            validation_pk,
            config_hash: config_hash(config),
            config: config.clone(),
            topics: data.topics.to_vec(),
        },
        log,
    })
}
