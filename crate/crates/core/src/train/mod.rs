//! Masked-language-model pre-training, classification fine-tuning and
//! evaluation.

mod evaluate;
mod finetune;
mod masking;
mod optim;
mod pretrain;

pub use evaluate::{argmax, evaluate, split_logits, Evaluation};
pub use finetune::{finetune, initial_model, EncodedSplit, FinetuneReport};
pub use masking::{mask_batch, random_non_special, MaskAction, MaskedBatch, MASK_PROB};
pub use optim::{clip_grad_norm, AdamW, ADAM_EPS, BETA1, BETA2};
pub use pretrain::{encode_paragraphs, mlm_accuracy, pretrain, PretrainReport};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::tokenizer::MAX_SEQ_LEN;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("nothing to train on")]
    EmptyData,
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error("model has {model} labels, data has {data}")]
    LabelMismatch { model: usize, data: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl TrainError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, TrainError::Numerics(_) | TrainError::Model(ModelError::Numerics(_)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Pretrain,
    Finetune,
}

fn default_mode() -> TrainMode {
    TrainMode::Finetune
}

fn default_batch() -> usize {
    32
}

fn default_freeze() -> usize {
    50
}

fn default_seq_len() -> usize {
    MAX_SEQ_LEN
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_mode")]
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// The learning rate stops changing after this many epochs.
    #[serde(default = "default_freeze")]
    pub schedule_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop fine-tuning after this many epochs without a new best test
    /// accuracy.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
}

impl TrainConfig {
    /// Fifty epochs at 5.5e-5 with decay 1e-2.
    pub fn pretrain_default(seed: u64) -> Self {
        Self {
            mode: TrainMode::Pretrain,
            learning_rate: 5.5e-5,
            weight_decay: 1e-2,
            epochs: 50,
            batch_size: default_batch(),
            schedule_epochs: default_freeze(),
            seed,
            patience: None,
            grad_clip: None,
            seq_len: MAX_SEQ_LEN,
        }
    }

    /// Fifty epochs with patience ten.
    pub fn finetune_default(learning_rate: f64, weight_decay: f64, seed: u64) -> Self {
        Self {
            mode: TrainMode::Finetune,
            learning_rate,
            weight_decay,
            epochs: 50,
            batch_size: default_batch(),
            schedule_epochs: default_freeze(),
            seed,
            patience: Some(10),
            grad_clip: None,
            seq_len: MAX_SEQ_LEN,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if self.seq_len < 2 {
            return bad(format!("seq_len {} leaves no room for [CLS] and [SEP]", self.seq_len));
        }
        Ok(())
    }
}

/// Linear decay from `lr0` toward zero over all planned steps, frozen once
/// `schedule_epochs` epochs have passed.
pub fn lr_schedule(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let total = (steps_per_epoch * cfg.epochs) as f64;
    if total == 0.0 {
        return cfg.learning_rate;
    }
    let freeze = steps_per_epoch * cfg.schedule_epochs.min(cfg.epochs);
    let t = step.min(freeze) as f64;
    cfg.learning_rate * (1.0 - t / total).max(0.0)
}

/// `epoch,value` CSV with one-based epochs.
pub fn trace_csv(values: &[f64]) -> String {
    let mut s = String::from("epoch,value\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{},{v}", i + 1);
    }
    s
}

pub fn write_trace(path: impl AsRef<Path>, values: &[f64]) -> Result<(), TrainError> {
    let path = path.as_ref();
    fs::write(path, trace_csv(values)).map_err(|source| TrainError::Io { path: path.display().to_string(), source })
}
