use serde::{Deserialize, Serialize};

use crate::corpus::Instance;
use crate::model::{build_model, is_classifier_param, Batch, Graph, Model, ModelConfig, ParamStore, VocabRemap};
use crate::numerics::Tape;
use crate::rng::{derive_seed, seeded, shuffle};
use crate::scalar::Scalar;
use crate::tokenizer::{SpecialIds, TokenizedSequence};
use crate::train::{argmax, clip_grad_norm, evaluate, lr_schedule, AdamW, TrainConfig, TrainError, TrainMode};

/// Model inputs with their labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EncodedSplit {
    pub seqs: Vec<TokenizedSequence>,
    pub labels: Vec<usize>,
}

impl EncodedSplit {
    pub fn from_instances(instances: &[Instance], specials: SpecialIds, seq_len: usize) -> Self {
        Self {
            seqs: instances.iter().map(|i| TokenizedSequence::from_pieces(&i.tokens, specials, seq_len)).collect(),
            labels: instances.iter().map(|i| i.label).collect(),
        }
    }

    pub fn remap(&self, remap: &VocabRemap) -> Self {
        Self { seqs: self.seqs.iter().map(|s| remap.reduce_sequence(s)).collect(), labels: self.labels.clone() }
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    /// One-based epoch of the best test accuracy; the first wins ties.
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub best_per_label: Vec<f64>,
    pub stopped_early: bool,
}

impl FinetuneReport {
    pub fn epochs_run(&self) -> usize {
        self.test_accuracy.len()
    }
}

/// The model fine-tuning starts from: a fresh model built from `seed`, with
/// every encoder tensor of `encoder` copied in when given. The classifier
/// head is always the fresh one, so a pre-trained and a scratch start built
/// from the same seed differ only in the encoder.
pub fn initial_model<T: Scalar>(
    config: &ModelConfig,
    encoder: Option<&ParamStore<T>>,
    seed: u64,
) -> Result<Model<T>, TrainError> {
    let mut model = build_model(config, seed)?;
    if let Some(src) = encoder {
        let mut enc = ParamStore::new();
        for p in src.iter().filter(|p| !is_classifier_param(&p.name)) {
            enc.insert(p.name.clone(), p.kind, p.value.clone());
        }
        model.transfer_from(&enc)?;
    }
    Ok(model)
}

/// Trains a classifier on `train`, evaluating on `test` after each epoch.
/// Returns the model as it was after its best epoch, with the per-epoch
/// traces.
pub fn finetune<T: Scalar>(
    config: &ModelConfig,
    encoder: Option<&ParamStore<T>>,
    train: &EncodedSplit,
    test: &EncodedSplit,
    cfg: &TrainConfig,
) -> Result<(Model<T>, FinetuneReport), TrainError> {
    cfg.validate()?;
    if cfg.mode != TrainMode::Finetune {
        return Err(TrainError::InvalidConfig("finetune needs mode = finetune".into()));
    }
    if train.is_empty() {
        return Err(TrainError::EmptyData);
    }
    if test.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let data_labels = train.labels.iter().chain(&test.labels).map(|&l| l + 1).max().unwrap_or(0);
    if config.num_labels == 0 || data_labels > config.num_labels {
        return Err(TrainError::LabelMismatch { model: config.num_labels, data: data_labels });
    }
    let mut model = initial_model(config, encoder, cfg.seed)?;
    let num_labels = config.num_labels;
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let mut order_rng = seeded(derive_seed(cfg.seed, "finetune.order"));
    let mut drop_rng = seeded(derive_seed(cfg.seed, "finetune.dropout"));
    let mut opt = AdamW::new(model.params());
    let mut report = FinetuneReport { best_epoch: 0, best_accuracy: f64::NEG_INFINITY, ..Default::default() };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    let mut since_best = 0;
    let mut best_params = None;

    for epoch in 1..=cfg.epochs {
        shuffle(&mut order, &mut order_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch::trimmed(chunk.iter().map(|&i| &train.seqs[i]))?;
            let targets: Vec<Option<u32>> = chunk.iter().map(|&i| Some(train.labels[i] as u32)).collect();
            let lr = lr_schedule(step, steps_per_epoch, cfg);
            step += 1;
            let mut tape = Tape::new();
            let (vars, loss) = {
                let g = Graph::bind(&model, &mut tape, true)?;
                let h = g.encode(&mut tape, &batch, Some(&mut drop_rng))?;
                let logits = g.classify_logits(&mut tape, h, &batch)?;
                let (loss, _) = tape.cross_entropy(logits, &targets)?;
                correct += tape
                    .value(logits)
                    .data()
                    .chunks(num_labels)
                    .zip(&targets)
                    .filter(|(row, t)| Some(argmax(row) as u32) == **t)
                    .count();
                (g.param_vars().to_vec(), loss)
            };
            let mut grads = tape.backward(loss)?;
            let mut gvec: Vec<_> = vars.iter().map(|&v| grads.take(v)).collect();
            if let Some(max) = cfg.grad_clip {
                clip_grad_norm(&mut gvec, max);
            }
            opt.step(model.params_mut(), &gvec, lr, cfg.weight_decay)?;
            loss_sum += tape.value(loss).item().to_f64_lossy() * chunk.len() as f64;
        }
        report.train_loss.push(loss_sum / train.len() as f64);
        report.train_accuracy.push(correct as f64 / train.len() as f64);

        let eval = evaluate(&model, test, cfg.batch_size)?;
        report.test_accuracy.push(eval.accuracy);
        if eval.accuracy > report.best_accuracy {
            report.best_accuracy = eval.accuracy;
            report.best_epoch = epoch;
            report.best_per_label = eval.per_label;
            best_params = Some(model.params().clone());
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                report.stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    if let Some(best) = best_params {
        *model.params_mut() = best;
    }
    Ok((model, report))
}
