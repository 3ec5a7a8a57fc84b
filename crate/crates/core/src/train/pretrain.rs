use crate::corpus::Paragraph;
use crate::model::{Batch, Graph, Model};
use crate::numerics::Tape;
use crate::rng::{derive_seed, seeded, shuffle};
use crate::scalar::Scalar;
use crate::tokenizer::{SpecialIds, TokenizedSequence};
use crate::train::{argmax, clip_grad_norm, lr_schedule, mask_batch, AdamW, TrainConfig, TrainError, TrainMode};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainReport {
    /// Mean masked-token cross-entropy per epoch.
    pub epoch_loss: Vec<f64>,
    /// Masked-token top-1 accuracy per epoch, measured on the training
    /// forward passes.
    pub epoch_accuracy: Vec<f64>,
    pub steps: usize,
    /// Batches in which no position was selected for masking.
    pub skipped_batches: usize,
}

/// Model inputs for pre-training paragraphs, truncated to `seq_len`.
pub fn encode_paragraphs(paragraphs: &[Paragraph], specials: SpecialIds, seq_len: usize) -> Vec<TokenizedSequence> {
    paragraphs.iter().map(|p| TokenizedSequence::from_pieces(&p.tokens, specials, seq_len)).collect()
}

/// Trains `model` with the masked-language-model objective. Each epoch
/// visits the sequences in a fresh seeded order.
pub fn pretrain<T: Scalar>(
    model: &mut Model<T>,
    data: &[TokenizedSequence],
    specials: SpecialIds,
    cfg: &TrainConfig,
) -> Result<PretrainReport, TrainError> {
    cfg.validate()?;
    if cfg.mode != TrainMode::Pretrain {
        return Err(TrainError::InvalidConfig("pretrain needs mode = pretrain".into()));
    }
    if data.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let vocab_size = model.config().vocab_size;
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let mut order_rng = seeded(derive_seed(cfg.seed, "pretrain.order"));
    let mut mask_rng = seeded(derive_seed(cfg.seed, "pretrain.mask"));
    let mut drop_rng = seeded(derive_seed(cfg.seed, "pretrain.dropout"));
    let mut opt = AdamW::new(model.params());
    let mut report = PretrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for _ in 0..cfg.epochs {
        shuffle(&mut order, &mut order_rng);
        let (mut loss_sum, mut tokens, mut correct) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch::trimmed(chunk.iter().map(|&i| &data[i]))?;
            let masked = mask_batch(&batch, specials, vocab_size, &mut mask_rng);
            let lr = lr_schedule(report.steps, steps_per_epoch, cfg);
            report.steps += 1;
            let (rows, targets) = masked.targets();
            if rows.is_empty() {
                report.skipped_batches += 1;
                continue;
            }
            let mut tape = Tape::new();
            let (vars, loss, active) = {
                let g = Graph::bind(model, &mut tape, true)?;
                let h = g.encode(&mut tape, &masked.batch, Some(&mut drop_rng))?;
                let logits = g.mlm_logits(&mut tape, h, &rows)?;
                let (loss, active) = tape.cross_entropy(logits, &targets)?;
                let lv = tape.value(logits);
                correct += lv
                    .data()
                    .chunks(vocab_size)
                    .zip(&targets)
                    .filter(|(row, t)| Some(argmax(row) as u32) == **t)
                    .count();
                (g.param_vars().to_vec(), loss, active)
            };
            let mut grads = tape.backward(loss)?;
            let mut gvec: Vec<_> = vars.iter().map(|&v| grads.take(v)).collect();
            if let Some(max) = cfg.grad_clip {
                clip_grad_norm(&mut gvec, max);
            }
            opt.step(model.params_mut(), &gvec, lr, cfg.weight_decay)?;
            loss_sum += tape.value(loss).item().to_f64_lossy() * active as f64;
            tokens += active;
        }
        let denom = tokens.max(1) as f64;
        report.epoch_loss.push(loss_sum / denom);
        report.epoch_accuracy.push(correct as f64 / denom);
    }
    Ok(report)
}

/// Masked-token accuracy in inference mode under a fixed masking seed.
pub fn mlm_accuracy<T: Scalar>(
    model: &Model<T>,
    data: &[TokenizedSequence],
    specials: SpecialIds,
    seed: u64,
    batch_size: usize,
) -> Result<f64, TrainError> {
    let vocab_size = model.config().vocab_size;
    let mut rng = seeded(derive_seed(seed, "mlm_accuracy.mask"));
    let (mut correct, mut total) = (0usize, 0usize);
    for chunk in data.chunks(batch_size.max(1)) {
        let batch = Batch::trimmed(chunk)?;
        let masked = mask_batch(&batch, specials, vocab_size, &mut rng);
        let (rows, targets) = masked.targets();
        if rows.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let g = Graph::bind(model, &mut tape, false)?;
        let h = g.encode(&mut tape, &masked.batch, None)?;
        let logits = g.mlm_logits(&mut tape, h, &rows)?;
        correct += tape
            .value(logits)
            .data()
            .chunks(vocab_size)
            .zip(&targets)
            .filter(|(row, t)| Some(argmax(row) as u32) == **t)
            .count();
        total += rows.len();
    }
    if total == 0 {
        return Err(TrainError::EmptyData);
    }
    Ok(correct as f64 / total as f64)
}
