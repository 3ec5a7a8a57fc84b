use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Batch, Model};
use crate::scalar::Scalar;
use crate::train::{EncodedSplit, TrainError};

/// Index of the largest value; the first one wins ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Accuracy per label; zero for labels without instances.
    pub per_label: Vec<f64>,
    pub per_label_total: Vec<usize>,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn from_predictions(predictions: Vec<usize>, labels: &[usize], num_labels: usize) -> Result<Self, TrainError> {
        if labels.is_empty() {
            return Err(TrainError::EmptySplit);
        }
        let mut hit = vec![0usize; num_labels];
        let mut per_label_total = vec![0usize; num_labels];
        for (&p, &l) in predictions.iter().zip(labels) {
            per_label_total[l] += 1;
            if p == l {
                hit[l] += 1;
            }
        }
        let correct: usize = hit.iter().sum();
        let per_label =
            hit.iter().zip(&per_label_total).map(|(&h, &n)| if n == 0 { 0.0 } else { h as f64 / n as f64 }).collect();
        Ok(Self { accuracy: correct as f64 / labels.len() as f64, correct, total: labels.len(), per_label, per_label_total, predictions })
    }
}

/// Raw classifier logits for every sequence of `split`, row-major
/// `[n, num_labels]`, computed in inference mode.
pub fn split_logits<T: Scalar>(model: &Model<T>, split: &EncodedSplit, batch_size: usize) -> Result<Vec<T>, TrainError> {
    let chunks: Vec<_> = split.seqs.chunks(batch_size.max(1)).collect();
    let parts: Result<Vec<Vec<T>>, TrainError> = chunks
        .par_iter()
        .map(|c| {
            let batch = Batch::trimmed(*c)?;
            Ok(model.forward_classify(&batch)?.into_data())
        })
        .collect();
    Ok(parts?.concat())
}

/// Top-1 accuracy over `split`, overall and per label.
pub fn evaluate<T: Scalar>(model: &Model<T>, split: &EncodedSplit, batch_size: usize) -> Result<Evaluation, TrainError> {
    if split.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let l = model.config().num_labels;
    let logits = split_logits(model, split, batch_size)?;
    let predictions = logits.chunks(l).map(argmax).collect();
    Evaluation::from_predictions(predictions, &split.labels, l)
}
