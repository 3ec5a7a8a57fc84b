//! Soft committees: the raw classifier logits of independently trained
//! members are summed, unaltered, and the committee predicts the argmax.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{load_checkpoint, Batch, Model, ModelError};
use crate::scalar::Scalar;
use crate::tokenizer::TokenizedSequence;
use crate::train::{argmax, Evaluation, EncodedSplit, TrainError};

#[derive(Debug, Error)]
pub enum CommitteeError {
    #[error("a committee needs at least one member")]
    Empty,
    #[error("member {member} has {found} labels, committee has {expected}")]
    LabelMismatch { member: usize, expected: usize, found: usize },
    #[error("member {member} has vocabulary size {found}, committee has {expected}")]
    VocabMismatch { member: usize, expected: usize, found: usize },
    #[error("invalid committee manifest: {0}")]
    Manifest(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Ordered member checkpoints and the label count they must share.
/// Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitteeManifest {
    pub num_labels: usize,
    pub members: Vec<PathBuf>,
}

impl CommitteeManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CommitteeError> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|source| CommitteeError::Io { path: path.display().to_string(), source })?;
        let mut m: Self = toml::from_str(&text).map_err(|e| CommitteeError::Manifest(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut m.members {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitteeEvaluation {
    pub committee: Evaluation,
    pub members: Vec<Evaluation>,
}

#[derive(Clone, Debug)]
pub struct Committee<T> {
    members: Vec<Model<T>>,
    num_labels: usize,
}

/// Sums member logit vectors in member order and picks the first maximal
/// label. All slices must have the same length.
pub fn combine_logits<T: Scalar>(member_logits: &[&[T]]) -> (usize, Vec<T>) {
    let mut sum = member_logits[0].to_vec();
    for m in &member_logits[1..] {
        for (s, &x) in sum.iter_mut().zip(m.iter()) {
            *s += x;
        }
    }
    (argmax(&sum), sum)
}

impl<T: Scalar> Committee<T> {
    pub fn new(members: Vec<Model<T>>) -> Result<Self, CommitteeError> {
        let first = members.first().ok_or(CommitteeError::Empty)?;
        let (num_labels, vocab) = (first.config().num_labels, first.config().vocab_size);
        if num_labels == 0 {
            return Err(ModelError::NoClassifier.into());
        }
        for (i, m) in members.iter().enumerate() {
            if m.config().num_labels != num_labels {
                return Err(CommitteeError::LabelMismatch { member: i, expected: num_labels, found: m.config().num_labels });
            }
            if m.config().vocab_size != vocab {
                return Err(CommitteeError::VocabMismatch { member: i, expected: vocab, found: m.config().vocab_size });
            }
        }
        Ok(Self { members, num_labels })
    }

    pub fn from_manifest(manifest: &CommitteeManifest) -> Result<Self, CommitteeError> {
        let mut members = Vec::with_capacity(manifest.members.len());
        for (i, p) in manifest.members.iter().enumerate() {
            let m = load_checkpoint::<T>(p)?.model;
            if m.config().num_labels != manifest.num_labels {
                return Err(CommitteeError::LabelMismatch {
                    member: i,
                    expected: manifest.num_labels,
                    found: m.config().num_labels,
                });
            }
            members.push(m);
        }
        Self::new(members)
    }

    pub fn members(&self) -> &[Model<T>] {
        &self.members
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// Committee label for one input, with the summed logits.
    pub fn predict(&self, input: &TokenizedSequence) -> Result<(usize, Vec<T>), CommitteeError> {
        let batch = Batch::from_sequences([input])?;
        let logits: Result<Vec<_>, ModelError> =
            self.members.par_iter().map(|m| m.forward_classify(&batch).map(|t| t.into_data())).collect();
        let logits = logits?;
        let rows: Vec<&[T]> = logits.iter().map(Vec::as_slice).collect();
        Ok(combine_logits(&rows))
    }

    /// Evaluates the committee and each member alone on `split`.
    pub fn evaluate(&self, split: &EncodedSplit, batch_size: usize) -> Result<CommitteeEvaluation, CommitteeError> {
        if split.is_empty() {
            return Err(TrainError::EmptySplit.into());
        }
        let per_member: Result<Vec<Vec<T>>, TrainError> =
            self.members.par_iter().map(|m| crate::train::split_logits(m, split, batch_size)).collect();
        let per_member = per_member?;
        let l = self.num_labels;
        let mut members = Vec::with_capacity(per_member.len());
        for logits in &per_member {
            let preds = logits.chunks(l).map(argmax).collect();
            members.push(Evaluation::from_predictions(preds, &split.labels, l)?);
        }
        let preds = (0..split.len())
            .map(|i| {
                let rows: Vec<&[T]> = per_member.iter().map(|m| &m[i * l..(i + 1) * l]).collect();
                combine_logits(&rows).0
            })
            .collect();
        let committee = Evaluation::from_predictions(preds, &split.labels, l)?;
        Ok(CommitteeEvaluation { committee, members })
    }
}
