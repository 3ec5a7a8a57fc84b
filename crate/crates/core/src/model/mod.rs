//! BERT-style encoder with an optional convolutional front-end, a tied MLM
//! head and a `[CLS]` classifier head.

mod checkpoint;
mod config;
mod encoder;
mod params;
mod remap;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMetadata};
pub use config::{latency, ConvLayerSpec, ModelConfig};
pub use encoder::Graph;
pub use params::{Param, ParamKind, ParamStore};
pub use remap::VocabRemap;

use thiserror::Error;

use crate::numerics::{NumericsError, Tensor};
use crate::rng::{derive_seed, seeded, truncated_normal};
use crate::scalar::Scalar;
use crate::tokenizer::{TokenId, TokenizedSequence};

/// Standard deviation of the truncated-normal weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} is outside the vocabulary of {vocab_size}")]
    IdOutOfRange { id: TokenId, vocab_size: usize },
    #[error("sequence length {len} exceeds {max} positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("model has no classifier head")]
    NoClassifier,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint lacks tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor {0}")]
    UnexpectedTensor(String),
}

/// Equal-length token sequences stacked row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<TokenId>,
    /// `false` at `[PAD]` positions.
    pub keep: Vec<bool>,
    pub size: usize,
    pub seq: usize,
}

impl Batch {
    pub fn new(ids: Vec<TokenId>, keep: Vec<bool>, size: usize, seq: usize) -> Result<Self, ModelError> {
        if size == 0 || seq == 0 {
            return Err(ModelError::InvalidBatch("empty batch".into()));
        }
        if ids.len() != size * seq || keep.len() != size * seq {
            return Err(ModelError::InvalidBatch(format!(
                "{} ids and {} mask entries for {size}x{seq}",
                ids.len(),
                keep.len()
            )));
        }
        Ok(Self { ids, keep, size, seq })
    }

    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a TokenizedSequence>) -> Result<Self, ModelError> {
        let (mut ids, mut keep, mut size, mut seq) = (Vec::new(), Vec::new(), 0, None);
        for s in seqs {
            if *seq.get_or_insert(s.len()) != s.len() {
                return Err(ModelError::InvalidBatch("sequences differ in length".into()));
            }
            ids.extend_from_slice(&s.ids);
            keep.extend_from_slice(&s.attention_mask);
            size += 1;
        }
        Self::new(ids, keep, size, seq.unwrap_or(0))
    }

    /// Like [`Batch::from_sequences`], but drops the trailing positions that
    /// are padding in every sequence. Real positions see the same inputs as
    /// in the untrimmed batch, since padding is masked everywhere.
    pub fn trimmed<'a>(seqs: impl IntoIterator<Item = &'a TokenizedSequence>) -> Result<Self, ModelError> {
        let seqs: Vec<&TokenizedSequence> = seqs.into_iter().collect();
        let full = Self::from_sequences(seqs.iter().copied())?;
        let seq = seqs.iter().map(|s| s.real_len).max().unwrap_or(0).clamp(1, full.seq);
        if seq == full.seq {
            return Ok(full);
        }
        let mut ids = Vec::with_capacity(full.size * seq);
        let mut keep = Vec::with_capacity(full.size * seq);
        for b in 0..full.size {
            ids.extend_from_slice(&full.ids[b * full.seq..b * full.seq + seq]);
            keep.extend_from_slice(&full.keep[b * full.seq..b * full.seq + seq]);
        }
        Self::new(ids, keep, full.size, seq)
    }

    /// Index of the first position of each sequence in the flattened rows.
    pub fn cls_rows(&self) -> Vec<usize> {
        (0..self.size).map(|b| b * self.seq).collect()
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Name, role, shape and initializer of one parameter.
#[derive(Clone, Debug)]
struct ParamSpec {
    name: String,
    kind: ParamKind,
    shape: Vec<usize>,
    init: Init,
}

/// Every parameter a config implies, in store order.
fn layout(c: &ModelConfig) -> Vec<ParamSpec> {
    let (h, f, v) = (c.hidden(), c.ffn_width(), c.vocab_size);
    let mut out = Vec::new();
    let mut add = |name: String, kind: ParamKind, shape: Vec<usize>, init: Init| {
        out.push(ParamSpec { name, kind, shape, init });
    };
    let norm = |add: &mut dyn FnMut(String, ParamKind, Vec<usize>, Init), prefix: &str| {
        add(format!("{prefix}.gain"), ParamKind::Norm, vec![h], Init::Ones);
        add(format!("{prefix}.bias"), ParamKind::Norm, vec![h], Init::Zeros);
    };
    add("embeddings.token".into(), ParamKind::Embedding, vec![v, h], Init::Normal);
    add("embeddings.position".into(), ParamKind::Embedding, vec![c.max_positions, h], Init::Normal);
    norm(&mut add, "embeddings.norm");

    let mut channels = 1;
    for (i, l) in c.conv_layers.iter().enumerate() {
        add(format!("conv.{i}.filters"), ParamKind::Weight, vec![l.filters, channels, l.kernel.0, l.kernel.1], Init::Normal);
        add(format!("conv.{i}.bias"), ParamKind::Bias, vec![l.filters], Init::Zeros);
        channels = l.filters;
    }
    if !c.conv_layers.is_empty() {
        add("conv.proj.filters".into(), ParamKind::Weight, vec![1, channels, 1, 1], Init::Zeros);
        add("conv.proj.bias".into(), ParamKind::Bias, vec![1], Init::Zeros);
    }

    for b in 0..c.blocks {
        for part in ["query", "key", "value", "output"] {
            add(format!("block.{b}.attention.{part}.weight"), ParamKind::Weight, vec![h, h], Init::Normal);
            add(format!("block.{b}.attention.{part}.bias"), ParamKind::Bias, vec![h], Init::Zeros);
        }
        norm(&mut add, &format!("block.{b}.attention.norm"));
        add(format!("block.{b}.ffn.inner.weight"), ParamKind::Weight, vec![h, f], Init::Normal);
        add(format!("block.{b}.ffn.inner.bias"), ParamKind::Bias, vec![f], Init::Zeros);
        add(format!("block.{b}.ffn.outer.weight"), ParamKind::Weight, vec![f, h], Init::Normal);
        add(format!("block.{b}.ffn.outer.bias"), ParamKind::Bias, vec![h], Init::Zeros);
        norm(&mut add, &format!("block.{b}.ffn.norm"));
    }

    add("mlm.transform.weight".into(), ParamKind::Weight, vec![h, h], Init::Normal);
    add("mlm.transform.bias".into(), ParamKind::Bias, vec![h], Init::Zeros);
    norm(&mut add, "mlm.norm");
    add("mlm.decoder.bias".into(), ParamKind::Bias, vec![v], Init::Zeros);

    if c.num_labels > 0 {
        add("classifier.weight".into(), ParamKind::Weight, vec![h, c.num_labels], Init::Normal);
        add("classifier.bias".into(), ParamKind::Bias, vec![c.num_labels], Init::Zeros);
    }
    out
}

/// Whether a parameter belongs to the task head rather than the encoder.
pub fn is_classifier_param(name: &str) -> bool {
    name.starts_with("classifier.")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
}

/// Randomly initialized model. Each parameter draws from its own stream
/// derived from `seed` and its name, so a tensor's initial value does not
/// depend on which other tensors the config implies.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<T>, ModelError> {
    config.validate()?;
    let mut params = ParamStore::new();
    for spec in layout(config) {
        let n: usize = spec.shape.iter().product();
        let value = match spec.init {
            Init::Zeros => Tensor::zeros(spec.shape),
            Init::Ones => Tensor::ones(spec.shape),
            Init::Normal => {
                let mut rng = seeded(derive_seed(seed, &spec.name));
                let data = (0..n).map(|_| T::lit(truncated_normal(&mut rng, INIT_STD))).collect();
                Tensor::new(spec.shape, data)?
            }
        };
        params.insert(spec.name, spec.kind, value);
    }
    Ok(Model { config: config.clone(), params })
}

impl<T: Scalar> Model<T> {
    /// Wraps existing parameters after checking them against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(&config);
        for spec in &expected {
            let p = params.get(&spec.name).ok_or_else(|| ModelError::MissingTensor(spec.name.clone()))?;
            if p.value.shape() != spec.shape.as_slice() {
                return Err(ModelError::ShapeMismatch {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: p.value.shape().to_vec(),
                });
            }
        }
        if params.len() != expected.len() {
            let extra = params.names().find(|n| !expected.iter().any(|s| s.name == *n)).unwrap_or_default();
            return Err(ModelError::UnexpectedTensor(extra.to_string()));
        }
        // store order follows the layout so optimizer state lines up
        let mut ordered = ParamStore::new();
        for spec in expected {
            let p = params.get(&spec.name).expect("checked above");
            ordered.insert(spec.name, spec.kind, p.value.clone());
        }
        Ok(Self { config, params: ordered })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn latency(&self) -> usize {
        latency(&self.config)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { config: self.config.clone(), params: self.params.cast() }
    }

    /// Copies every tensor of `source` whose name and shape match one of
    /// ours and returns the restored names. Tensors absent from `source`,
    /// such as a fresh classifier head, keep their current values.
    pub fn transfer_from(&mut self, source: &ParamStore<T>) -> Result<Vec<String>, ModelError> {
        let mut restored = Vec::new();
        for p in self.params.iter_mut() {
            if let Some(src) = source.get(&p.name) {
                if src.value.shape() != p.value.shape() {
                    return Err(ModelError::ShapeMismatch {
                        name: p.name.clone(),
                        expected: p.value.shape().to_vec(),
                        found: src.value.shape().to_vec(),
                    });
                }
                p.value = src.value.clone();
                restored.push(p.name.clone());
            }
        }
        Ok(restored)
    }

    pub(crate) fn check_batch(&self, batch: &Batch) -> Result<(), ModelError> {
        if batch.seq > self.config.max_positions {
            return Err(ModelError::SequenceTooLong { len: batch.seq, max: self.config.max_positions });
        }
        if let Some(&id) = batch.ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::IdOutOfRange { id, vocab_size: self.config.vocab_size });
        }
        Ok(())
    }

    /// Final hidden states `[batch * seq, hidden]` in inference mode.
    pub fn encode(&self, batch: &Batch) -> Result<Tensor<T>, ModelError> {
        let mut tape = crate::numerics::Tape::new();
        let g = Graph::bind(self, &mut tape, false)?;
        let h = g.encode(&mut tape, batch, None)?;
        Ok(tape.value(h).clone())
    }

    /// Vocabulary logits `[batch, seq, vocab]` at every position, inference
    /// mode.
    pub fn forward_mlm(&self, batch: &Batch) -> Result<Tensor<T>, ModelError> {
        let mut tape = crate::numerics::Tape::new();
        let g = Graph::bind(self, &mut tape, false)?;
        let h = g.encode(&mut tape, batch, None)?;
        let rows: Vec<usize> = (0..batch.size * batch.seq).collect();
        let logits = g.mlm_logits(&mut tape, h, &rows)?;
        let out = tape.value(logits).clone();
        Ok(out.reshape(vec![batch.size, batch.seq, self.config.vocab_size])?)
    }

    /// Raw label logits `[batch, num_labels]`, inference mode.
    pub fn forward_classify(&self, batch: &Batch) -> Result<Tensor<T>, ModelError> {
        let mut tape = crate::numerics::Tape::new();
        let g = Graph::bind(self, &mut tape, false)?;
        let h = g.encode(&mut tape, batch, None)?;
        let logits = g.classify_logits(&mut tape, h, batch)?;
        Ok(tape.value(logits).clone())
    }
}
