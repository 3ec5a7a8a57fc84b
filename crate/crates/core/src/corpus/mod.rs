//! Pre-training corpora, classification datasets, token-filtered subsets and
//! token-overlap metrics.
//!
//! Token sets are always computed on the untruncated tokenization of whole
//! paragraphs and instances. Special tokens are never members of a token set
//! and are ignored by the subset filters.

mod dataset;
mod overlap;
mod subset;
mod tokenset;

pub use dataset::{extract_token_set, reduce_classification_dataset, ClassificationDataset, DatasetFormat, Instance, Split};
pub use overlap::{compute_overlap_metrics, overlap_of, OverlapReport};
pub use subset::{
    build_custom_subset, build_inflated_tm_subset, sample_random_subset, CorpusSubset, ExclusionOrder,
    InflationSpec, Provenance, SubsetManifest,
};
pub use tokenset::TokenSet;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::tokenizer::{tokenize_ids, TokenId, Vocab};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("allowed token set is empty")]
    EmptyAllowedSet,
    #[error("exclusion fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("label {label} has {available} {split} instances, {needed} requested")]
    InsufficientInstances { label: usize, split: Split, needed: usize, available: usize },
    #[error("labels are not dense: label {0} never occurs")]
    SparseLabels(usize),
    #[error("manifest does not match corpus: {0}")]
    ManifestMismatch(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
}

/// One pre-training paragraph and its full subword tokenization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Paragraph {
    pub text: String,
    pub tokens: Vec<TokenId>,
}

impl Paragraph {
    pub fn new(text: impl Into<String>, vocab: &Vocab) -> Self {
        let text = text.into();
        let tokens = tokenize_ids(&text, vocab);
        Self { text, tokens }
    }

    /// Non-special tokens, which are the ones token sets and filters see.
    pub fn content_tokens<'a>(&'a self, vocab: &'a Vocab) -> impl Iterator<Item = TokenId> + 'a {
        self.tokens.iter().copied().filter(move |&t| !vocab.is_special(t))
    }
}

/// Paragraphs in ingestion order.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    paragraphs: Vec<Paragraph>,
}

impl Corpus {
    /// Reads one paragraph per line. Blank lines are skipped; paragraph
    /// indices count only the kept lines.
    pub fn ingest(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        Ok(Self::from_texts(text.lines(), vocab))
    }

    pub fn from_texts<'a>(lines: impl IntoIterator<Item = &'a str>, vocab: &Vocab) -> Self {
        let lines: Vec<&str> = lines.into_iter().filter(|l| !l.trim().is_empty()).collect();
        let paragraphs = lines.par_iter().map(|l| Paragraph::new(*l, vocab)).collect();
        Self { paragraphs }
    }

    pub fn from_paragraphs(paragraphs: Vec<Paragraph>) -> Self {
        Self { paragraphs }
    }

    pub fn len(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paragraphs.is_empty()
    }

    pub fn paragraphs(&self) -> &[Paragraph] {
        &self.paragraphs
    }

    pub fn get(&self, i: usize) -> Option<&Paragraph> {
        self.paragraphs.get(i)
    }

    /// Per-id occurrence counts over the whole corpus, specials included.
    pub fn token_counts(&self, vocab_size: usize) -> Vec<u64> {
        let partials: Vec<Vec<u64>> = self
            .paragraphs
            .par_chunks(4096)
            .map(|chunk| {
                let mut c = vec![0u64; vocab_size];
                for p in chunk {
                    for &t in &p.tokens {
                        c[t as usize] += 1;
                    }
                }
                c
            })
            .collect();
        let mut counts = vec![0u64; vocab_size];
        for part in partials {
            for (a, b) in counts.iter_mut().zip(part) {
                *a += b;
            }
        }
        counts
    }

    /// SHA-256 over paragraph texts, identifying a corpus in manifests.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in &self.paragraphs {
            h.update((p.text.len() as u64).to_le_bytes());
            h.update(p.text.as_bytes());
        }
        hex::encode(h.finalize())
    }
}
