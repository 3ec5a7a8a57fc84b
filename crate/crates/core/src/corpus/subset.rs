use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, CorpusError, Paragraph, TokenSet};
use crate::rng::{partial_fisher_yates, seeded};
use crate::tokenizer::{TokenId, Vocab};

/// Which end of the corpus-frequency ranking the inflation procedure removes
/// from `T_C` first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExclusionOrder {
    #[default]
    Lowest,
    Highest,
}

/// Parameters of an inflated-`T_M` subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InflationSpec {
    pub exclusion_fraction: f64,
    /// Keep only this many of the most frequent corpus tokens outside `T_C`.
    pub filler_budget: Option<usize>,
    #[serde(default)]
    pub order: ExclusionOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Custom { allowed_hash: String, allowed_len: usize },
    Random { seed: u64, requested: usize },
    Inflated { allowed_hash: String, allowed_len: usize, spec: InflationSpec, excluded: Vec<TokenId> },
    /// A seeded uniform sample of another subset.
    Downsampled { source: Box<Provenance>, seed: u64, requested: usize },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Custom { allowed_len, .. } => write!(f, "custom({allowed_len} allowed)"),
            Provenance::Random { seed, .. } => write!(f, "random(seed {seed})"),
            Provenance::Inflated { spec, excluded, .. } => {
                write!(f, "inflated({} excluded, fraction {})", excluded.len(), spec.exclusion_fraction)
            }
            Provenance::Downsampled { source, requested, .. } => write!(f, "{source} limited to {requested}"),
        }
    }
}

/// Paragraphs drawn from a corpus, with their token union.
#[derive(Clone, Debug)]
pub struct CorpusSubset {
    /// Indices into the source corpus, ascending for filtered subsets and in
    /// draw order for random ones.
    pub indices: Vec<usize>,
    pub paragraphs: Vec<Paragraph>,
    pub tw: TokenSet,
    pub provenance: Provenance,
    /// Set when no paragraph survived the filter.
    pub empty_warning: bool,
}

impl CorpusSubset {
    fn assemble(corpus: &Corpus, indices: Vec<usize>, vocab: &Vocab, provenance: Provenance) -> Self {
        let paragraphs: Vec<Paragraph> = indices.iter().map(|&i| corpus.paragraphs()[i].clone()).collect();
        let tw = union_tokens(&paragraphs, vocab);
        let empty_warning = paragraphs.is_empty() && !matches!(provenance, Provenance::Random { .. });
        Self { indices, paragraphs, tw, provenance, empty_warning }
    }

    /// `W_S`.
    pub fn len(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paragraphs.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.paragraphs.iter().map(|p| p.text.as_str())
    }

    /// Uniform sample of `min(size, W_S)` of these paragraphs without
    /// replacement, in draw order.
    pub fn downsample(&self, corpus: &Corpus, size: usize, seed: u64, vocab: &Vocab) -> CorpusSubset {
        let mut rng = seeded(seed);
        let picks = partial_fisher_yates(self.len(), size.min(self.len()), &mut rng);
        let indices = picks.into_iter().map(|j| self.indices[j]).collect();
        let provenance = Provenance::Downsampled { source: Box::new(self.provenance.clone()), seed, requested: size };
        CorpusSubset::assemble(corpus, indices, vocab, provenance)
    }

    pub fn manifest(&self, corpus: &Corpus) -> SubsetManifest {
        SubsetManifest {
            corpus_digest: corpus.digest(),
            corpus_len: corpus.len(),
            provenance: self.provenance.clone(),
            indices: self.indices.clone(),
        }
    }
}

/// Union of the non-special tokens of `paragraphs`, with frequencies.
fn union_tokens(paragraphs: &[Paragraph], vocab: &Vocab) -> TokenSet {
    TokenSet::counted(paragraphs.iter().flat_map(|p| p.content_tokens(vocab)))
}

/// Indices of paragraphs whose every non-special token is allowed.
fn filter_indices(corpus: &Corpus, allowed: &[bool], vocab: &Vocab) -> Vec<usize> {
    corpus
        .paragraphs()
        .par_iter()
        .enumerate()
        .filter(|(_, p)| p.content_tokens(vocab).all(|t| allowed.get(t as usize).copied().unwrap_or(false)))
        .map(|(i, _)| i)
        .collect()
}

pub fn build_custom_subset(corpus: &Corpus, allowed: &TokenSet, vocab: &Vocab) -> Result<CorpusSubset, CorpusError> {
    if allowed.is_empty() {
        return Err(CorpusError::EmptyAllowedSet);
    }
    let table = allowed.membership(vocab.len());
    let indices = filter_indices(corpus, &table, vocab);
    let provenance = Provenance::Custom { allowed_hash: allowed.digest(), allowed_len: allowed.len() };
    Ok(CorpusSubset::assemble(corpus, indices, vocab, provenance))
}

/// Uniform sample of `min(size, |corpus|)` paragraphs without replacement.
pub fn sample_random_subset(corpus: &Corpus, size: usize, seed: u64, vocab: &Vocab) -> CorpusSubset {
    let mut rng = seeded(seed);
    let indices = partial_fisher_yates(corpus.len(), size.min(corpus.len()), &mut rng);
    CorpusSubset::assemble(corpus, indices, vocab, Provenance::Random { seed, requested: size })
}

/// Removes a fraction of `tc` from the allowed vocabulary and filters the
/// corpus with what remains. Returns the subset; `T_M` is whatever results.
pub fn build_inflated_tm_subset(
    corpus: &Corpus,
    tc: &TokenSet,
    spec: &InflationSpec,
    vocab: &Vocab,
) -> Result<CorpusSubset, CorpusError> {
    let f = spec.exclusion_fraction;
    if !(0.0..=1.0).contains(&f) {
        return Err(CorpusError::InvalidFraction(f));
    }
    let counts = corpus.token_counts(vocab.len());
    let count = |t: TokenId| counts.get(t as usize).copied().unwrap_or(0);

    let mut ranked: Vec<TokenId> = tc.iter().collect();
    match spec.order {
        ExclusionOrder::Lowest => ranked.sort_by_key(|&t| (count(t), t)),
        ExclusionOrder::Highest => ranked.sort_by_key(|&t| (std::cmp::Reverse(count(t)), t)),
    }
    let n_excluded = ((f * tc.len() as f64).ceil() as usize).min(tc.len());
    let mut excluded: Vec<TokenId> = ranked[..n_excluded].to_vec();
    excluded.sort_unstable();

    let mut fillers: Vec<TokenId> =
        (0..vocab.len() as TokenId).filter(|&t| !vocab.is_special(t) && !tc.contains(t)).collect();
    if let Some(budget) = spec.filler_budget {
        fillers.retain(|&t| count(t) > 0);
        fillers.sort_by_key(|&t| (std::cmp::Reverse(count(t)), t));
        fillers.truncate(budget);
    }

    let mut table = vec![false; vocab.len()];
    for t in fillers {
        table[t as usize] = true;
    }
    for t in ranked[n_excluded..].iter() {
        table[*t as usize] = true;
    }
    let allowed = TokenSet::from_ids((0..table.len() as TokenId).filter(|&t| table[t as usize]));
    let indices = filter_indices(corpus, &table, vocab);
    let provenance = Provenance::Inflated {
        allowed_hash: allowed.digest(),
        allowed_len: allowed.len(),
        spec: spec.clone(),
        excluded,
    };
    Ok(CorpusSubset::assemble(corpus, indices, vocab, provenance))
}

/// Sidecar description sufficient to rebuild a subset from its corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetManifest {
    pub corpus_digest: String,
    pub corpus_len: usize,
    pub provenance: Provenance,
    pub indices: Vec<usize>,
}

impl SubsetManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, CorpusError> {
        toml::from_str(text).map_err(|e| CorpusError::Manifest(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// Hex SHA-256 of the serialized manifest.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Rebuilds the subset from the listed indices.
    pub fn reconstruct(&self, corpus: &Corpus, vocab: &Vocab) -> Result<CorpusSubset, CorpusError> {
        if corpus.len() != self.corpus_len {
            return Err(CorpusError::ManifestMismatch(format!(
                "corpus has {} paragraphs, manifest expects {}",
                corpus.len(),
                self.corpus_len
            )));
        }
        if corpus.digest() != self.corpus_digest {
            return Err(CorpusError::ManifestMismatch("corpus digest differs".into()));
        }
        if let Some(&bad) = self.indices.iter().find(|&&i| i >= corpus.len()) {
            return Err(CorpusError::ManifestMismatch(format!("index {bad} out of range")));
        }
        Ok(CorpusSubset::assemble(corpus, self.indices.clone(), vocab, self.provenance.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::word_vocab;

    fn corpus(v: &Vocab) -> Corpus {
        Corpus::from_texts(["w0 w1", "w1 w2 w3", "w4", "w0 w0 w0", "w2 w4"], v)
    }

    fn ids(v: &Vocab, words: &[&str]) -> TokenSet {
        words.iter().map(|w| v.id(w).unwrap()).collect()
    }

    #[test]
    fn custom_filter_keeps_only_fully_allowed_paragraphs() {
        let v = word_vocab(6);
        let c = corpus(&v);
        let s = build_custom_subset(&c, &ids(&v, &["w0", "w1", "w4"]), &v).unwrap();
        assert_eq!(s.indices, vec![0, 2, 3]);
        assert_eq!(s.tw, TokenSet::counted([5, 6, 9, 5, 5, 5]));
        assert!(!s.empty_warning);

        let none = build_custom_subset(&c, &ids(&v, &["w5"]), &v).unwrap();
        assert!(none.is_empty() && none.empty_warning);
        assert!(matches!(build_custom_subset(&c, &TokenSet::new(), &v), Err(CorpusError::EmptyAllowedSet)));
    }

    #[test]
    fn specials_do_not_block_paragraphs() {
        let v = word_vocab(3);
        let c = Corpus::from_texts(["w0 [MASK] w0", "w0 zz"], &v);
        let s = build_custom_subset(&c, &ids(&v, &["w0"]), &v).unwrap();
        // "zz" is [UNK], a special, so both paragraphs survive
        assert_eq!(s.indices, vec![0, 1]);
        assert_eq!(s.tw.len(), 1);
    }

    #[test]
    fn random_subset_is_reproducible_and_capped() {
        let v = word_vocab(6);
        let c = corpus(&v);
        let a = sample_random_subset(&c, 3, 42, &v);
        let b = sample_random_subset(&c, 3, 42, &v);
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.len(), 3);
        let mut all = sample_random_subset(&c, 99, 7, &v).indices;
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert!(sample_random_subset(&c, 0, 1, &v).is_empty());
    }

    #[test]
    fn downsample_draws_from_the_source_subset() {
        let v = word_vocab(6);
        let c = corpus(&v);
        let full = build_custom_subset(&c, &ids(&v, &["w0", "w1", "w4"]), &v).unwrap();
        let d = full.downsample(&c, 2, 5, &v);
        assert_eq!(d.len(), 2);
        assert!(d.indices.iter().all(|i| full.indices.contains(i)));
        assert_eq!(d.indices, full.downsample(&c, 2, 5, &v).indices);
        assert_eq!(full.downsample(&c, 10, 5, &v).len(), 3);
        let m = d.manifest(&c);
        let back = SubsetManifest::from_toml(&m.to_toml()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.reconstruct(&c, &v).unwrap().indices, d.indices);
    }

    #[test]
    fn inflation_extremes() {
        let v = word_vocab(6);
        let c = corpus(&v);
        let tc = ids(&v, &["w0", "w2", "w4"]);
        let keep_all = InflationSpec { exclusion_fraction: 0.0, filler_budget: None, order: ExclusionOrder::Lowest };
        let s = build_inflated_tm_subset(&c, &tc, &keep_all, &v).unwrap();
        assert_eq!(s.len(), c.len());

        let drop_all = InflationSpec { exclusion_fraction: 1.0, ..keep_all.clone() };
        let s = build_inflated_tm_subset(&c, &tc, &drop_all, &v).unwrap();
        assert_eq!(s.indices, vec![]);
        assert!(s.empty_warning);
        assert!(matches!(
            build_inflated_tm_subset(&c, &tc, &InflationSpec { exclusion_fraction: 1.5, ..keep_all }, &v),
            Err(CorpusError::InvalidFraction(_))
        ));
    }

    #[test]
    fn inflation_excludes_rarest_tc_tokens_first() {
        let v = word_vocab(6);
        let c = corpus(&v);
        // counts: w0 4, w2 2, w4 2; one third of three is one token: w2 (tie with w4, lower id)
        let tc = ids(&v, &["w0", "w2", "w4"]);
        let spec = InflationSpec { exclusion_fraction: 1.0 / 3.0, filler_budget: None, order: ExclusionOrder::Lowest };
        let s = build_inflated_tm_subset(&c, &tc, &spec, &v).unwrap();
        assert_eq!(s.indices, vec![0, 2, 3]);
        match &s.provenance {
            Provenance::Inflated { excluded, .. } => assert_eq!(excluded, &vec![v.id("w2").unwrap()]),
            p => panic!("unexpected provenance {p}"),
        }
        let high = InflationSpec { order: ExclusionOrder::Highest, ..spec };
        let s = build_inflated_tm_subset(&c, &tc, &high, &v).unwrap();
        assert_eq!(s.indices, vec![1, 2, 4]);
    }

    #[test]
    fn filler_budget_limits_non_tc_tokens() {
        let v = word_vocab(6);
        let c = corpus(&v);
        let tc = ids(&v, &["w0"]);
        // fillers ranked by corpus count: w1 2, w2 2, w4 2, w3 1
        let spec = InflationSpec { exclusion_fraction: 0.0, filler_budget: Some(1), order: ExclusionOrder::Lowest };
        let s = build_inflated_tm_subset(&c, &tc, &spec, &v).unwrap();
        assert_eq!(s.indices, vec![0, 3]);
    }

    #[test]
    fn manifest_round_trip_rebuilds_subset() {
        let v = word_vocab(6);
        let c = corpus(&v);
        for s in [
            sample_random_subset(&c, 3, 42, &v),
            build_custom_subset(&c, &ids(&v, &["w0", "w1"]), &v).unwrap(),
            build_inflated_tm_subset(
                &c,
                &ids(&v, &["w0", "w4"]),
                &InflationSpec { exclusion_fraction: 0.5, filler_budget: Some(2), order: ExclusionOrder::Lowest },
                &v,
            )
            .unwrap(),
        ] {
            let m = s.manifest(&c);
            let parsed = SubsetManifest::from_toml(&m.to_toml()).unwrap();
            assert_eq!(parsed, m);
            assert_eq!(parsed.digest(), m.digest());
            let r = parsed.reconstruct(&c, &v).unwrap();
            assert_eq!(r.indices, s.indices);
            assert_eq!(r.tw, s.tw);
        }
        let other = Corpus::from_texts(["w0"], &v);
        assert!(sample_random_subset(&c, 2, 1, &v).manifest(&c).reconstruct(&other, &v).is_err());
    }
}
