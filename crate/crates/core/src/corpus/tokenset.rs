use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use crate::tokenizer::TokenId;

/// Set of token ids, optionally with occurrence counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSet {
    ids: BTreeSet<TokenId>,
    freq: Option<BTreeMap<TokenId, u64>>,
}

impl TokenSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: impl IntoIterator<Item = TokenId>) -> Self {
        Self { ids: ids.into_iter().collect(), freq: None }
    }

    /// Counts every occurrence in `stream`.
    pub fn counted(stream: impl IntoIterator<Item = TokenId>) -> Self {
        let mut freq = BTreeMap::new();
        for id in stream {
            *freq.entry(id).or_insert(0u64) += 1;
        }
        Self { ids: freq.keys().copied().collect(), freq: Some(freq) }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.ids.contains(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.ids.iter().copied()
    }

    pub fn ids(&self) -> &BTreeSet<TokenId> {
        &self.ids
    }

    pub fn has_frequencies(&self) -> bool {
        self.freq.is_some()
    }

    /// Occurrence count of `id`; members of an uncounted set count once.
    pub fn frequency(&self, id: TokenId) -> u64 {
        match &self.freq {
            Some(f) => f.get(&id).copied().unwrap_or(0),
            None => u64::from(self.contains(id)),
        }
    }

    pub fn frequencies(&self) -> Option<&BTreeMap<TokenId, u64>> {
        self.freq.as_ref()
    }

    pub fn is_subset(&self, other: &TokenSet) -> bool {
        self.ids.is_subset(&other.ids)
    }

    /// Members of `self` absent from `other`, ascending.
    pub fn difference(&self, other: &TokenSet) -> Vec<TokenId> {
        self.ids.difference(&other.ids).copied().collect()
    }

    /// Membership table indexed by id, sized to cover `len` ids.
    pub fn membership(&self, len: usize) -> Vec<bool> {
        let top = self.ids.iter().next_back().map_or(0, |&m| m as usize + 1);
        let mut table = vec![false; len.max(top)];
        for &id in &self.ids {
            table[id as usize] = true;
        }
        table
    }

    /// Hex SHA-256 of the ascending ids as little-endian `u32`s.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for id in &self.ids {
            h.update(id.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl FromIterator<TokenId> for TokenSet {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        Self::from_ids(iter)
    }
}
