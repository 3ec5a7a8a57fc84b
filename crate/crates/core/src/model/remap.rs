use crate::corpus::TokenSet;
use crate::tokenizer::{SpecialIds, TokenId, TokenizedSequence, Vocab};

/// Dense sub-vocabulary for reduced-embedding models: the special tokens
/// followed by an allowed token set, in ascending full-vocabulary id order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabRemap {
    to_full: Vec<TokenId>,
    to_reduced: Vec<Option<TokenId>>,
    specials: SpecialIds,
}

impl VocabRemap {
    pub fn new(vocab: &Vocab, allowed: &TokenSet) -> Self {
        let mut to_full: Vec<TokenId> = vocab.specials().all().to_vec();
        to_full.sort_unstable();
        to_full.extend(allowed.iter().filter(|&t| !vocab.is_special(t) && (t as usize) < vocab.len()));
        let mut to_reduced = vec![None; vocab.len()];
        for (r, &f) in to_full.iter().enumerate() {
            to_reduced[f as usize] = Some(r as TokenId);
        }
        let map = |id: TokenId| to_reduced[id as usize].expect("special is mapped");
        let s = vocab.specials();
        let specials =
            SpecialIds { pad: map(s.pad), unk: map(s.unk), cls: map(s.cls), sep: map(s.sep), mask: map(s.mask) };
        Self { to_full, to_reduced, specials }
    }

    /// Size of the reduced vocabulary, the model's `vocab_size`.
    pub fn len(&self) -> usize {
        self.to_full.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_full.is_empty()
    }

    /// Special token ids in the reduced numbering.
    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    /// Reduced id; tokens outside the sub-vocabulary become `[UNK]`.
    pub fn reduce(&self, id: TokenId) -> TokenId {
        self.to_reduced.get(id as usize).copied().flatten().unwrap_or(self.specials.unk)
    }

    pub fn expand(&self, id: TokenId) -> Option<TokenId> {
        self.to_full.get(id as usize).copied()
    }

    pub fn reduce_sequence(&self, seq: &TokenizedSequence) -> TokenizedSequence {
        TokenizedSequence {
            ids: seq.ids.iter().map(|&i| self.reduce(i)).collect(),
            attention_mask: seq.attention_mask.clone(),
            real_len: seq.real_len,
        }
    }
}
