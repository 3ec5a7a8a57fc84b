//! WordPiece tokenization with the uncased BERT conventions and fixed-length
//! model input encoding.

mod vocab;
mod wordpiece;

pub use vocab::{SpecialIds, TokenId, Vocab, BERT_VOCAB_SIZE, CLS, MASK, PAD, SEP, UNK};
pub use wordpiece::{normalize, segment_word, split_words, tokenize, tokenize_ids, MAX_WORD_CHARS};

use thiserror::Error;

/// Model input length.
pub const MAX_SEQ_LEN: usize = 128;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot read vocabulary {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("vocabulary has {found} tokens, expected {expected}")]
    WrongSize { expected: usize, found: usize },
    #[error("token {token:?} appears on lines {first} and {second}")]
    DuplicateToken { token: String, first: usize, second: usize },
    #[error("empty token on line {line}")]
    EmptyToken { line: usize },
    #[error("vocabulary lacks special token {0}")]
    MissingSpecial(&'static str),
}

/// Fixed-length token ids with an attention mask.
///
/// Layout: `[CLS]`, content pieces, `[SEP]`, then `[PAD]` to the full length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedSequence {
    pub ids: Vec<TokenId>,
    pub attention_mask: Vec<bool>,
    /// Number of non-pad positions, `[CLS]` and `[SEP]` included.
    pub real_len: usize,
}

impl TokenizedSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Wraps already-segmented pieces, keeping the first `max_len - 2`.
    pub fn from_pieces(pieces: &[TokenId], specials: SpecialIds, max_len: usize) -> Self {
        assert!(max_len >= 2, "sequence length must leave room for [CLS] and [SEP]");
        let content = pieces.len().min(max_len - 2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(specials.cls);
        ids.extend_from_slice(&pieces[..content]);
        ids.push(specials.sep);
        let real_len = ids.len();
        ids.resize(max_len, specials.pad);
        let attention_mask = (0..max_len).map(|i| i < real_len).collect();
        Self { ids, attention_mask, real_len }
    }
}

/// Encodes `text` to the standard 128-position model input.
pub fn encode(text: &str, vocab: &Vocab) -> TokenizedSequence {
    encode_with_len(text, vocab, MAX_SEQ_LEN)
}

pub fn encode_with_len(text: &str, vocab: &Vocab, max_len: usize) -> TokenizedSequence {
    TokenizedSequence::from_pieces(&tokenize_ids(text, vocab), vocab.specials(), max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        let mut t: Vec<String> = [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
        t.extend(["the", "cat", "sat", "."].iter().map(|s| s.to_string()));
        Vocab::from_tokens(t, None).unwrap()
    }

    #[test]
    fn empty_text_encodes_to_cls_sep_and_padding() {
        let v = vocab();
        let s = encode("", &v);
        assert_eq!(s.len(), MAX_SEQ_LEN);
        assert_eq!(&s.ids[..2], &[2, 3]);
        assert!(s.ids[2..].iter().all(|&i| i == 0));
        assert_eq!(s.real_len, 2);
        assert_eq!(s.attention_mask.iter().filter(|&&m| m).count(), 2);
    }

    #[test]
    fn long_text_keeps_first_126_pieces() {
        let v = vocab();
        let text = "the cat sat . ".repeat(60);
        let s = encode(&text, &v);
        assert_eq!(s.real_len, MAX_SEQ_LEN);
        assert_eq!(s.ids[MAX_SEQ_LEN - 1], v.specials().sep);
        let pieces = tokenize_ids(&text, &v);
        assert_eq!(&s.ids[1..127], &pieces[..126]);
    }

    #[test]
    fn short_text_has_sep_right_after_content() {
        let v = vocab();
        let s = encode("The cat.", &v);
        assert_eq!(&s.ids[..5], &[2, 5, 6, 8, 3]);
        assert_eq!(v.decode(&s.ids[1..4]), ["the", "cat", "."]);
        assert!(s.attention_mask[..5].iter().all(|&m| m));
        assert!(!s.attention_mask[5]);
    }
}
