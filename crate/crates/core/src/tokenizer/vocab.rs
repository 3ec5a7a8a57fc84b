use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::tokenizer::TokenizerError;

/// Size of the uncased BERT vocabulary.
pub const BERT_VOCAB_SIZE: usize = 30_522;

pub type TokenId = u32;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Ids of the five reserved tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: TokenId,
    pub unk: TokenId,
    pub cls: TokenId,
    pub sep: TokenId,
    pub mask: TokenId,
}

impl SpecialIds {
    pub fn all(&self) -> [TokenId; 5] {
        [self.pad, self.unk, self.cls, self.sep, self.mask]
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.all().contains(&id)
    }
}

/// Immutable token-string to id map with dense ids.
#[derive(Clone, Debug)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    specials: SpecialIds,
}

impl Vocab {
    /// Loads a newline-delimited vocabulary that must hold exactly
    /// [`BERT_VOCAB_SIZE`] tokens.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        Self::load_sized(path, Some(BERT_VOCAB_SIZE))
    }

    /// Loads a vocabulary file; `expected` pins the token count when given.
    pub fn load_sized(path: impl AsRef<Path>, expected: Option<usize>) -> Result<Self, TokenizerError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| TokenizerError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, expected)
    }

    /// Parses vocabulary text: one token per line, line index is the id.
    pub fn parse(text: &str, expected: Option<usize>) -> Result<Self, TokenizerError> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        let tokens: Vec<String> = if body.is_empty() {
            Vec::new()
        } else {
            body.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect()
        };
        Self::from_tokens(tokens, expected)
    }

    pub fn from_tokens(tokens: Vec<String>, expected: Option<usize>) -> Result<Self, TokenizerError> {
        if let Some(n) = expected {
            if tokens.len() != n {
                return Err(TokenizerError::WrongSize { expected: n, found: tokens.len() });
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(TokenizerError::EmptyToken { line: id });
            }
            if let Some(first) = index.insert(tok.clone(), id as TokenId) {
                return Err(TokenizerError::DuplicateToken { token: tok.clone(), first: first as usize, second: id });
            }
        }
        let find = |t: &'static str| index.get(t).copied().ok_or(TokenizerError::MissingSpecial(t));
        let specials = SpecialIds { pad: find(PAD)?, unk: find(UNK)?, cls: find(CLS)?, sep: find(SEP)?, mask: find(MASK)? };
        Ok(Self { tokens, index, specials })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.specials.contains(id)
    }

    /// Maps ids back to their token strings.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i).unwrap_or(UNK)).collect()
    }

    /// Newline-terminated file form, the inverse of [`Vocab::parse`].
    pub fn to_file_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }
}
