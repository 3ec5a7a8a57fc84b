//! Uncased BERT text normalization, word splitting and greedy longest-match
//! subword segmentation.

use unicode_categories::UnicodeCategories;
use unicode_normalization::UnicodeNormalization;

use crate::tokenizer::vocab::{TokenId, Vocab};

/// Words with more characters than this become a single `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

const CONTINUATION: &str = "##";

fn is_whitespace(c: char) -> bool {
    matches!(c, '\t' | '\n' | '\r') || c.is_whitespace()
}

fn is_control(c: char) -> bool {
    !matches!(c, '\t' | '\n' | '\r') && c.is_other()
}

fn is_cjk(c: char) -> bool {
    matches!(
        c as u32,
        0x4E00..=0x9FFF
            | 0x3400..=0x4DBF
            | 0x20000..=0x2A6DF
            | 0x2A700..=0x2B73F
            | 0x2B740..=0x2B81F
            | 0x2B920..=0x2CEAF
            | 0xF900..=0xFAFF
            | 0x2F800..=0x2FA1F
    )
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || c.is_punctuation()
}

/// Cleans, isolates CJK ideographs, strips accents and lowercases.
pub fn normalize(text: &str) -> String {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.chars() {
        if c == '\0' || c == '\u{fffd}' || is_control(c) {
            continue;
        }
        if is_cjk(c) {
            cleaned.push(' ');
            cleaned.push(c);
            cleaned.push(' ');
        } else if is_whitespace(c) {
            cleaned.push(' ');
        } else {
            cleaned.push(c);
        }
    }
    cleaned.nfd().filter(|c| !c.is_mark_nonspacing()).flat_map(char::to_lowercase).collect()
}

/// Splits normalized text on whitespace and isolates every punctuation
/// character as its own word.
pub fn split_words(normalized: &str) -> Vec<&str> {
    let mut words = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in normalized.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                words.push(&normalized[s..i]);
            }
        } else if is_punctuation(c) {
            if let Some(s) = start.take() {
                words.push(&normalized[s..i]);
            }
            words.push(&normalized[i..i + c.len_utf8()]);
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        words.push(&normalized[s..]);
    }
    words
}

/// Greedy longest-prefix segmentation of one word. Pushes `[UNK]` alone when
/// any remainder has no matching piece or the word is too long.
pub fn segment_word(word: &str, vocab: &Vocab, out: &mut Vec<TokenId>) {
    let unk = vocab.specials().unk;
    let boundaries: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
    let n_chars = boundaries.len() - 1;
    if n_chars > MAX_WORD_CHARS {
        out.push(unk);
        return;
    }
    let mark = out.len();
    let mut buf = String::with_capacity(word.len() + CONTINUATION.len());
    let mut start = 0;
    while start < n_chars {
        let mut end = n_chars;
        let mut found = None;
        while end > start {
            buf.clear();
            if start > 0 {
                buf.push_str(CONTINUATION);
            }
            buf.push_str(&word[boundaries[start]..boundaries[end]]);
            if let Some(id) = vocab.id(&buf) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        match found {
            Some(id) => {
                out.push(id);
                start = end;
            }
            None => {
                out.truncate(mark);
                out.push(unk);
                return;
            }
        }
    }
}

/// Full text to subword ids, without special tokens or truncation.
pub fn tokenize_ids(text: &str, vocab: &Vocab) -> Vec<TokenId> {
    let normalized = normalize(text);
    let mut ids = Vec::new();
    for word in split_words(&normalized) {
        segment_word(word, vocab, &mut ids);
    }
    ids
}

/// Full text to subword strings.
pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<String> {
    tokenize_ids(text, vocab).into_iter().map(|id| vocab.token(id).unwrap_or_default().to_string()).collect()
}
