//! The shared tokenizer: lowercase, split on every non-alphanumeric
//! character, drop empty fragments. Corpus filters, the inverted index,
//! span-length limits and the default providers all count tokens this way.

use std::ops::Range;

/// Byte ranges of each token in `text`, in order.
pub fn token_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            spans.push(s..i);
        }
    }
    if let Some(s) = start {
        spans.push(s..text.len());
    }
    spans
}

pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text)
        .into_iter()
        .map(|r| text[r].to_lowercase())
        .collect()
}

pub fn count_tokens(text: &str) -> usize {
    token_spans(text).len()
}

/// Stable 64-bit FNV-1a, used wherever a hash must not change between
/// builds or platforms.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}
