//! Whitespace tokenizer and sentence splitter shared by every text metric.

use alloc::string::String;
use alloc::vec::Vec;

/// Split on Unicode whitespace and strip leading/trailing punctuation.
/// Tokens that are pure punctuation are dropped.
pub fn tokens(text: &str) -> Vec<&str> {
    text.split(char::is_whitespace)
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Case-folded tokens.
pub fn folded_tokens(text: &str) -> Vec<String> {
    tokens(text).into_iter().map(str::to_lowercase).collect()
}

pub fn word_count(text: &str) -> usize {
    tokens(text).len()
}

/// Sentences end at `.`, `!` or `?` followed by whitespace or end of text.
/// Segments without any word are not sentences.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = match iter.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                push_sentence(&mut out, &text[start..end]);
                start = end;
            }
        }
    }
    push_sentence(&mut out, &text[start..]);
    out
}

fn push_sentence<'a>(out: &mut Vec<&'a str>, segment: &'a str) {
    let s = segment.trim();
    if !tokens(s).is_empty() {
        out.push(s);
    }
}

pub fn sentence_count(text: &str) -> usize {
    sentences(text).len()
}
