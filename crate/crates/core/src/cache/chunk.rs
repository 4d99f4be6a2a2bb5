//! Document chunking: one chunk per paragraph, with sentence and then word
//! splitting for paragraphs above the token cap.

use crate::model::{count_tokens, tokens_for_words};

/// Paragraphs are separated by one or more blank lines.
pub fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line.trim_end());
        }
    }
    if !current.is_empty() {
        out.push(current.join("\n"));
    }
    out
}

/// Splits after `.`, `!` or `?` (plus closing quotes or brackets) when
/// followed by whitespace or the end of text.
pub fn sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut end = i + 1;
            while end < chars.len() && matches!(chars[end], '"' | '\'' | ')' | ']' | '.' | '!' | '?') {
                end += 1;
            }
            if end == chars.len() || chars[end].is_whitespace() {
                push_trimmed(&mut out, &chars[start..end]);
                start = end;
                i = end;
                continue;
            }
        }
        i += 1;
    }
    push_trimmed(&mut out, &chars[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    if !s.is_empty() {
        out.push(s);
    }
}

/// Largest word count whose token estimate stays within `cap`.
fn words_within(cap: u64) -> usize {
    let mut w = (cap * 10 / 13) as usize;
    while w > 1 && tokens_for_words(w as u64) > cap {
        w -= 1;
    }
    w.max(1)
}

/// Chunks of at most `cap` tokens (a single word may exceed a cap below 2).
pub fn chunk_document(text: &str, cap: u64) -> Vec<String> {
    let cap = cap.max(1);
    let mut chunks = Vec::new();
    for para in paragraphs(text) {
        let flat = para.split_whitespace().collect::<Vec<_>>().join(" ");
        if count_tokens(&flat) <= cap {
            chunks.push(flat);
            continue;
        }
        let mut current = String::new();
        for sentence in sentences(&para) {
            if count_tokens(&sentence) > cap {
                if !current.is_empty() {
                    chunks.push(std::mem::take(&mut current));
                }
                let words: Vec<&str> = sentence.split_whitespace().collect();
                for piece in words.chunks(words_within(cap)) {
                    chunks.push(piece.join(" "));
                }
                continue;
            }
            let candidate = if current.is_empty() {
                sentence.clone()
            } else {
                format!("{current} {sentence}")
            };
            if count_tokens(&candidate) <= cap {
                current = candidate;
            } else {
                chunks.push(std::mem::replace(&mut current, sentence));
            }
        }
        if !current.is_empty() {
            chunks.push(current);
        }
    }
    chunks
}
