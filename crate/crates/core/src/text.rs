//! Word-level pre-tokenization shared by the tokenizer, the corpus span
//! accounting and the entity matchers.
//!
//! A pre-token is either a maximal run of alphanumeric characters or a single
//! non-whitespace, non-alphanumeric character. Whitespace only separates.

/// One pre-token with its byte range in the source string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreToken<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub fn pretokenize(s: &str) -> Vec<PreToken<'_>> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, c) in s.char_indices() {
        if is_word_char(c) {
            if word_start.is_none() {
                word_start = Some(i);
            }
            continue;
        }
        if let Some(ws) = word_start.take() {
            out.push(PreToken {
                text: &s[ws..i],
                start: ws,
                end: i,
            });
        }
        if !c.is_whitespace() {
            let end = i + c.len_utf8();
            out.push(PreToken {
                text: &s[i..end],
                start: i,
                end,
            });
        }
    }
    if let Some(ws) = word_start {
        out.push(PreToken {
            text: &s[ws..],
            start: ws,
            end: s.len(),
        });
    }
    out
}

pub fn words(s: &str) -> Vec<&str> {
    pretokenize(s).into_iter().map(|t| t.text).collect()
}

/// Canonical whitespace form: pre-tokens joined by single spaces.
pub fn normalize(s: &str) -> String {
    words(s).join(" ")
}

/// Start indices of every occurrence of `needle` (a token sequence) in `hay`.
pub fn find_token_seq<S: AsRef<str>, N: AsRef<str>>(hay: &[S], needle: &[N]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    (0..=hay.len() - needle.len())
        .filter(|&i| {
            needle
                .iter()
                .zip(&hay[i..])
                .all(|(a, b)| a.as_ref() == b.as_ref())
        })
        .collect()
}
