//! Token counting.
//!
//! All budget arithmetic goes through a [`Tokenizer`]. The default
//! [`HeuristicTokenizer`] needs no model assets: a token is a maximal run of
//! alphanumeric characters or a maximal run of other non-whitespace
//! characters. An exact BPE tokenizer can be plugged in behind the same trait.

use std::ops::Range;
use std::sync::Arc;

pub trait Tokenizer: Send + Sync {
    fn name(&self) -> &str;

    fn count(&self, text: &str) -> usize;

    /// Longest prefix of `text` holding at most `max` tokens.
    fn truncate_end<'a>(&self, text: &'a str, max: usize) -> &'a str {
        if self.count(text) <= max {
            return text;
        }
        let cuts: Vec<usize> = char_cuts(text);
        // largest cut whose prefix fits
        let (mut lo, mut hi) = (0usize, cuts.len() - 1);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.count(&text[..cuts[mid]]) <= max {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        &text[..cuts[lo]]
    }

    /// Longest suffix of `text` holding at most `max` tokens.
    fn keep_tail<'a>(&self, text: &'a str, max: usize) -> &'a str {
        if self.count(text) <= max {
            return text;
        }
        let cuts: Vec<usize> = char_cuts(text);
        // smallest cut whose suffix fits
        let (mut lo, mut hi) = (0usize, cuts.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.count(&text[cuts[mid]..]) <= max {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        &text[cuts[lo]..]
    }
}

fn char_cuts(text: &str) -> Vec<usize> {
    text.char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect()
}

/// Shared tokenizer handle.
pub type TokenizerHandle = Arc<dyn Tokenizer>;

#[derive(Debug, thiserror::Error)]
#[error("unknown tokenizer `{0}` (available: heuristic)")]
pub struct UnknownTokenizer(pub String);

/// Looks up a tokenizer by its configured name.
pub fn tokenizer_by_name(name: &str) -> Result<TokenizerHandle, UnknownTokenizer> {
    match name {
        "heuristic" | "" => Ok(Arc::new(HeuristicTokenizer)),
        other => Err(UnknownTokenizer(other.to_owned())),
    }
}

pub fn default_tokenizer() -> TokenizerHandle {
    Arc::new(HeuristicTokenizer)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct HeuristicTokenizer;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Space,
    Word,
    Punct,
}

fn class_of(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if c.is_alphanumeric() {
        Class::Word
    } else {
        Class::Punct
    }
}

impl HeuristicTokenizer {
    /// Byte ranges of the tokens in `text`.
    pub fn spans(text: &str) -> impl Iterator<Item = Range<usize>> + '_ {
        let mut chars = text.char_indices().peekable();
        std::iter::from_fn(move || {
            let (start, class) = loop {
                let (i, c) = chars.next()?;
                let class = class_of(c);
                if class != Class::Space {
                    break (i, class);
                }
            };
            let mut end = text.len();
            while let Some(&(i, c)) = chars.peek() {
                if class_of(c) != class {
                    end = i;
                    break;
                }
                chars.next();
            }
            Some(start..end)
        })
    }
}

impl Tokenizer for HeuristicTokenizer {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn count(&self, text: &str) -> usize {
        Self::spans(text).count()
    }

    fn truncate_end<'a>(&self, text: &'a str, max: usize) -> &'a str {
        match Self::spans(text).take(max).last() {
            Some(last) => &text[..last.end],
            None => "",
        }
    }

    fn keep_tail<'a>(&self, text: &'a str, max: usize) -> &'a str {
        if max == 0 {
            return "";
        }
        let spans: Vec<_> = Self::spans(text).collect();
        if spans.len() <= max {
            return text;
        }
        &text[spans[spans.len() - max].start..]
    }
}
