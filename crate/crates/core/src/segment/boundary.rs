//! Candidate cut positions.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Cut preference, weakest first so that `Ord` ranks stronger boundaries higher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strength {
    Whitespace,
    Sentence,
    Paragraph,
    BlankLines,
    ChapterHeading,
}

/// A position where text may be cut. The offset is the first byte of the
/// following piece, so the separator stays with the preceding piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    pub offset: usize,
    pub strength: Strength,
}

static CHAPTER_HEADING: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?mi)^[ \t]*(chapter|part|book)[ \t]+([0-9]+|[ivxlcdm]+)\b").unwrap()
});

/// Structural boundaries of `text`: chapter headings, blank lines, single
/// newlines and sentence ends. Offsets are strictly increasing and exclude
/// `0` and `text.len()`. Where several kinds coincide the strongest is kept.
pub fn find_boundaries(text: &str) -> Vec<Boundary> {
    let mut found: BTreeMap<usize, Strength> = BTreeMap::new();
    let mut add = |offset: usize, strength: Strength| {
        if offset == 0 || offset >= text.len() {
            return;
        }
        let slot = found.entry(offset).or_insert(strength);
        *slot = (*slot).max(strength);
    };

    for m in CHAPTER_HEADING.find_iter(text) {
        add(m.start(), Strength::ChapterHeading);
    }

    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\n' => {
                // extend over a run of newlines, tolerating spaces/tabs between them
                let mut newlines = 1;
                let mut j = i + 1;
                let mut end = j;
                while j < bytes.len() && matches!(bytes[j], b'\n' | b' ' | b'\t') {
                    if bytes[j] == b'\n' {
                        newlines += 1;
                        end = j + 1;
                    }
                    j += 1;
                }
                let strength = if newlines >= 2 {
                    Strength::BlankLines
                } else {
                    Strength::Paragraph
                };
                add(end, strength);
                i = end;
            }
            b'.' | b'!' | b'?' => {
                let mut j = i + 1;
                while j < bytes.len() && matches!(bytes[j], b'"' | b'\'' | b')' | b']') {
                    j += 1;
                }
                // closing curly quotes
                while text[j..].starts_with('\u{201d}') || text[j..].starts_with('\u{2019}') {
                    j += 3;
                }
                let ws_start = j;
                while j < bytes.len() && matches!(bytes[j], b' ' | b'\t') {
                    j += 1;
                }
                if j > ws_start && j < bytes.len() && bytes[j] != b'\n' {
                    add(j, Strength::Sentence);
                }
                i = j.max(i + 1);
            }
            _ => i += 1,
        }
    }

    found
        .into_iter()
        .map(|(offset, strength)| Boundary { offset, strength })
        .collect()
}

/// One boundary after every run of whitespace; the fallback when structural
/// boundaries are too sparse.
pub fn whitespace_boundaries(text: &str) -> Vec<Boundary> {
    let mut out = Vec::new();
    let mut prev_space = false;
    for (i, c) in text.char_indices() {
        let space = c.is_whitespace();
        if prev_space && !space && i > 0 {
            out.push(Boundary {
                offset: i,
                strength: Strength::Whitespace,
            });
        }
        prev_space = space;
    }
    out
}

/// Merges boundary lists, keeping the strongest kind per offset.
pub fn merge_boundaries(a: &[Boundary], b: &[Boundary]) -> Vec<Boundary> {
    let mut found: BTreeMap<usize, Strength> = BTreeMap::new();
    for bd in a.iter().chain(b) {
        let slot = found.entry(bd.offset).or_insert(bd.strength);
        *slot = (*slot).max(bd.strength);
    }
    found
        .into_iter()
        .map(|(offset, strength)| Boundary { offset, strength })
        .collect()
}
