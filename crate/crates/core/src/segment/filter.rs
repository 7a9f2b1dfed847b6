//! Front- and back-matter removal.
//!
//! Recognized matter: Project Gutenberg start/end markers and license
//! paragraphs, copyright/publication paragraphs, tables of contents (five or
//! more consecutive short lines ending in a page or roman numeral), and
//! anything after a closing "THE END" line. Only a prefix and a suffix are
//! ever removed.

use std::ops::Range;

use regex::Regex;
use std::sync::LazyLock;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredText<'a> {
    /// The retained body; always `&input[body.clone()]`.
    pub text: &'a str,
    pub body: Range<usize>,
    /// Removed prefix and/or suffix ranges of the input.
    pub removed: Vec<Range<usize>>,
    pub warning: Option<String>,
}

/// Leading matter is only searched for in this fraction of the text.
const FRONT_WINDOW: f64 = 0.2;
const BACK_WINDOW: f64 = 0.2;
/// A non-matter paragraph at least this long ends the front-matter scan.
const STORY_PARAGRAPH_CHARS: usize = 300;

static GUTENBERG_START: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?mi)^.*\*{3}\s*START OF (THE|THIS) PROJECT GUTENBERG.*$").unwrap()
});
static GUTENBERG_END: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?mi)^.*(\*{3}\s*END OF (THE|THIS) PROJECT GUTENBERG|END OF (THE )?PROJECT GUTENBERG'?S?).*$")
        .unwrap()
});
static FRONT_MATTER_PARAGRAPH: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)(project gutenberg|gutenberg\.org|copyright|\(c\)\s*\d{4}|©|all rights reserved|\bisbn\b|printed in|first published|published by|this ebook is for the use of|license)",
    )
    .unwrap()
});
static CONTENTS_HEADING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*(table of )?contents\.?\s*$").unwrap());
static TOC_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^.{1,70}?[\s.]([0-9]{1,4}|[ivxlcdm]{1,7})\.?\s*$").unwrap()
});
static THE_END: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?mi)^[ \t]*the end\.?[ \t]*$").unwrap());

/// Removes recognized front and back matter.
pub fn filter_front_back_matter(input: &str) -> FilteredText<'_> {
    let len = input.len();
    let front_limit = ((len as f64) * FRONT_WINDOW) as usize;
    let back_limit = len - ((len as f64) * BACK_WINDOW) as usize;

    let mut start = 0usize;
    let mut end = len;

    if let Some(m) = GUTENBERG_START.find(input) {
        start = start.max(m.end());
    }
    if let Some(m) = GUTENBERG_END.find_at(input, start) {
        end = end.min(m.start());
    }

    start = start.max(leading_matter_end(input, start, front_limit.max(start)));
    if let Some(toc_end) = table_of_contents_end(input, start, front_limit.max(start)) {
        start = start.max(toc_end);
    }
    if let Some(m) = THE_END
        .find_iter(&input[..end])
        .filter(|m| m.start() >= back_limit.min(end))
        .last()
    {
        end = end.min(m.end());
    }

    if start == 0 && end == len {
        return FilteredText {
            text: input,
            body: 0..len,
            removed: Vec::new(),
            warning: None,
        };
    }

    // trim whitespace exposed by the cuts
    let mut s = start.min(end);
    let mut e = end;
    if start > 0 {
        s += input[s..e].len() - input[s..e].trim_start().len();
    }
    if end < len {
        e = s + input[s..e].trim_end().len();
    }

    if input[s..e].trim().is_empty() {
        return FilteredText {
            text: input,
            body: 0..len,
            removed: Vec::new(),
            warning: Some(
                "front/back matter heuristics would remove the entire text; keeping it unchanged"
                    .into(),
            ),
        };
    }

    let mut removed = Vec::new();
    if s > 0 {
        removed.push(0..s);
    }
    if e < len {
        removed.push(e..len);
    }
    FilteredText {
        text: &input[s..e],
        body: s..e,
        removed,
        warning: None,
    }
}

/// Paragraph ranges (separated by blank lines) starting at `from`.
fn paragraphs(input: &str, from: usize) -> impl Iterator<Item = Range<usize>> + '_ {
    let mut pos = from;
    std::iter::from_fn(move || {
        let rest = &input[pos..];
        let skip = rest.len() - rest.trim_start_matches(['\n', ' ', '\t']).len();
        let begin = pos + skip;
        if begin >= input.len() {
            return None;
        }
        let end = input[begin..]
            .find("\n\n")
            .map(|i| begin + i)
            .unwrap_or(input.len());
        pos = end;
        Some(begin..end)
    })
}

/// End of the last license/copyright paragraph near the start, if any.
fn leading_matter_end(input: &str, from: usize, limit: usize) -> usize {
    let mut cut = from;
    for para in paragraphs(input, from) {
        if para.start > limit {
            break;
        }
        let text = &input[para.clone()];
        if text.len() <= 2000 && FRONT_MATTER_PARAGRAPH.is_match(text) {
            cut = para.end;
        } else if text.len() > STORY_PARAGRAPH_CHARS {
            // prose has started
            break;
        }
    }
    cut
}

/// End of a table-of-contents block near the start, if any.
fn table_of_contents_end(input: &str, from: usize, limit: usize) -> Option<usize> {
    let mut run_start: Option<usize> = None;
    let mut run_len = 0usize;
    let mut best: Option<usize> = None;
    let mut offset = from;
    for line in input[from..].split_inclusive('\n') {
        let line_start = offset;
        offset += line.len();
        if line_start > limit {
            break;
        }
        let body = line.trim_end_matches('\n');
        if body.trim().is_empty() {
            // blank lines inside a contents listing do not break the run
            continue;
        }
        if CONTENTS_HEADING.is_match(body) {
            run_start.get_or_insert(line_start);
            continue;
        }
        if body.trim().len() <= 80 && TOC_LINE.is_match(body.trim()) {
            run_start.get_or_insert(line_start);
            run_len += 1;
            if run_len >= 5 {
                best = Some(offset);
            }
        } else {
            run_start = None;
            run_len = 0;
        }
    }
    best
}
