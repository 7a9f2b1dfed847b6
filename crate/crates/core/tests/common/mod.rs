//! Fixtures and oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use booktree_core::backend::{Backend, BackendError, CompletionRequest};
use booktree_core::{BookDocument, Tokenizer};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const WORDS: &[&str] = &[
    "the", "a", "river", "house", "lantern", "winter", "road", "she", "he", "they", "walked", "said",
    "under", "over", "quietly", "morning", "letter", "garden", "stone", "bridge", "mother", "captain",
    "village", "storm", "bread", "window", "remembered", "forgot", "carried", "silver", "old", "young",
    "across", "towards", "because", "although", "never", "always", "field", "horse", "market", "door",
    "open", "closed", "light", "shadow", "north", "south", "fire", "water", "ship", "harbour", "wind",
    "song", "voice", "hand", "eyes", "looked", "waited", "answered", "strange", "familiar", "long",
    "short", "evening", "night", "day", "year", "first", "last", "between", "beyond", "inside", "small",
    "great", "ancient", "quiet", "sudden", "slowly", "again", "without", "within", "story", "promise",
];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(6..24);
    let mut words: Vec<String> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())].to_owned()).collect();
    let mut first = words[0].chars();
    words[0] = first.next().unwrap().to_uppercase().chain(first).collect();
    if n > 10 && rng.random_bool(0.4) {
        let at = rng.random_range(3..n - 3);
        words[at].push(',');
    }
    let end = [".", ".", ".", "?", "!"][rng.random_range(0..5)];
    let s = words.join(" ") + end;
    if rng.random_bool(0.1) {
        format!("\u{201c}{s}\u{201d}")
    } else {
        s
    }
}

/// Generates prose of roughly `target_tokens` heuristic tokens with chapter
/// headings and paragraphs of varying length. When `matter` is set the body
/// is wrapped in a short licence header and footer.
pub fn synthetic_text(seed: u64, target_tokens: usize, tokenizer: &dyn Tokenizer, matter: bool) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paragraphs = Vec::new();
    let mut tokens = 0;
    let mut chapter = 0;
    while tokens < target_tokens {
        if paragraphs.is_empty() || rng.random_bool(0.03) {
            chapter += 1;
            let heading = format!("CHAPTER {chapter}");
            tokens += tokenizer.count(&heading);
            paragraphs.push(heading);
        }
        let n = rng.random_range(1..9);
        let p = (0..n).map(|_| sentence(&mut rng)).collect::<Vec<_>>().join(" ");
        tokens += tokenizer.count(&p);
        paragraphs.push(p);
    }
    let body = paragraphs.join("\n\n");
    if matter {
        format!(
            "*** START OF THE PROJECT GUTENBERG EBOOK SYNTHETIC {seed} ***\n\n{body}\n\nTHE END\n\n*** END OF THE PROJECT GUTENBERG EBOOK SYNTHETIC {seed} ***\n"
        )
    } else {
        body
    }
}

pub fn synthetic_book(seed: u64, target_tokens: usize, tokenizer: &dyn Tokenizer) -> BookDocument {
    let text = synthetic_text(seed, target_tokens, tokenizer, false);
    BookDocument::new(format!("synthetic-{seed}"), format!("Synthetic {seed}"), &text, BTreeMap::new())
}

/// Forwards to an inner backend and keeps every request.
pub struct Recording<B> {
    pub inner: B,
    pub requests: Mutex<Vec<CompletionRequest>>,
}

impl<B> Recording<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            requests: Mutex::new(Vec::new()),
        }
    }
}

impl<B: Backend> Backend for Recording<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        self.requests.lock().push(request.clone());
        self.inner.complete(request)
    }
}

/// Pearson chi-square goodness of fit; returns (statistic, p-value).
pub fn chi_square(observed: &[u64], expected_probs: &[f64]) -> (f64, f64) {
    assert_eq!(observed.len(), expected_probs.len());
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(expected_probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (observed.len() - 1).max(1) as f64;
    let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
    (stat, p)
}

/// Longest common subsequence by exhaustive subsequence enumeration of the
/// shorter side. Only for short inputs.
pub fn lcs_exhaustive<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let picked = short.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, t)| t);
        let mut pos = 0;
        let mut ok = true;
        for t in picked {
            match long[pos..].iter().position(|x| x == t) {
                Some(k) => pos += k + 1,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            best = len;
        }
    }
    best
}
