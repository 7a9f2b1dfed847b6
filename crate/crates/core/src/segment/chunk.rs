//! Splitting a text into parts of similar token length at boundaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::boundary::Boundary;
use crate::tokenizer::Tokenizer;

/// Half-width of the search window around each ideal cut, as a fraction of
/// the ideal chunk length.
pub const WINDOW_FRACTION: f64 = 0.10;
/// Range of the seeded perturbation of each cut target, as a fraction of the
/// ideal chunk length.
pub const JITTER_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChunkError {
    #[error("cannot split into {0} chunks")]
    BadChunkCount(usize),
    #[error("no boundary inside the window for cut {cut} of {cuts}")]
    InsufficientBoundaries { cut: usize, cuts: usize },
}

/// Splits `text` into `n_chunks` consecutive pieces that concatenate back to
/// `text`. `boundaries` are offsets relative to `text`.
pub fn chunkify_text<'a>(
    text: &'a str,
    n_chunks: usize,
    boundaries: &[Boundary],
    seed: u64,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<&'a str>, ChunkError> {
    let weights = vec![1usize; n_chunks];
    let cuts = weighted_cuts(text, &weights, boundaries, seed, tokenizer)?;
    Ok(pieces(text, &cuts))
}

/// Slices `text` at `cuts` (interior offsets, increasing).
pub fn pieces<'a>(text: &'a str, cuts: &[usize]) -> Vec<&'a str> {
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut prev = 0;
    for &c in cuts.iter().chain(std::iter::once(&text.len())) {
        out.push(&text[prev..c]);
        prev = c;
    }
    out
}

/// Cut offsets splitting `text` into `weights.len()` pieces whose token
/// lengths are proportional to `weights`.
///
/// For each cut the window of ±[`WINDOW_FRACTION`] of the ideal piece length
/// around the proportional target is searched; the strongest boundary in it
/// wins, ties going to the boundary closest to a seeded perturbation of the
/// target.
pub fn weighted_cuts(
    text: &str,
    weights: &[usize],
    boundaries: &[Boundary],
    seed: u64,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<usize>, ChunkError> {
    let n = weights.len();
    if n == 0 || weights.contains(&0) {
        return Err(ChunkError::BadChunkCount(n));
    }
    if n == 1 {
        return Ok(Vec::new());
    }

    // token position of every boundary, from per-segment counts
    let mut positions = Vec::with_capacity(boundaries.len());
    let mut prev = 0usize;
    let mut acc = 0usize;
    for b in boundaries {
        if b.offset <= prev || b.offset >= text.len() {
            continue;
        }
        acc += tokenizer.count(&text[prev..b.offset]);
        positions.push((acc as f64, *b));
        prev = b.offset;
    }
    let total = (acc + tokenizer.count(&text[prev..])) as f64;
    let weight_sum: usize = weights.iter().sum();
    let per_weight = total / weight_sum as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cuts = Vec::with_capacity(n - 1);
    let mut cum_weight = 0usize;
    let mut last_offset = 0usize;
    for k in 0..n - 1 {
        cum_weight += weights[k];
        let target = per_weight * cum_weight as f64;
        let ideal = per_weight * weights[k].min(weights[k + 1]) as f64;
        let half_window = (ideal * WINDOW_FRACTION).max(1.0);
        let jitter: f64 = rng.random_range(-1.0..=1.0) * JITTER_FRACTION * ideal;
        let aim = target + jitter;

        let best = positions
            .iter()
            .filter(|(pos, b)| (pos - target).abs() <= half_window && b.offset > last_offset)
            .max_by(|(pa, a), (pb, b)| {
                a.strength.cmp(&b.strength).then_with(|| {
                    // closer to the aim is better; earlier wins exact ties
                    (pb - aim)
                        .abs()
                        .total_cmp(&(pa - aim).abs())
                        .then(b.offset.cmp(&a.offset))
                })
            });
        match best {
            Some((_, b)) => {
                cuts.push(b.offset);
                last_offset = b.offset;
            }
            None => {
                return Err(ChunkError::InsufficientBoundaries {
                    cut: k + 1,
                    cuts: n - 1,
                })
            }
        }
    }
    Ok(cuts)
}

/// Cuts at the character boundary nearest each proportional target. Used only
/// when a text has too little whitespace to cut anywhere else.
pub fn forced_cuts(text: &str, weights: &[usize], tokenizer: &dyn Tokenizer) -> Vec<usize> {
    let n = weights.len();
    if n <= 1 || text.is_empty() {
        return Vec::new();
    }
    let total = tokenizer.count(text).max(1) as f64;
    let bytes_per_token = text.len() as f64 / total;
    let weight_sum: usize = weights.iter().sum();
    let mut cuts = Vec::with_capacity(n - 1);
    let mut cum = 0usize;
    let mut last = 0usize;
    for w in &weights[..n - 1] {
        cum += w;
        let mut at = ((total * cum as f64 / weight_sum as f64) * bytes_per_token) as usize;
        at = at.max(last + 1);
        while at < text.len() && !text.is_char_boundary(at) {
            at += 1;
        }
        if at >= text.len() {
            break;
        }
        cuts.push(at);
        last = at;
    }
    cuts
}
