use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::{BookId, LabelKind, LabelRecord, Preference, SummaryId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertAggregate {
    pub mean: f64,
    /// Standard error across book means; absent with a single book.
    pub sem: Option<f64>,
    pub books: usize,
    pub per_book: BTreeMap<BookId, f64>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Averages ratings per book first, then reports the mean and standard
/// error of the book means.
pub fn likert_aggregate(ratings: &[(BookId, f64)]) -> Result<LikertAggregate, EvalError> {
    if ratings.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sums: BTreeMap<BookId, (f64, usize)> = BTreeMap::new();
    for (book, score) in ratings {
        let e = sums.entry(book.clone()).or_default();
        e.0 += score;
        e.1 += 1;
    }
    let per_book: BTreeMap<BookId, f64> = sums
        .into_iter()
        .map(|(b, (s, n))| (b, s / n as f64))
        .collect();
    let means: Vec<f64> = per_book.values().copied().collect();
    let sem = (means.len() > 1).then(|| sample_sd(&means) / (means.len() as f64).sqrt());
    Ok(LikertAggregate {
        mean: mean(&means),
        sem,
        books: means.len(),
        per_book,
    })
}

pub const MIN_RESAMPLES: usize = 100;

/// Standard deviation of the means of `resamples` bootstrap resamples.
pub fn bootstrap_sem(values: &[f64], resamples: usize, seed: u64) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    if resamples < MIN_RESAMPLES {
        return Err(EvalError::TooFewResamples {
            needed: MIN_RESAMPLES,
            got: resamples,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    Ok(sample_sd(&means))
}

/// Fraction of labeler pairs that prefer the same summary, over every
/// summary pair compared by at least two labelers.
///
/// Agreement is judged on the preferred summary, so presentation order does
/// not matter. Returns `None` when no pair has two labelers.
pub fn agreement_rate<'a>(labels: impl IntoIterator<Item = &'a LabelRecord>) -> Option<f64> {
    let mut votes: HashMap<(SummaryId, SummaryId), Vec<&SummaryId>> = HashMap::new();
    for r in labels {
        if let LabelKind::Comparison {
            summary_a,
            summary_b,
            preferred,
        } = &r.kind
        {
            let winner = match preferred {
                Preference::A => summary_a,
                Preference::B => summary_b,
            };
            let key = if summary_a <= summary_b {
                (summary_a.clone(), summary_b.clone())
            } else {
                (summary_b.clone(), summary_a.clone())
            };
            votes.entry(key).or_default().push(winner);
        }
    }
    let (mut agree, mut total) = (0usize, 0usize);
    for winners in votes.values().filter(|v| v.len() >= 2) {
        for i in 0..winners.len() {
            for j in i + 1..winners.len() {
                total += 1;
                agree += usize::from(winners[i] == winners[j]);
            }
        }
    }
    (total > 0).then(|| agree as f64 / total as f64)
}
