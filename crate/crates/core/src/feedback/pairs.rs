use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeedbackError;
use crate::model::SummaryId;

/// A pair as shown to the labeler: `a` on the left, `b` on the right.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PresentedPair {
    pub a: SummaryId,
    pub b: SummaryId,
}

impl PresentedPair {
    /// Order-independent key.
    pub fn key(&self) -> (SummaryId, SummaryId) {
        if self.a <= self.b {
            (self.a.clone(), self.b.clone())
        } else {
            (self.b.clone(), self.a.clone())
        }
    }
}

/// Every unordered pair of `summaries`, in input order, with left/right
/// placement drawn from `seed`.
pub fn make_comparison_set(summaries: &[SummaryId], seed: u64) -> Result<Vec<PresentedPair>, FeedbackError> {
    if !(2..=3).contains(&summaries.len()) {
        return Err(FeedbackError::Validation(format!(
            "a comparison set needs 2 or 3 summaries, got {}",
            summaries.len()
        )));
    }
    let distinct: BTreeSet<_> = summaries.iter().collect();
    if distinct.len() != summaries.len() {
        return Err(FeedbackError::Validation("duplicate summary ids in comparison set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..summaries.len() {
        for j in i + 1..summaries.len() {
            let (a, b) = (summaries[i].clone(), summaries[j].clone());
            out.push(if rng.random_bool(0.5) {
                PresentedPair { a: b, b: a }
            } else {
                PresentedPair { a, b }
            });
        }
    }
    Ok(out)
}

/// Information in a full ranking of `n` summaries, log2(n!) bits.
pub fn comparison_set_bits(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).log2()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[&str]) -> Vec<SummaryId> {
        xs.iter().map(|x| SummaryId::new(*x)).collect()
    }

    #[test]
    fn all_pairs() {
        let pairs = make_comparison_set(&ids(&["s1", "s2", "s3"]), 4).unwrap();
        let keys: Vec<_> = pairs.iter().map(|p| p.key()).collect();
        assert_eq!(
            keys,
            vec![
                (SummaryId::new("s1"), SummaryId::new("s2")),
                (SummaryId::new("s1"), SummaryId::new("s3")),
                (SummaryId::new("s2"), SummaryId::new("s3")),
            ]
        );
        assert_eq!(make_comparison_set(&ids(&["x", "y"]), 0).unwrap().len(), 1);
    }

    #[test]
    fn rejects_duplicates_and_bad_sizes() {
        assert!(make_comparison_set(&ids(&["x", "x"]), 0).is_err());
        assert!(make_comparison_set(&ids(&["x"]), 0).is_err());
        assert!(make_comparison_set(&ids(&["a", "b", "c", "d"]), 0).is_err());
    }

    #[test]
    fn order_depends_on_seed() {
        let s = ids(&["s1", "s2", "s3"]);
        let orders: BTreeSet<Vec<SummaryId>> = (0..32)
            .map(|seed| {
                make_comparison_set(&s, seed)
                    .unwrap()
                    .into_iter()
                    .map(|p| p.a)
                    .collect()
            })
            .collect();
        assert!(orders.len() > 1);
        assert_eq!(make_comparison_set(&s, 9).unwrap(), make_comparison_set(&s, 9).unwrap());
    }

    #[test]
    fn bits() {
        assert!((comparison_set_bits(3) - 6f64.log2()).abs() < 1e-12);
        assert!((comparison_set_bits(3) - 2.585).abs() < 1e-3);
        assert_eq!(comparison_set_bits(2), 1.0);
    }
}
