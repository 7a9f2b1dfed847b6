//! Evaluation statistics: ROUGE, Likert aggregation, bootstrap error bars,
//! labeler agreement and length-controlled scores.

mod length;
mod qa;
mod rouge;
mod stats;

pub use length::{length_adjusted_score, LengthAdjustment, ScoredSummary};
pub use qa::{write_predictions, QaPrediction};
pub use rouge::{lcs_len, rouge_l, rouge_n, rouge_tokens, RougeScore};
pub use stats::{agreement_rate, bootstrap_sem, likert_aggregate, LikertAggregate};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no values to aggregate")]
    Empty,
    #[error("at least {needed} resamples are required, got {got}")]
    TooFewResamples { needed: usize, got: usize },
    #[error("at least {needed} items are required, got {got}")]
    TooFewItems { needed: usize, got: usize },
    #[error("unsupported n-gram order {0}")]
    BadOrder(usize),
    #[error("invalid item: {0}")]
    InvalidItem(String),
}
