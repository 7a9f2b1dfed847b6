use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::{BookId, SummaryId};

/// An externally scored summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSummary {
    pub summary_id: SummaryId,
    pub length_tokens: usize,
    pub score: f64,
    pub book_id: BookId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthAdjustment {
    pub slope: f64,
    pub intercept: f64,
    /// Pearson correlation of score with length; absent if scores are constant.
    pub correlation: Option<f64>,
    pub mean_length: f64,
    pub raw_mean: f64,
    pub adjusted_mean: f64,
    /// False when lengths do not vary; the adjusted mean is then the raw mean.
    pub regression_defined: bool,
}

/// Regresses score on length by least squares and shifts every score to
/// what it would be at `target_length`.
pub fn length_adjusted_score(
    items: &[ScoredSummary],
    target_length: f64,
) -> Result<LengthAdjustment, EvalError> {
    if items.len() < 3 {
        return Err(EvalError::TooFewItems {
            needed: 3,
            got: items.len(),
        });
    }
    if let Some(bad) = items.iter().find(|i| i.length_tokens == 0 || !i.score.is_finite()) {
        return Err(EvalError::InvalidItem(format!(
            "summary {} has length {} and score {}",
            bad.summary_id, bad.length_tokens, bad.score
        )));
    }
    let n = items.len() as f64;
    let mean_x = items.iter().map(|i| i.length_tokens as f64).sum::<f64>() / n;
    let mean_y = items.iter().map(|i| i.score).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in items {
        let dx = i.length_tokens as f64 - mean_x;
        let dy = i.score - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Ok(LengthAdjustment {
            slope: 0.0,
            intercept: mean_y,
            correlation: None,
            mean_length: mean_x,
            raw_mean: mean_y,
            adjusted_mean: mean_y,
            regression_defined: false,
        });
    }
    let slope = sxy / sxx;
    Ok(LengthAdjustment {
        slope,
        intercept: mean_y - slope * mean_x,
        correlation: (syy > 0.0).then(|| sxy / (sxx * syy).sqrt()),
        mean_length: mean_x,
        raw_mean: mean_y,
        adjusted_mean: mean_y + slope * (target_length - mean_x),
        regression_defined: true,
    })
}
