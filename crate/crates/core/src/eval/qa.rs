use std::io::Write;

use serde::{Deserialize, Serialize};

/// One answer for external QA scorers (BLEU, METEOR, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPrediction {
    pub question_id: String,
    pub prediction: String,
    pub references: Vec<String>,
}

/// Writes predictions as JSONL.
pub fn write_predictions<W: Write>(mut out: W, predictions: &[QaPrediction]) -> std::io::Result<()> {
    for p in predictions {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
