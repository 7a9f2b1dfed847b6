use serde::{Deserialize, Serialize};

use super::{qa_instruction, ContextStore, CONTEXT_SEPARATOR, CUE, SECTION_SEPARATOR};
use crate::model::{TaskNode, TokenBudget};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPayload {
    /// Context actually included, oldest first; the first entry may be a
    /// truncated tail of the original summary.
    pub previous_context: Vec<String>,
    pub input_text: String,
    pub question: Option<String>,
    pub cue: String,
    pub assembled: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error(
        "input of node `{node}` needs {tokens} tokens but only {available} are available \
         after reserving {limit} for the summary"
    )]
    InputTooLong {
        node: String,
        tokens: usize,
        available: usize,
        limit: usize,
    },
}

/// Renders the prompt grammar.
pub fn render_prompt(context: &[&str], input_text: &str, question: Option<&str>) -> String {
    let mut out = context.join(CONTEXT_SEPARATOR);
    out.push_str(SECTION_SEPARATOR);
    out.push_str(input_text);
    if let Some(q) = question {
        out.push('\n');
        out.push_str(&qa_instruction(q));
    }
    out.push('\n');
    out.push_str(CUE);
    out
}

/// Builds the prompt for `node`, fitting previous context into what the
/// window leaves after the input and a maximal-length summary.
///
/// Context is cut from the front: whole summaries are dropped while the
/// later ones alone still overflow, then the oldest survivor keeps as many
/// trailing tokens as fit. A survivor cut to nothing is dropped.
pub fn assemble_prompt(
    node: &TaskNode,
    context: &ContextStore,
    input_text: &str,
    question: Option<&str>,
    budget: &TokenBudget,
    tokenizer: &dyn Tokenizer,
) -> Result<PromptPayload, PromptError> {
    let limit = budget.summary_limit(node.height);
    let available = budget.context_window.saturating_sub(limit);
    let count = |ctx: &[&str]| tokenizer.count(&render_prompt(ctx, input_text, question));

    let bare = count(&[]);
    if bare > available {
        return Err(PromptError::InputTooLong {
            node: node.id.to_string(),
            tokens: bare,
            available,
            limit,
        });
    }

    let all = context.texts_at(node.depth);
    // smallest k such that all[k..] fits; fitting is monotone in k
    let (mut lo, mut hi) = (0usize, all.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if count(&all[mid..]) <= available {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let keep = lo;
    let mut chosen: Vec<&str> = all[keep..].to_vec();

    if keep > 0 {
        let survivor = all[keep - 1];
        let total = tokenizer.count(survivor);
        // most trailing tokens of the survivor that still fit
        let (mut lo, mut hi) = (0usize, total);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            let mut candidate = vec![tokenizer.keep_tail(survivor, mid)];
            candidate.extend_from_slice(&chosen);
            if count(&candidate) <= available {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let tail = tokenizer.keep_tail(survivor, lo);
        if !tail.is_empty() {
            chosen.insert(0, tail);
        }
    }

    let assembled = render_prompt(&chosen, input_text, question);
    let token_count = tokenizer.count(&assembled);
    debug_assert!(token_count <= available);
    Ok(PromptPayload {
        previous_context: chosen.into_iter().map(str::to_owned).collect(),
        input_text: input_text.to_owned(),
        question: question.map(str::to_owned),
        cue: CUE.to_owned(),
        assembled,
        token_count,
    })
}
