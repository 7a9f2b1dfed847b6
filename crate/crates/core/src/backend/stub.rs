use super::{Backend, BackendError, CompletionRequest};
use crate::engine::{CUE, QA_INSTRUCTION_PREFIX, SECTION_SEPARATOR};
use crate::segment::find_boundaries;
use crate::tokenizer::TokenizerHandle;

/// Deterministic lead-sentence extractor.
///
/// Returns the longest run of leading sentences of the prompt's input section
/// that fits `max_tokens`. Temperature and seed are ignored.
pub struct ExtractiveStub {
    tokenizer: TokenizerHandle,
}

impl ExtractiveStub {
    pub fn new(tokenizer: TokenizerHandle) -> Self {
        Self { tokenizer }
    }

    pub fn lead(&self, input: &str, max_tokens: usize) -> String {
        let input = input.trim();
        if self.tokenizer.count(input) <= max_tokens {
            return input.to_owned();
        }
        let best = find_boundaries(input)
            .into_iter()
            .map(|b| input[..b.offset].trim_end())
            .take_while(|prefix| self.tokenizer.count(prefix) <= max_tokens)
            .last();
        match best {
            Some(prefix) if !prefix.is_empty() => prefix.to_owned(),
            _ => self
                .tokenizer
                .truncate_end(input, max_tokens)
                .trim_end()
                .to_owned(),
        }
    }
}

/// The text-to-summarize part of an assembled prompt: after the section
/// separator, before any question instruction and the cue.
pub fn prompt_input_section(prompt: &str) -> &str {
    let body = prompt
        .find(SECTION_SEPARATOR)
        .map(|i| &prompt[i + SECTION_SEPARATOR.len()..])
        .unwrap_or(prompt);
    let body = body
        .strip_suffix(CUE)
        .and_then(|b| b.strip_suffix('\n'))
        .unwrap_or(body);
    match body.rfind(&format!("\n{QA_INSTRUCTION_PREFIX}")) {
        Some(i) => &body[..i],
        None => body,
    }
}

impl Backend for ExtractiveStub {
    fn name(&self) -> &str {
        "extractive_stub"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        request.validate()?;
        Ok(self.lead(prompt_input_section(&request.prompt), request.max_tokens))
    }
}
