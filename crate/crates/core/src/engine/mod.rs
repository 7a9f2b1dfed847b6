//! Tree execution.
//!
//! Nodes run in post-order (children left to right, then the parent). Every
//! node sees the summaries already written at its own depth as previous
//! context; internal nodes summarize their children's summaries joined by a
//! blank line.

mod context;
mod prompt;
mod provenance;
mod run;

pub use context::ContextStore;
pub use prompt::{assemble_prompt, render_prompt, PromptError, PromptPayload};
pub use provenance::{collect_depth_summaries, trace_provenance, Provenance, ProvenanceStep};
pub use run::{
    node_sample_seed, run_qa_tree, run_tree, Checkpoint, ExecutionEntry, Executor, Interrupted,
    RunError, RunOutcome, RunParams, RunState,
};

/// Separates previous-context summaries from each other.
pub const CONTEXT_SEPARATOR: &str = "\n----\n";
/// Separates previous context from the text to summarize.
pub const SECTION_SEPARATOR: &str = "\n====\n";
pub const CUE: &str = "TL;DR:";
/// Joins child summaries into an internal node's input.
pub const CHILD_JOINER: &str = "\n\n";
pub const QA_INSTRUCTION_PREFIX: &str = "Answer the following question based on the above passage, or reply with a summary of relevant information if no answer is found: ";

/// The question instruction inserted before the cue in question-answering runs.
pub fn qa_instruction(question: &str) -> String {
    format!("{QA_INSTRUCTION_PREFIX}{question}")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("unknown node `{0}`")]
    UnknownNode(crate::NodeId),
    #[error("node `{0}` has no summary")]
    MissingSummary(crate::NodeId),
    #[error("tree has no nodes at depth {0}")]
    EmptyDepth(u32),
}
