//! Recursive summarization of book-length documents.
//!
//! A book is decomposed into a tree of summarization tasks: leaves summarize
//! ~600-token passages of the original text, internal nodes summarize the
//! concatenation of their children's summaries, and every task also sees the
//! earlier summaries written at its own depth. This crate plans such trees,
//! executes them against a completion backend, samples training tasks,
//! stores human labels, and computes the evaluation statistics.

pub mod backend;
pub mod curriculum;
pub mod engine;
pub mod eval;
pub mod feedback;
pub mod model;
pub mod segment;
pub mod tokenizer;
pub mod validate;
pub mod workspace;

pub use model::*;
pub use tokenizer::{default_tokenizer, tokenizer_by_name, HeuristicTokenizer, Tokenizer, TokenizerHandle};
pub use validate::{validate_tree, Violation};
