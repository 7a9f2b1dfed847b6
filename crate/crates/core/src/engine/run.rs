use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{assemble_prompt, ContextStore, PromptError, CHILD_JOINER};
use crate::backend::{Backend, BackendError, CompletionRequest};
use crate::model::{BookDocument, Clock, NodeId, NodeStatus, Producer, SummaryRecord, TaskNode, TaskTree, TreeId};
use crate::tokenizer::Tokenizer;
use crate::validate::{validate_tree, Violation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub temperature: f64,
    pub sample_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            sample_seed: 0,
            question: None,
        }
    }
}

/// One executed node, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionEntry {
    pub node_id: NodeId,
    pub depth: u32,
    pub height: u32,
    pub input_text: String,
    pub previous_context: Vec<String>,
    pub prompt_tokens: usize,
    pub summary_limit: usize,
    pub record: SummaryRecord,
}

/// Progress of one tree execution; everything needed to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub tree_id: TreeId,
    pub params: RunParams,
    pub entries: Vec<ExecutionEntry>,
}

impl RunState {
    pub fn new(tree_id: TreeId, params: RunParams) -> Self {
        Self {
            tree_id,
            params,
            entries: Vec::new(),
        }
    }

    pub fn summaries(&self) -> BTreeMap<NodeId, SummaryRecord> {
        self.entries
            .iter()
            .map(|e| (e.node_id.clone(), e.record.clone()))
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = &SummaryRecord> {
        self.entries.iter().map(|e| &e.record)
    }

    pub fn summary_of(&self, node: &NodeId) -> Option<&SummaryRecord> {
        self.entries
            .iter()
            .find(|e| &e.node_id == node)
            .map(|e| &e.record)
    }

    pub fn is_complete(&self, tree: &TaskTree) -> bool {
        self.entries.len() == tree.nodes.len()
    }

    /// Backend calls spent by this run so far (one per executed node).
    pub fn backend_calls(&self) -> usize {
        self.entries.len()
    }

    /// Copy of `tree` with executed nodes marked summarized.
    pub fn apply_to(&self, tree: &TaskTree) -> TaskTree {
        let mut out = tree.clone();
        for e in &self.entries {
            if let Some(n) = out.nodes.get_mut(&e.node_id) {
                n.status = NodeStatus::Summarized;
            }
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("tree `{tree}` does not belong to book `{book}`")]
    WrongBook { tree: TreeId, book: String },
    #[error("tree failed validation: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidTree(Vec<Violation>),
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error("run state belongs to tree `{found}`, expected `{expected}`")]
    StateMismatch { expected: TreeId, found: TreeId },
    #[error("run state does not follow execution order at node `{0}`")]
    CorruptState(NodeId),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend failed at node `{node}`: {source}")]
    Backend {
        node: NodeId,
        #[source]
        source: BackendError,
    },
    #[error("budget violated at node `{node}`: {prompt_tokens} + {limit} > {window}")]
    Budget {
        node: NodeId,
        prompt_tokens: usize,
        limit: usize,
        window: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    /// The observer asked to stop; the state is resumable.
    Stopped,
}

/// Per-node sampling seed derived from the run seed.
pub fn node_sample_seed(run_seed: u64, node: &NodeId) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(node.as_str().as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Executes a tree against a backend.
pub struct Executor<'a> {
    tree: &'a TaskTree,
    book: &'a BookDocument,
    backend: &'a dyn Backend,
    tokenizer: &'a dyn Tokenizer,
    clock: &'a dyn Clock,
}

impl<'a> Executor<'a> {
    pub fn new(
        tree: &'a TaskTree,
        book: &'a BookDocument,
        backend: &'a dyn Backend,
        tokenizer: &'a dyn Tokenizer,
        clock: &'a dyn Clock,
    ) -> Result<Self, RunError> {
        if tree.book_id != book.id {
            return Err(RunError::WrongBook {
                tree: tree.id.clone(),
                book: book.id.to_string(),
            });
        }
        let violations = validate_tree(tree, book);
        if !violations.is_empty() {
            return Err(RunError::InvalidTree(violations));
        }
        Ok(Self {
            tree,
            book,
            backend,
            tokenizer,
            clock,
        })
    }

    fn input_for(&self, node: &TaskNode, done: &BTreeMap<NodeId, SummaryRecord>) -> String {
        match node.char_span {
            Some([s, e]) if node.is_leaf() => self.book.text[s..e].to_owned(),
            _ => node
                .children
                .iter()
                .map(|c| done[c].text.as_str())
                .collect::<Vec<_>>()
                .join(CHILD_JOINER),
        }
    }

    /// Runs every node not yet in `state`, calling `after_node` once per
    /// executed node. On error `state` keeps all completed nodes.
    pub fn run(
        &self,
        state: &mut RunState,
        mut after_node: impl FnMut(&RunState) -> ControlFlow<()>,
    ) -> Result<RunOutcome, RunError> {
        if state.tree_id != self.tree.id {
            return Err(RunError::StateMismatch {
                expected: self.tree.id.clone(),
                found: state.tree_id.clone(),
            });
        }
        if let Some(q) = &state.params.question {
            if q.trim().is_empty() {
                return Err(RunError::EmptyQuestion);
            }
        }
        let order = self.tree.postorder();
        for (entry, node) in state.entries.iter().zip(&order) {
            if entry.node_id != node.id {
                return Err(RunError::CorruptState(entry.node_id.clone()));
            }
        }

        let budget = &self.tree.budget;
        let mut context = ContextStore::new();
        let mut done = BTreeMap::new();
        for e in &state.entries {
            context.push(e.depth, e.record.clone());
            done.insert(e.node_id.clone(), e.record.clone());
        }

        for node in order.into_iter().skip(state.entries.len()) {
            let input = self.input_for(node, &done);
            let payload = assemble_prompt(
                node,
                &context,
                &input,
                state.params.question.as_deref(),
                budget,
                self.tokenizer,
            )?;
            let limit = budget.summary_limit(node.height);
            if payload.token_count + limit > budget.context_window {
                return Err(RunError::Budget {
                    node: node.id.clone(),
                    prompt_tokens: payload.token_count,
                    limit,
                    window: budget.context_window,
                });
            }
            let seed = node_sample_seed(state.params.sample_seed, &node.id);
            let request = CompletionRequest {
                prompt: payload.assembled,
                max_tokens: limit,
                temperature: state.params.temperature,
                sample_seed: seed,
                stop: None,
            };
            let raw = self
                .backend
                .complete(&request)
                .map_err(|source| RunError::Backend {
                    node: node.id.clone(),
                    source,
                })?;
            let text = self.tokenizer.truncate_end(raw.trim(), limit).trim_end().to_owned();
            let record = SummaryRecord::new(
                node.id.clone(),
                text.clone(),
                self.tokenizer.count(&text),
                Producer::Backend(self.backend.name().to_owned()),
                state.params.temperature,
                seed,
                self.clock.now(),
            );
            tracing::debug!(node = %node.id, tokens = record.token_count, "node summarized");
            context.push(node.depth, record.clone());
            done.insert(node.id.clone(), record.clone());
            state.entries.push(ExecutionEntry {
                node_id: node.id.clone(),
                depth: node.depth,
                height: node.height,
                input_text: input,
                previous_context: payload.previous_context,
                prompt_tokens: payload.token_count,
                summary_limit: limit,
                record,
            });
            if after_node(state).is_break() {
                return Ok(RunOutcome::Stopped);
            }
        }
        Ok(RunOutcome::Completed)
    }
}

/// A run that stopped early; `state` can be passed back to [`Executor::run`].
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct Interrupted {
    pub error: RunError,
    pub state: RunState,
}

/// Runs the whole tree from scratch.
pub fn run_tree(
    tree: &TaskTree,
    book: &BookDocument,
    backend: &dyn Backend,
    tokenizer: &dyn Tokenizer,
    clock: &dyn Clock,
    params: RunParams,
) -> Result<RunState, Interrupted> {
    let mut state = RunState::new(tree.id.clone(), params);
    let result = Executor::new(tree, book, backend, tokenizer, clock)
        .and_then(|ex| ex.run(&mut state, |_| ControlFlow::Continue(())));
    match result {
        Ok(_) => Ok(state),
        Err(error) => Err(Interrupted { error, state }),
    }
}

/// Runs the whole tree with the question instruction in every prompt.
pub fn run_qa_tree(
    tree: &TaskTree,
    book: &BookDocument,
    question: &str,
    backend: &dyn Backend,
    tokenizer: &dyn Tokenizer,
    clock: &dyn Clock,
    mut params: RunParams,
) -> Result<RunState, Interrupted> {
    if question.trim().is_empty() {
        return Err(Interrupted {
            error: RunError::EmptyQuestion,
            state: RunState::new(tree.id.clone(), params),
        });
    }
    params.question = Some(question.to_owned());
    run_tree(tree, book, backend, tokenizer, clock, params)
}

/// Append-only JSONL log of a run: a header line with the run parameters,
/// then one [`ExecutionEntry`] per line. A torn final line is ignored on load.
pub struct Checkpoint {
    path: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    tree_id: TreeId,
    params: RunParams,
}

impl Checkpoint {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn exists(&self) -> bool {
        self.path.exists()
    }

    fn err(e: impl std::fmt::Display) -> RunError {
        RunError::Checkpoint(e.to_string())
    }

    /// Rewrites the file from `state`.
    pub fn write_all(&self, state: &RunState) -> Result<(), RunError> {
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(Self::err)?;
        }
        let tmp = self.path.with_extension("jsonl.tmp");
        {
            let mut f = File::create(&tmp).map_err(Self::err)?;
            let header = CheckpointHeader {
                tree_id: state.tree_id.clone(),
                params: state.params.clone(),
            };
            writeln!(f, "{}", serde_json::to_string(&header).map_err(Self::err)?).map_err(Self::err)?;
            for e in &state.entries {
                writeln!(f, "{}", serde_json::to_string(e).map_err(Self::err)?).map_err(Self::err)?;
            }
            f.sync_all().map_err(Self::err)?;
        }
        std::fs::rename(&tmp, &self.path).map_err(Self::err)
    }

    /// Appends the newest entry of `state`, creating the file if needed.
    pub fn append_last(&self, state: &RunState) -> Result<(), RunError> {
        if !self.path.exists() {
            return self.write_all(state);
        }
        let Some(entry) = state.entries.last() else {
            return Ok(());
        };
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(Self::err)?;
        writeln!(f, "{}", serde_json::to_string(entry).map_err(Self::err)?).map_err(Self::err)?;
        f.sync_data().map_err(Self::err)
    }

    pub fn load(&self) -> Result<RunState, RunError> {
        let f = File::open(&self.path).map_err(Self::err)?;
        let mut lines = BufReader::new(f).lines();
        let header: CheckpointHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line.map_err(Self::err)?).map_err(Self::err)?,
            None => return Err(Self::err("empty checkpoint file")),
        };
        let mut state = RunState::new(header.tree_id, header.params);
        let lines: Vec<String> = lines.collect::<Result<_, _>>().map_err(Self::err)?;
        let last = lines.len().saturating_sub(1);
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(entry) => state.entries.push(entry),
                Err(_) if i == last => {
                    tracing::warn!(path = %self.path.display(), "ignoring torn final checkpoint line");
                }
                Err(e) => return Err(Self::err(format!("line {}: {e}", i + 2))),
            }
        }
        Ok(state)
    }
}
