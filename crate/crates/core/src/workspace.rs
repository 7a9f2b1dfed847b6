//! On-disk layout shared by the CLI and the HTTP service.
//!
//! ```text
//! books/{book_id}.json
//! trees/{tree_id}.json
//! runs/{tree_id}/{run_id}.jsonl   execution checkpoints
//! feedback/                       label store
//! sampler.json                    curriculum position
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{Checkpoint, RunParams, RunState};
use crate::model::{hex16, BookDocument, BookId, NodeId, SummaryId, SummaryRecord, TaskTree, TreeId};

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0} already exists with different content")]
    Exists(String),
    #[error("invalid identifier `{0}`")]
    BadId(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct Workspace {
    root: PathBuf,
}

/// Ids become file names; keep them to a safe alphabet.
fn check_id(id: &str) -> Result<(), WorkspaceError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(WorkspaceError::BadId(id.to_owned()))
    }
}

/// Deterministic id for a run with the given parameters.
pub fn run_id(params: &RunParams) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(params).expect("params serialize"));
    format!("run-{}", hex16(&h.finalize()))
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, WorkspaceError> {
        let root = root.into();
        for dir in ["books", "trees", "runs", "feedback"] {
            fs::create_dir_all(root.join(dir))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn feedback_dir(&self) -> PathBuf {
        self.root.join("feedback")
    }

    pub fn sampler_path(&self) -> PathBuf {
        self.root.join("sampler.json")
    }

    fn read_json<T: DeserializeOwned>(path: &Path, what: String) -> Result<T, WorkspaceError> {
        let raw = match fs::read_to_string(path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(WorkspaceError::NotFound(what))
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::from_str(&raw).map_err(|e| WorkspaceError::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    /// Writes `value` unless an identical file exists; a different one is an error.
    fn write_once<T: Serialize>(path: &Path, value: &T, what: String) -> Result<bool, WorkspaceError> {
        let body = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
        match fs::read_to_string(path) {
            Ok(existing) if existing == body => return Ok(false),
            Ok(_) => return Err(WorkspaceError::Exists(what)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, body)?;
        fs::rename(tmp, path)?;
        Ok(true)
    }

    fn list_ids(dir: &Path) -> Result<Vec<String>, WorkspaceError> {
        let mut ids: Vec<String> = fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                name.strip_suffix(".json").map(str::to_owned)
            })
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Stores a book; returns false if the identical book was already there.
    pub fn put_book(&self, book: &BookDocument) -> Result<bool, WorkspaceError> {
        check_id(book.id.as_str())?;
        let path = self.root.join("books").join(format!("{}.json", book.id));
        Self::write_once(&path, book, format!("book {}", book.id))
    }

    pub fn book(&self, id: &BookId) -> Result<BookDocument, WorkspaceError> {
        check_id(id.as_str())?;
        Self::read_json(
            &self.root.join("books").join(format!("{id}.json")),
            format!("book {id}"),
        )
    }

    pub fn book_ids(&self) -> Result<Vec<BookId>, WorkspaceError> {
        Ok(Self::list_ids(&self.root.join("books"))?
            .into_iter()
            .map(BookId::new)
            .collect())
    }

    pub fn put_tree(&self, tree: &TaskTree) -> Result<bool, WorkspaceError> {
        check_id(tree.id.as_str())?;
        let path = self.root.join("trees").join(format!("{}.json", tree.id));
        Self::write_once(&path, tree, format!("tree {}", tree.id))
    }

    pub fn tree(&self, id: &TreeId) -> Result<TaskTree, WorkspaceError> {
        check_id(id.as_str())?;
        Self::read_json(
            &self.root.join("trees").join(format!("{id}.json")),
            format!("tree {id}"),
        )
    }

    pub fn tree_ids(&self) -> Result<Vec<TreeId>, WorkspaceError> {
        Ok(Self::list_ids(&self.root.join("trees"))?
            .into_iter()
            .map(TreeId::new)
            .collect())
    }

    pub fn checkpoint(&self, tree: &TreeId, params: &RunParams) -> Result<Checkpoint, WorkspaceError> {
        check_id(tree.as_str())?;
        Ok(Checkpoint::new(
            self.root
                .join("runs")
                .join(tree.as_str())
                .join(format!("{}.jsonl", run_id(params))),
        ))
    }

    /// All recorded runs of a tree, complete or partial.
    pub fn runs(&self, tree: &TreeId) -> Result<Vec<RunState>, WorkspaceError> {
        check_id(tree.as_str())?;
        let dir = self.root.join("runs").join(tree.as_str());
        let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
            Ok(entries) => entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        paths.sort();
        paths
            .into_iter()
            .map(|p| {
                Checkpoint::new(&p).load().map_err(|e| WorkspaceError::Format {
                    path: p.clone(),
                    message: e.to_string(),
                })
            })
            .collect()
    }

    /// Every summary of a tree across runs, keyed by summary id.
    pub fn summaries(&self, tree: &TreeId) -> Result<BTreeMap<SummaryId, SummaryRecord>, WorkspaceError> {
        Ok(self
            .runs(tree)?
            .iter()
            .flat_map(|r| r.records().cloned())
            .map(|r| (r.id.clone(), r))
            .collect())
    }

    /// Summaries of one node across runs.
    pub fn node_summaries(&self, tree: &TreeId, node: &NodeId) -> Result<Vec<SummaryRecord>, WorkspaceError> {
        Ok(self
            .summaries(tree)?
            .into_values()
            .filter(|r| &r.node_id == node)
            .collect())
    }

    /// Most recent complete run of a tree, if any.
    pub fn latest_complete_run(&self, tree: &TaskTree) -> Result<Option<RunState>, WorkspaceError> {
        let mut runs: Vec<RunState> = self
            .runs(&tree.id)?
            .into_iter()
            .filter(|r| r.is_complete(tree))
            .collect();
        runs.sort_by_key(|r| r.entries.last().map(|e| e.record.created_at));
        Ok(runs.pop())
    }
}
