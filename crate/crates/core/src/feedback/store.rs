use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{make_comparison_set, Assignment, AssignmentKind, FeedbackError};
use crate::model::{
    AssignmentId, Clock, LabelId, LabelKind, LabelKindTag, LabelRecord, NodeId, SummaryId,
    Timestamp, TreeId,
};
use crate::tokenizer::TokenizerHandle;

const INDEX_FILE: &str = "index.json";
const LABEL_DIR: &str = "labels";

/// A label as persisted: the record plus its store id and originating assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredLabel {
    pub id: LabelId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment_id: Option<AssignmentId>,
    #[serde(flatten)]
    pub record: LabelRecord,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelFilter {
    pub node: Option<NodeId>,
    pub labeler: Option<String>,
    pub kind: Option<LabelKindTag>,
    /// Inclusive.
    pub since: Option<Timestamp>,
    /// Exclusive.
    pub until: Option<Timestamp>,
}

impl LabelFilter {
    pub fn matches(&self, r: &LabelRecord) -> bool {
        self.node.as_ref().is_none_or(|n| &r.node_id == n)
            && self.labeler.as_ref().is_none_or(|l| &r.labeler == l)
            && self.kind.is_none_or(|k| r.kind.tag() == k)
            && self.since.is_none_or(|t| r.created_at >= t)
            && self.until.is_none_or(|t| r.created_at < t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for LineError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportReport {
    pub imported: usize,
    pub ids: Vec<LabelId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewAssignment {
    pub tree_id: TreeId,
    pub node_id: NodeId,
    pub kind: AssignmentKind,
    pub candidates: Vec<SummaryId>,
    pub token_limit: usize,
    pub seed: u64,
    pub labeler: Option<String>,
    pub contamination: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    next_assignment: u64,
    next_label: u64,
    assignments: BTreeMap<AssignmentId, Assignment>,
}

struct Inner {
    index: Index,
    labels: Vec<StoredLabel>,
}

/// Directory-backed label store: `index.json` for assignments plus
/// append-only `labels/labels-{date}.jsonl` shards.
///
/// All writes go through one lock, so there is a single writer per store.
pub struct FeedbackStore {
    dir: PathBuf,
    tokenizer: TokenizerHandle,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
}

fn label_seq(id: &LabelId) -> u64 {
    id.as_str()
        .strip_prefix("lab-")
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}

impl FeedbackStore {
    pub fn open(
        dir: impl Into<PathBuf>,
        tokenizer: TokenizerHandle,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, FeedbackError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join(LABEL_DIR))?;
        let mut index: Index = match fs::read_to_string(dir.join(INDEX_FILE)) {
            Ok(raw) => serde_json::from_str(&raw)
                .map_err(|e| FeedbackError::Corrupt(format!("{INDEX_FILE}: {e}")))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Index::default(),
            Err(e) => return Err(e.into()),
        };
        let labels = load_labels(&dir.join(LABEL_DIR))?;

        // labels are written before the index; finish any interrupted submit
        let mut repaired = false;
        for label in &labels {
            index.next_label = index.next_label.max(label_seq(&label.id));
            let Some(aid) = &label.assignment_id else { continue };
            if let Some(a) = index.assignments.get_mut(aid) {
                if !a.label_ids.contains(&label.id) {
                    a.label_ids.push(label.id.clone());
                    a.completed_at.get_or_insert(label.record.created_at);
                    a.labeler.get_or_insert_with(|| label.record.labeler.clone());
                    repaired = true;
                }
            }
        }
        let store = Self {
            dir,
            tokenizer,
            clock,
            inner: Mutex::new(Inner { index, labels }),
        };
        if repaired {
            store.save_index(&store.inner.lock().index)?;
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn save_index(&self, index: &Index) -> Result<(), FeedbackError> {
        let tmp = self.dir.join(format!("{INDEX_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(index).map_err(std::io::Error::other)?)?;
        fs::rename(tmp, self.dir.join(INDEX_FILE))?;
        Ok(())
    }

    fn append_labels(&self, labels: &[StoredLabel]) -> Result<(), FeedbackError> {
        if labels.is_empty() {
            return Ok(());
        }
        let date = self.clock.now().datetime().format("%Y-%m-%d").to_string();
        let path = self.dir.join(LABEL_DIR).join(format!("labels-{date}.jsonl"));
        let mut buf = Vec::new();
        for l in labels {
            serde_json::to_writer(&mut buf, l).map_err(std::io::Error::other)?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        // one write per batch keeps a batch together on disk
        f.write_all(&buf)?;
        f.sync_data()?;
        Ok(())
    }

    pub fn issue(&self, new: NewAssignment) -> Result<Assignment, FeedbackError> {
        let pairs = match new.kind {
            AssignmentKind::ComparisonSet => make_comparison_set(&new.candidates, new.seed)?,
            AssignmentKind::Likert if new.candidates.len() != 1 => {
                return Err(FeedbackError::Validation(format!(
                    "a likert assignment rates exactly one summary, got {}",
                    new.candidates.len()
                )))
            }
            AssignmentKind::Demonstration if new.candidates.len() > 3 => {
                return Err(FeedbackError::Validation(
                    "at most 3 reference summaries per assignment".into(),
                ))
            }
            _ => Vec::new(),
        };
        if new.token_limit == 0 {
            return Err(FeedbackError::Validation("token limit must be positive".into()));
        }
        let mut inner = self.inner.lock();
        inner.index.next_assignment += 1;
        let assignment = Assignment {
            id: AssignmentId::new(format!("asg-{:06}", inner.index.next_assignment)),
            tree_id: new.tree_id,
            node_id: new.node_id,
            labeler: new.labeler,
            payload_kind: new.kind,
            candidate_summaries: new.candidates,
            pairs,
            token_limit: new.token_limit,
            seed: new.seed,
            contamination: new.contamination,
            issued_at: self.clock.now(),
            completed_at: None,
            label_ids: Vec::new(),
        };
        inner
            .index
            .assignments
            .insert(assignment.id.clone(), assignment.clone());
        self.save_index(&inner.index)?;
        Ok(assignment)
    }

    pub fn assignment(&self, id: &AssignmentId) -> Option<Assignment> {
        self.inner.lock().index.assignments.get(id).cloned()
    }

    pub fn assignments(&self) -> Vec<Assignment> {
        self.inner.lock().index.assignments.values().cloned().collect()
    }

    /// Oldest open assignment reserved for `labeler` or unclaimed; an
    /// unclaimed one is claimed.
    pub fn next_for(&self, labeler: &str) -> Result<Option<Assignment>, FeedbackError> {
        let mut inner = self.inner.lock();
        let Some(a) = inner
            .index
            .assignments
            .values_mut()
            .find(|a| a.is_open() && a.labeler.as_deref().is_none_or(|l| l == labeler))
        else {
            return Ok(None);
        };
        let claimed = a.labeler.is_none();
        a.labeler = Some(labeler.to_owned());
        let out = a.clone();
        if claimed {
            self.save_index(&inner.index)?;
        }
        Ok(Some(out))
    }

    fn check_submission(&self, a: &Assignment, records: &[LabelRecord]) -> Result<(), FeedbackError> {
        let invalid = |m: String| Err(FeedbackError::Validation(m));
        if records.is_empty() {
            return invalid("submission contains no labels".into());
        }
        let labeler = &records[0].labeler;
        for r in records {
            r.check().map_err(FeedbackError::Validation)?;
            if r.node_id != a.node_id {
                return invalid(format!("label is for node {}, assignment is for {}", r.node_id, a.node_id));
            }
            if !a.accepts(r.kind.tag()) {
                return invalid(format!(
                    "{} label does not fit a {:?} assignment",
                    r.kind.tag().as_str(),
                    a.payload_kind
                ));
            }
            if &r.labeler != labeler {
                return invalid("all labels of one submission need the same labeler".into());
            }
        }
        if let Some(owner) = &a.labeler {
            if owner != labeler {
                return invalid(format!("assignment {} belongs to labeler {owner}", a.id));
            }
        }
        let candidates: BTreeSet<&SummaryId> = a.candidate_summaries.iter().collect();
        match a.payload_kind {
            AssignmentKind::Demonstration => {
                let [r] = records else {
                    return invalid("a demonstration assignment takes exactly one label".into());
                };
                if let LabelKind::Demonstration { text } = &r.kind {
                    let tokens = self.tokenizer.count(text);
                    if tokens > a.token_limit {
                        return invalid(format!(
                            "demonstration has {tokens} tokens; the limit for this node is {} tokens",
                            a.token_limit
                        ));
                    }
                }
            }
            AssignmentKind::Likert => {
                let [r] = records else {
                    return invalid("a likert assignment takes exactly one label".into());
                };
                if let LabelKind::Likert { summary_id, .. } = &r.kind {
                    if !candidates.contains(summary_id) {
                        return invalid(format!("summary {summary_id} is not part of the assignment"));
                    }
                }
            }
            AssignmentKind::ComparisonSet => {
                let expected: BTreeSet<_> = a.pairs.iter().map(|p| p.key()).collect();
                let mut seen = BTreeSet::new();
                let mut rated = BTreeSet::new();
                for r in records {
                    match &r.kind {
                        LabelKind::Comparison {
                            summary_a,
                            summary_b,
                            ..
                        } => {
                            for s in [summary_a, summary_b] {
                                if !candidates.contains(s) {
                                    return invalid(format!("summary {s} is not part of the assignment"));
                                }
                            }
                            let key = super::PresentedPair {
                                a: summary_a.clone(),
                                b: summary_b.clone(),
                            }
                            .key();
                            if !seen.insert(key) {
                                return invalid(format!("pair {summary_a}/{summary_b} compared twice"));
                            }
                        }
                        LabelKind::Likert { summary_id, .. } => {
                            if !candidates.contains(summary_id) {
                                return invalid(format!("summary {summary_id} is not part of the assignment"));
                            }
                            if !rated.insert(summary_id) {
                                return invalid(format!("summary {summary_id} rated twice"));
                            }
                        }
                        LabelKind::Demonstration { .. } => unreachable!("filtered by accepts"),
                    }
                }
                if seen != expected {
                    return invalid(format!(
                        "comparison set needs exactly one comparison per pair ({} pairs, got {})",
                        expected.len(),
                        seen.len()
                    ));
                }
            }
        }
        Ok(())
    }

    /// Stores a complete submission for an open assignment and closes it.
    pub fn submit(
        &self,
        assignment_id: &AssignmentId,
        records: Vec<LabelRecord>,
    ) -> Result<Vec<LabelId>, FeedbackError> {
        let mut inner = self.inner.lock();
        let a = inner
            .index
            .assignments
            .get(assignment_id)
            .ok_or_else(|| FeedbackError::NotFound(format!("assignment {assignment_id}")))?;
        if !a.is_open() {
            return Err(FeedbackError::Conflict(format!(
                "assignment {assignment_id} was already completed"
            )));
        }
        self.check_submission(a, &records)?;

        let labeler = records[0].labeler.clone();
        let mut next = inner.index.next_label;
        let stored: Vec<StoredLabel> = records
            .into_iter()
            .map(|record| {
                next += 1;
                StoredLabel {
                    id: LabelId::new(format!("lab-{next:06}")),
                    assignment_id: Some(assignment_id.clone()),
                    record,
                }
            })
            .collect();
        self.append_labels(&stored)?;
        let ids: Vec<LabelId> = stored.iter().map(|l| l.id.clone()).collect();
        inner.index.next_label = next;
        let now = self.clock.now();
        let a = inner
            .index
            .assignments
            .get_mut(assignment_id)
            .expect("checked above");
        a.completed_at = Some(now);
        a.labeler = Some(labeler);
        a.label_ids = ids.clone();
        inner.labels.extend(stored);
        self.save_index(&inner.index)?;
        Ok(ids)
    }

    pub fn labels(&self, filter: &LabelFilter) -> Vec<StoredLabel> {
        self.inner
            .lock()
            .labels
            .iter()
            .filter(|l| filter.matches(&l.record))
            .cloned()
            .collect()
    }

    pub fn label_count(&self) -> usize {
        self.inner.lock().labels.len()
    }

    /// Matching records as JSONL, in store order.
    pub fn export(&self, filter: &LabelFilter) -> String {
        let mut out = String::new();
        for l in self.labels(filter) {
            out.push_str(&serde_json::to_string(&l.record).expect("label serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes one `{kind}-{date}.jsonl` file per label kind present.
    pub fn export_to_dir(&self, dir: &Path, filter: &LabelFilter) -> Result<Vec<PathBuf>, FeedbackError> {
        fs::create_dir_all(dir)?;
        let date = self.clock.now().datetime().format("%Y-%m-%d").to_string();
        let mut written = Vec::new();
        for kind in [LabelKindTag::Demonstration, LabelKindTag::Comparison, LabelKindTag::Likert] {
            if filter.kind.is_some_and(|k| k != kind) {
                continue;
            }
            let body = self.export(&LabelFilter {
                kind: Some(kind),
                ..filter.clone()
            });
            if body.is_empty() {
                continue;
            }
            let path = dir.join(format!("{}-{date}.jsonl", kind.as_str()));
            fs::write(&path, body)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Imports JSONL records; nothing is stored unless every line is valid.
    ///
    /// `summary_node`, when given, maps summary ids to their nodes so that
    /// comparisons and ratings can be checked against the label's node.
    pub fn import(
        &self,
        text: &str,
        summary_node: Option<&dyn Fn(&SummaryId) -> Option<NodeId>>,
    ) -> Result<ImportReport, FeedbackError> {
        let mut records = Vec::new();
        let mut errors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = i + 1;
            let record: LabelRecord = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(e) => {
                    errors.push(LineError {
                        line: line_no,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            if let Err(message) = record.check() {
                errors.push(LineError { line: line_no, message });
                continue;
            }
            if let Some(lookup) = summary_node {
                let referenced: Vec<&SummaryId> = match &record.kind {
                    LabelKind::Comparison {
                        summary_a,
                        summary_b,
                        ..
                    } => vec![summary_a, summary_b],
                    LabelKind::Likert { summary_id, .. } => vec![summary_id],
                    LabelKind::Demonstration { .. } => vec![],
                };
                for s in referenced {
                    match lookup(s) {
                        Some(node) if node == record.node_id => {}
                        Some(node) => errors.push(LineError {
                            line: line_no,
                            message: format!("summary {s} belongs to node {node}, not {}", record.node_id),
                        }),
                        None => errors.push(LineError {
                            line: line_no,
                            message: format!("unknown summary {s}"),
                        }),
                    }
                }
            }
            records.push(record);
        }
        if !errors.is_empty() {
            return Err(FeedbackError::Import(errors));
        }

        let mut inner = self.inner.lock();
        let mut next = inner.index.next_label;
        let stored: Vec<StoredLabel> = records
            .into_iter()
            .map(|record| {
                next += 1;
                StoredLabel {
                    id: LabelId::new(format!("lab-{next:06}")),
                    assignment_id: None,
                    record,
                }
            })
            .collect();
        self.append_labels(&stored)?;
        inner.index.next_label = next;
        let ids: Vec<LabelId> = stored.iter().map(|l| l.id.clone()).collect();
        inner.labels.extend(stored);
        self.save_index(&inner.index)?;
        Ok(ImportReport {
            imported: ids.len(),
            ids,
        })
    }
}

fn load_labels(dir: &Path) -> Result<Vec<StoredLabel>, FeedbackError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut labels = Vec::new();
    for path in files {
        let raw = fs::read_to_string(&path)?;
        let complete = raw.ends_with('\n');
        let lines: Vec<&str> = raw.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<StoredLabel>(line) {
                Ok(l) => labels.push(l),
                Err(_) if i + 1 == lines.len() && !complete => {
                    tracing::warn!(path = %path.display(), "dropping torn final label line");
                    let keep = raw.rfind('\n').map_or(0, |n| n + 1);
                    fs::write(&path, &raw[..keep])?;
                }
                Err(e) => {
                    return Err(FeedbackError::Corrupt(format!(
                        "{} line {}: {e}",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
    }
    labels.sort_by_key(|l| label_seq(&l.id));
    Ok(labels)
}
