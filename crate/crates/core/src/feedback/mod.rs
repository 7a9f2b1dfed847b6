//! Human label collection: assignments, submissions, import/export and
//! labeling-time accounting.

mod pairs;
mod store;
mod time;

use serde::{Deserialize, Serialize};

use crate::model::{AssignmentId, LabelId, LabelKindTag, NodeId, SummaryId, Timestamp, TreeId};

pub use pairs::{comparison_set_bits, make_comparison_set, PresentedPair};
pub use store::{FeedbackStore, ImportReport, LabelFilter, LineError, NewAssignment, StoredLabel};
pub use time::{human_time_report, HumanTimeReport, KindTime, TimeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentKind {
    Demonstration,
    ComparisonSet,
    Likert,
}

impl std::str::FromStr for AssignmentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "demonstration" => Ok(Self::Demonstration),
            "comparison_set" | "comparison" => Ok(Self::ComparisonSet),
            "likert" => Ok(Self::Likert),
            other => Err(format!("unknown assignment kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub id: AssignmentId,
    pub tree_id: TreeId,
    pub node_id: NodeId,
    /// Unset until the assignment is handed to someone.
    pub labeler: Option<String>,
    pub payload_kind: AssignmentKind,
    pub candidate_summaries: Vec<SummaryId>,
    /// Pairs in presentation order; comparison sets only.
    #[serde(default)]
    pub pairs: Vec<PresentedPair>,
    /// Summary token limit of the node's height.
    pub token_limit: usize,
    pub seed: u64,
    /// Labeler saw more context than the model would (kept for analysis only).
    #[serde(default)]
    pub contamination: bool,
    pub issued_at: Timestamp,
    pub completed_at: Option<Timestamp>,
    #[serde(default)]
    pub label_ids: Vec<LabelId>,
}

impl Assignment {
    pub fn is_open(&self) -> bool {
        self.completed_at.is_none()
    }

    /// The label kinds a submission for this assignment may contain.
    pub fn accepts(&self, tag: LabelKindTag) -> bool {
        match self.payload_kind {
            AssignmentKind::Demonstration => tag == LabelKindTag::Demonstration,
            AssignmentKind::ComparisonSet => {
                matches!(tag, LabelKindTag::Comparison | LabelKindTag::Likert)
            }
            AssignmentKind::Likert => tag == LabelKindTag::Likert,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeedbackError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid: {0}")]
    Validation(String),
    #[error("import rejected: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Import(Vec<LineError>),
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store: {0}")]
    Corrupt(String),
}
