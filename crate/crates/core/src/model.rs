//! Shared data model: books, task trees, summaries, labels and episodes.
//!
//! Everything here is a plain value type. Records are created once and never
//! mutated in place; stores append new records instead.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use unicode_normalization::UnicodeNormalization;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

id_type!(
    /// Identifier of an ingested book.
    BookId
);
id_type!(
    /// Identifier of a planned task tree.
    TreeId
);
id_type!(
    /// Identifier of a task node. Unique across trees: it embeds the tree id.
    NodeId
);
id_type!(SummaryId);
id_type!(LabelId);
id_type!(AssignmentId);

/// UTC timestamp with second resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn now() -> Self {
        Self::from_datetime(Utc::now())
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Self(dt.trunc_subsecs(0))
    }

    pub fn from_unix(secs: i64) -> Self {
        Self(DateTime::from_timestamp(secs, 0).unwrap_or_default())
    }

    pub fn datetime(&self) -> DateTime<Utc> {
        self.0
    }

    pub fn unix(&self) -> i64 {
        self.0.timestamp()
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        let dt = DateTime::parse_from_rfc3339(&raw).map_err(serde::de::Error::custom)?;
        Ok(Self::from_datetime(dt.with_timezone(&Utc)))
    }
}

/// Source of wall-clock time for records. Tests pin it for byte-identical output.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub Timestamp);

impl Clock for FixedClock {
    fn now(&self) -> Timestamp {
        self.0
    }
}

/// Normalizes text to NFC with LF newlines. Spans are byte offsets into this form.
pub fn normalize_text(raw: &str) -> String {
    let lf = raw.replace("\r\n", "\n").replace('\r', "\n");
    lf.nfc().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookDocument {
    pub id: BookId,
    pub title: String,
    /// Full text, already normalized.
    pub text: String,
    #[serde(default)]
    pub source_meta: BTreeMap<String, String>,
}

impl BookDocument {
    /// Builds a document, normalizing the text once.
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        raw_text: &str,
        source_meta: BTreeMap<String, String>,
    ) -> Self {
        Self {
            id: BookId::new(id),
            title: title.into(),
            text: normalize_text(raw_text),
            source_meta,
        }
    }
}

/// Token limits for prompts and summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub context_window: usize,
    /// Height to limit. A height without an entry uses the closest lower key,
    /// so `{0:128, 1:192, 2:384}` caps every height ≥ 2 at 384.
    pub summary_limit_by_height: BTreeMap<u32, usize>,
    pub leaf_input_target: usize,
    pub compression_target: (f64, f64),
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self {
            context_window: 2048,
            summary_limit_by_height: BTreeMap::from([(0, 128), (1, 192), (2, 384)]),
            leaf_input_target: 600,
            compression_target: (5.0, 10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BudgetError {
    #[error("summary limits must include height 0")]
    MissingLeafLimit,
    #[error("summary limit decreases from height {lower} to height {higher}")]
    DecreasingLimit { lower: u32, higher: u32 },
    #[error("leaf input target {target} plus leaf summary limit {limit} must be below the context window {window}")]
    LeafDoesNotFit {
        target: usize,
        limit: usize,
        window: usize,
    },
    #[error("compression target range {0}..{1} is invalid")]
    BadCompression(f64, f64),
}

impl TokenBudget {
    pub fn summary_limit(&self, height: u32) -> usize {
        self.summary_limit_by_height
            .range(..=height)
            .next_back()
            .map(|(_, v)| *v)
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        if !self.summary_limit_by_height.contains_key(&0) {
            return Err(BudgetError::MissingLeafLimit);
        }
        let mut prev: Option<(u32, usize)> = None;
        for (&h, &limit) in &self.summary_limit_by_height {
            if let Some((ph, pl)) = prev {
                if limit < pl {
                    return Err(BudgetError::DecreasingLimit {
                        lower: ph,
                        higher: h,
                    });
                }
            }
            prev = Some((h, limit));
        }
        let leaf_limit = self.summary_limit(0);
        if self.leaf_input_target + leaf_limit >= self.context_window {
            return Err(BudgetError::LeafDoesNotFit {
                target: self.leaf_input_target,
                limit: leaf_limit,
                window: self.context_window,
            });
        }
        let (lo, hi) = self.compression_target;
        if !(lo > 0.0 && lo <= hi) {
            return Err(BudgetError::BadCompression(lo, hi));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    OriginalText,
    Concatenation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Planned,
    Summarized,
}

/// Half-open byte range `[start, end)` into the normalized book text.
pub type Span = [usize; 2];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskNode {
    pub id: NodeId,
    pub tree_id: TreeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub height: u32,
    pub depth: u32,
    pub char_span: Option<Span>,
    pub input_kind: InputKind,
    pub status: NodeStatus,
}

impl TaskNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTree {
    pub id: TreeId,
    pub book_id: BookId,
    pub seed: u64,
    pub budget: TokenBudget,
    pub root: NodeId,
    pub nodes: BTreeMap<NodeId, TaskNode>,
}

impl TaskTree {
    pub fn node(&self, id: &NodeId) -> Option<&TaskNode> {
        self.nodes.get(id)
    }

    pub fn root_node(&self) -> &TaskNode {
        &self.nodes[&self.root]
    }

    /// Height of the root, i.e. of the whole tree.
    pub fn height(&self) -> u32 {
        self.root_node().height
    }

    /// All nodes in document order (pre-order, children left to right).
    /// Nodes missing from the map are skipped.
    pub fn preorder(&self) -> Vec<&TaskNode> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![&self.root];
        while let Some(id) = stack.pop() {
            let Some(node) = self.nodes.get(id) else {
                continue;
            };
            out.push(node);
            stack.extend(node.children.iter().rev());
        }
        out
    }

    /// Execution order: children before parents, left to right.
    pub fn postorder(&self) -> Vec<&TaskNode> {
        fn walk<'a>(tree: &'a TaskTree, id: &NodeId, out: &mut Vec<&'a TaskNode>) {
            if let Some(node) = tree.nodes.get(id) {
                for child in &node.children {
                    walk(tree, child, out);
                }
                out.push(node);
            }
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        walk(self, &self.root, &mut out);
        out
    }

    pub fn leaves(&self) -> Vec<&TaskNode> {
        self.preorder().into_iter().filter(|n| n.is_leaf()).collect()
    }

    /// Nodes at `depth`, in document order.
    pub fn nodes_at_depth(&self, depth: u32) -> Vec<&TaskNode> {
        self.preorder()
            .into_iter()
            .filter(|n| n.depth == depth)
            .collect()
    }

    pub fn max_depth(&self) -> u32 {
        self.nodes.values().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Leaves under `id`, in document order.
    pub fn leaves_under(&self, id: &NodeId) -> Vec<&TaskNode> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(id) = stack.pop() {
            let Some(node) = self.nodes.get(id) else {
                continue;
            };
            if node.is_leaf() {
                out.push(node);
            }
            stack.extend(node.children.iter().rev());
        }
        out
    }

    /// Byte range of the book covered by the subtree rooted at `id`.
    pub fn span_of(&self, id: &NodeId) -> Option<Span> {
        let leaves = self.leaves_under(id);
        let first = leaves.first()?.char_span?;
        let last = leaves.last()?.char_span?;
        Some([first[0], last[1]])
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(raw: &str) -> serde_json::Result<Self> {
        serde_json::from_str(raw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Producer {
    Backend(String),
    Human(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    /// Content-derived identifier, see [`SummaryRecord::derive_id`].
    pub id: SummaryId,
    pub node_id: NodeId,
    pub text: String,
    pub token_count: usize,
    pub producer: Producer,
    pub temperature: f64,
    pub sample_seed: u64,
    pub created_at: Timestamp,
}

impl SummaryRecord {
    pub fn new(
        node_id: NodeId,
        text: String,
        token_count: usize,
        producer: Producer,
        temperature: f64,
        sample_seed: u64,
        created_at: Timestamp,
    ) -> Self {
        let id = Self::derive_id(&node_id, &text, &producer, temperature, sample_seed);
        Self {
            id,
            node_id,
            text,
            token_count,
            producer,
            temperature,
            sample_seed,
            created_at,
        }
    }

    /// Stable id from the fields that make a sample distinct.
    pub fn derive_id(
        node_id: &NodeId,
        text: &str,
        producer: &Producer,
        temperature: f64,
        sample_seed: u64,
    ) -> SummaryId {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(node_id.as_str().as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(producer).unwrap_or_default());
        h.update([0]);
        h.update(temperature.to_bits().to_le_bytes());
        h.update(sample_seed.to_le_bytes());
        h.update(text.as_bytes());
        let digest = h.finalize();
        SummaryId(format!("sum-{}", hex16(&digest)))
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Rating criteria. `overall` is mandatory on every Likert label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Overall,
    Accuracy,
    Coverage,
    Coherence,
    Abstraction,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::Overall,
        Criterion::Accuracy,
        Criterion::Coverage,
        Criterion::Coherence,
        Criterion::Abstraction,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preference {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Demonstration {
        text: String,
    },
    Comparison {
        summary_a: SummaryId,
        summary_b: SummaryId,
        preferred: Preference,
    },
    Likert {
        summary_id: SummaryId,
        scores: BTreeMap<Criterion, u8>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKindTag {
    Demonstration,
    Comparison,
    Likert,
}

impl LabelKindTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelKindTag::Demonstration => "demonstration",
            LabelKindTag::Comparison => "comparison",
            LabelKindTag::Likert => "likert",
        }
    }
}

impl std::str::FromStr for LabelKindTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "demonstration" => Ok(Self::Demonstration),
            "comparison" => Ok(Self::Comparison),
            "likert" => Ok(Self::Likert),
            other => Err(format!("unknown label kind `{other}`")),
        }
    }
}

impl LabelKind {
    pub fn tag(&self) -> LabelKindTag {
        match self {
            LabelKind::Demonstration { .. } => LabelKindTag::Demonstration,
            LabelKind::Comparison { .. } => LabelKindTag::Comparison,
            LabelKind::Likert { .. } => LabelKindTag::Likert,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub kind: LabelKind,
    pub node_id: NodeId,
    pub labeler: String,
    pub duration_seconds: f64,
    pub created_at: Timestamp,
}

impl LabelRecord {
    /// Checks the record-local invariants (score range, criteria, distinct pair, duration).
    pub fn check(&self) -> Result<(), String> {
        if !(self.duration_seconds >= 0.0 && self.duration_seconds.is_finite()) {
            return Err(format!(
                "duration_seconds must be a finite value >= 0, got {}",
                self.duration_seconds
            ));
        }
        if self.labeler.is_empty() {
            return Err("labeler must not be empty".into());
        }
        match &self.kind {
            LabelKind::Demonstration { text } => {
                if text.trim().is_empty() {
                    return Err("demonstration text is empty".into());
                }
            }
            LabelKind::Comparison {
                summary_a,
                summary_b,
                ..
            } => {
                if summary_a == summary_b {
                    return Err(format!("comparison of {summary_a} with itself"));
                }
            }
            LabelKind::Likert { scores, .. } => {
                if !scores.contains_key(&Criterion::Overall) {
                    return Err("likert rating is missing the overall score".into());
                }
                for (criterion, score) in scores {
                    if !(1..=7).contains(score) {
                        return Err(format!(
                            "likert score for {criterion:?} must be in 1..=7, got {score}"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeVariant {
    FirstLeaves,
    FirstSubtree,
    FullTree,
}

/// One training unit: node tasks in document order, optionally followed by
/// the composition task over their outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub variant: EpisodeVariant,
    pub tasks: Vec<NodeId>,
    pub composition_tail: Option<NodeId>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_budget_limits() {
        let b = TokenBudget::default();
        assert_eq!(b.summary_limit(0), 128);
        assert_eq!(b.summary_limit(1), 192);
        assert_eq!(b.summary_limit(2), 384);
        assert_eq!(b.summary_limit(7), 384);
        b.validate().unwrap();
    }

    #[test]
    fn budget_rejects_decreasing_limits() {
        let mut b = TokenBudget::default();
        b.summary_limit_by_height.insert(3, 100);
        assert!(matches!(
            b.validate(),
            Err(BudgetError::DecreasingLimit { lower: 2, higher: 3 })
        ));
    }

    #[test]
    fn budget_rejects_oversized_leaf() {
        let b = TokenBudget {
            leaf_input_target: 1920,
            ..TokenBudget::default()
        };
        assert!(matches!(b.validate(), Err(BudgetError::LeafDoesNotFit { .. })));
    }

    #[test]
    fn normalization_is_nfc_lf() {
        let t = normalize_text("Cafe\u{301}\r\nline\rend");
        assert_eq!(t, "Caf\u{e9}\nline\nend");
    }

    #[test]
    fn timestamp_serializes_at_second_resolution() {
        let ts = Timestamp::from_unix(1_700_000_000);
        let json = serde_json::to_string(&ts).unwrap();
        assert_eq!(json, "\"2023-11-14T22:13:20Z\"");
        let back: Timestamp = serde_json::from_str("\"2023-11-14T22:13:20.750Z\"").unwrap();
        assert_eq!(back, ts);
    }

    #[test]
    fn likert_check() {
        let mut scores = BTreeMap::from([(Criterion::Overall, 5), (Criterion::Coherence, 4)]);
        let mut rec = LabelRecord {
            kind: LabelKind::Likert {
                summary_id: SummaryId::from("s1"),
                scores: scores.clone(),
            },
            node_id: NodeId::from("t-n0"),
            labeler: "ann".into(),
            duration_seconds: 10.0,
            created_at: Timestamp::from_unix(0),
        };
        assert!(rec.check().is_ok());
        scores.insert(Criterion::Accuracy, 9);
        rec.kind = LabelKind::Likert {
            summary_id: SummaryId::from("s1"),
            scores: scores.clone(),
        };
        assert!(rec.check().unwrap_err().contains("1..=7"));
        scores.remove(&Criterion::Overall);
        scores.insert(Criterion::Accuracy, 3);
        rec.kind = LabelKind::Likert {
            summary_id: SummaryId::from("s1"),
            scores,
        };
        assert!(rec.check().unwrap_err().contains("overall"));
    }

    #[test]
    fn comparison_requires_distinct_summaries() {
        let rec = LabelRecord {
            kind: LabelKind::Comparison {
                summary_a: SummaryId::from("s1"),
                summary_b: SummaryId::from("s1"),
                preferred: Preference::A,
            },
            node_id: NodeId::from("t-n0"),
            labeler: "ann".into(),
            duration_seconds: 0.0,
            created_at: Timestamp::from_unix(0),
        };
        assert!(rec.check().is_err());
    }

    #[test]
    fn label_record_json_shape() {
        let rec = LabelRecord {
            kind: LabelKind::Demonstration {
                text: "A summary.".into(),
            },
            node_id: NodeId::from("t-n3"),
            labeler: "ann".into(),
            duration_seconds: 240.0,
            created_at: Timestamp::from_unix(0),
        };
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            json,
            r#"{"kind":{"demonstration":{"text":"A summary."}},"node_id":"t-n3","labeler":"ann","duration_seconds":240.0,"created_at":"1970-01-01T00:00:00Z"}"#
        );
    }
}
