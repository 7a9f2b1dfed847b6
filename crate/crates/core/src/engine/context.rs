use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::SummaryRecord;

/// Summaries written so far, grouped by the depth of their node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextStore {
    by_depth: BTreeMap<u32, Vec<SummaryRecord>>,
}

impl ContextStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends; callers push in document order.
    pub fn push(&mut self, depth: u32, record: SummaryRecord) {
        self.by_depth.entry(depth).or_default().push(record);
    }

    pub fn at(&self, depth: u32) -> &[SummaryRecord] {
        self.by_depth.get(&depth).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn texts_at(&self, depth: u32) -> Vec<&str> {
        self.at(depth).iter().map(|r| r.text.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.by_depth.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
