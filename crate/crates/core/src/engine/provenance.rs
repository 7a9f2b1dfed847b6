use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EngineError, CHILD_JOINER};
use crate::model::{NodeId, Span, SummaryRecord, TaskTree};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceStep {
    pub node_id: NodeId,
    pub depth: u32,
    pub height: u32,
    /// Byte range covered by this node's subtree.
    pub span: Option<Span>,
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub node_id: NodeId,
    /// Leaf spans under the node, in document order.
    pub spans: Vec<Span>,
    /// The node and every descendant, pre-order (root-to-leaf, left to right).
    pub chain: Vec<ProvenanceStep>,
    /// Ancestors from the root down to the parent.
    pub ancestors: Vec<ProvenanceStep>,
}

fn step(tree: &TaskTree, summaries: &BTreeMap<NodeId, SummaryRecord>, id: &NodeId) -> ProvenanceStep {
    let node = &tree.nodes[id];
    ProvenanceStep {
        node_id: id.clone(),
        depth: node.depth,
        height: node.height,
        span: tree.span_of(id),
        summary: summaries.get(id).map(|r| r.text.clone()),
    }
}

/// Traces a node down to the source text it summarizes.
pub fn trace_provenance(
    tree: &TaskTree,
    summaries: &BTreeMap<NodeId, SummaryRecord>,
    node_id: &NodeId,
) -> Result<Provenance, EngineError> {
    let node = tree
        .node(node_id)
        .ok_or_else(|| EngineError::UnknownNode(node_id.clone()))?;

    let mut chain = Vec::new();
    let mut stack = vec![&node.id];
    while let Some(id) = stack.pop() {
        let Some(n) = tree.node(id) else { continue };
        chain.push(step(tree, summaries, id));
        stack.extend(n.children.iter().rev());
    }

    let mut ancestors = Vec::new();
    let mut cur = node.parent.as_ref();
    while let Some(id) = cur {
        let Some(n) = tree.node(id) else { break };
        ancestors.push(step(tree, summaries, id));
        cur = n.parent.as_ref();
    }
    ancestors.reverse();

    let spans = tree
        .leaves_under(node_id)
        .into_iter()
        .filter_map(|l| l.char_span)
        .collect();
    Ok(Provenance {
        node_id: node_id.clone(),
        spans,
        chain,
        ancestors,
    })
}

/// Summaries at exactly `depth`, in document order, joined by a blank line.
pub fn collect_depth_summaries(
    tree: &TaskTree,
    summaries: &BTreeMap<NodeId, SummaryRecord>,
    depth: u32,
) -> Result<String, EngineError> {
    let nodes = tree.nodes_at_depth(depth);
    if nodes.is_empty() {
        return Err(EngineError::EmptyDepth(depth));
    }
    let texts = nodes
        .iter()
        .map(|n| {
            summaries
                .get(&n.id)
                .map(|r| r.text.as_str())
                .ok_or_else(|| EngineError::MissingSummary(n.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(texts.join(CHILD_JOINER))
}
