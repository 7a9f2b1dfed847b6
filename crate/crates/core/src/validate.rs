//! Structural validation of task trees against their book.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use crate::model::{BookDocument, InputKind, NodeId, TaskTree};
use crate::segment::filter_front_back_matter;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    WrongBook { expected: String, found: String },
    MissingRoot(NodeId),
    RootHasParent(NodeId),
    UnknownNode { referenced_by: NodeId, id: NodeId },
    KeyMismatch { key: NodeId, id: NodeId },
    ForeignNode { node: NodeId },
    Unreachable(NodeId),
    Cycle(NodeId),
    ParentMismatch { node: NodeId, expected: Option<NodeId>, found: Option<NodeId> },
    LeafShape { node: NodeId, reason: &'static str },
    Height { node: NodeId, expected: u32, found: u32 },
    Depth { node: NodeId, expected: u32, found: u32 },
    EmptySpan { node: NodeId },
    SpanOutOfText { node: NodeId },
    Overlap { left: NodeId, right: NodeId, bytes: usize },
    Gap { left: Option<NodeId>, right: Option<NodeId>, bytes: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            WrongBook { expected, found } => {
                write!(f, "tree is for book {found}, validated against {expected}")
            }
            MissingRoot(id) => write!(f, "root {id} is not in the node map"),
            RootHasParent(id) => write!(f, "root {id} has a parent"),
            UnknownNode { referenced_by, id } => {
                write!(f, "{referenced_by} references unknown node {id}")
            }
            KeyMismatch { key, id } => write!(f, "node stored under {key} has id {id}"),
            ForeignNode { node } => write!(f, "node {node} belongs to another tree"),
            Unreachable(id) => write!(f, "node {id} is not reachable from the root"),
            Cycle(id) => write!(f, "node {id} is reached twice"),
            ParentMismatch { node, expected, found } => write!(
                f,
                "node {node} has parent {found:?}, expected {expected:?}"
            ),
            LeafShape { node, reason } => write!(f, "node {node}: {reason}"),
            Height { node, expected, found } => {
                write!(f, "node {node} has height {found}, expected {expected}")
            }
            Depth { node, expected, found } => {
                write!(f, "node {node} has depth {found}, expected {expected}")
            }
            EmptySpan { node } => write!(f, "leaf {node} has an empty span"),
            SpanOutOfText { node } => {
                write!(f, "leaf {node} span is outside the text or splits a character")
            }
            Overlap { left, right, bytes } => {
                write!(f, "overlap: leaves {left} and {right} share {bytes} bytes")
            }
            Gap { left, right, bytes } => {
                write!(f, "gap of {bytes} bytes between {left:?} and {right:?}")
            }
        }
    }
}

/// Every violated tree invariant; empty when the tree is valid for `book`.
pub fn validate_tree(tree: &TaskTree, book: &BookDocument) -> Vec<Violation> {
    let mut out = Vec::new();
    if tree.book_id != book.id {
        out.push(Violation::WrongBook {
            expected: book.id.to_string(),
            found: tree.book_id.to_string(),
        });
    }
    for (key, node) in &tree.nodes {
        if key != &node.id {
            out.push(Violation::KeyMismatch {
                key: key.clone(),
                id: node.id.clone(),
            });
        }
        if node.tree_id != tree.id {
            out.push(Violation::ForeignNode {
                node: node.id.clone(),
            });
        }
    }
    let Some(root) = tree.nodes.get(&tree.root) else {
        out.push(Violation::MissingRoot(tree.root.clone()));
        return out;
    };
    if root.parent.is_some() {
        out.push(Violation::RootHasParent(root.id.clone()));
    }

    // walk from the root; record leaves in order
    let mut seen: HashSet<&NodeId> = HashSet::new();
    let mut leaves = Vec::new();
    check_subtree(tree, &tree.root, None, 0, &mut seen, &mut leaves, &mut out);

    for id in tree.nodes.keys() {
        if !seen.contains(id) {
            out.push(Violation::Unreachable(id.clone()));
        }
    }

    // leaf spans must partition the filtered text
    let filtered = filter_front_back_matter(&book.text);
    let mut cursor = filtered.body.start;
    let mut prev: Option<NodeId> = None;
    for (id, span) in &leaves {
        let [start, end] = *span;
        if start >= end {
            out.push(Violation::EmptySpan { node: id.clone() });
        }
        if end > book.text.len()
            || !book.text.is_char_boundary(start.min(book.text.len()))
            || !book.text.is_char_boundary(end.min(book.text.len()))
        {
            out.push(Violation::SpanOutOfText { node: id.clone() });
        }
        if start < cursor {
            if let Some(left) = &prev {
                out.push(Violation::Overlap {
                    left: left.clone(),
                    right: id.clone(),
                    bytes: cursor - start,
                });
            } else {
                out.push(Violation::Gap {
                    left: None,
                    right: Some(id.clone()),
                    bytes: cursor - start,
                });
            }
        } else if start > cursor {
            out.push(Violation::Gap {
                left: prev.clone(),
                right: Some(id.clone()),
                bytes: start - cursor,
            });
        }
        cursor = cursor.max(end);
        prev = Some(id.clone());
    }
    if cursor != filtered.body.end {
        out.push(Violation::Gap {
            left: prev,
            right: None,
            bytes: cursor.abs_diff(filtered.body.end),
        });
    }
    out
}

/// Checks `id` and below; returns the node's recomputed height.
fn check_subtree<'t>(
    tree: &'t TaskTree,
    id: &'t NodeId,
    parent: Option<&NodeId>,
    depth: u32,
    seen: &mut HashSet<&'t NodeId>,
    leaves: &mut Vec<(NodeId, [usize; 2])>,
    out: &mut Vec<Violation>,
) -> Option<u32> {
    let node = tree.nodes.get(id)?;
    if !seen.insert(id) {
        out.push(Violation::Cycle(id.clone()));
        return None;
    }
    if node.parent.as_ref() != parent {
        out.push(Violation::ParentMismatch {
            node: id.clone(),
            expected: parent.cloned(),
            found: node.parent.clone(),
        });
    }
    if node.depth != depth {
        out.push(Violation::Depth {
            node: id.clone(),
            expected: depth,
            found: node.depth,
        });
    }

    if node.children.is_empty() {
        if node.height != 0 {
            out.push(Violation::Height {
                node: id.clone(),
                expected: 0,
                found: node.height,
            });
        }
        if node.input_kind != InputKind::OriginalText {
            out.push(Violation::LeafShape {
                node: id.clone(),
                reason: "leaf input kind must be original_text",
            });
        }
        match node.char_span {
            Some(span) => leaves.push((id.clone(), span)),
            None => out.push(Violation::LeafShape {
                node: id.clone(),
                reason: "leaf has no char_span",
            }),
        }
        return Some(0);
    }

    if node.input_kind != InputKind::Concatenation {
        out.push(Violation::LeafShape {
            node: id.clone(),
            reason: "internal node input kind must be concatenation",
        });
    }
    if node.char_span.is_some() {
        out.push(Violation::LeafShape {
            node: id.clone(),
            reason: "internal node carries a char_span",
        });
    }
    let mut dupes = BTreeSet::new();
    let mut max_child: Option<u32> = None;
    for child in &node.children {
        if !tree.nodes.contains_key(child) {
            out.push(Violation::UnknownNode {
                referenced_by: id.clone(),
                id: child.clone(),
            });
            continue;
        }
        if !dupes.insert(child) {
            out.push(Violation::Cycle(child.clone()));
            continue;
        }
        if let Some(h) = check_subtree(tree, child, Some(id), depth + 1, seen, leaves, out) {
            max_child = Some(max_child.map_or(h, |m| m.max(h)));
        }
    }
    let expected = max_child.map_or(node.height, |m| m + 1);
    if node.height != expected {
        out.push(Violation::Height {
            node: id.clone(),
            expected,
            found: node.height,
        });
    }
    Some(expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NodeStatus, TaskNode, TokenBudget, TreeId};
    use std::collections::BTreeMap;

    fn leaf(tree: &str, id: &str, parent: Option<&str>, span: [usize; 2], depth: u32) -> TaskNode {
        TaskNode {
            id: NodeId::from(id),
            tree_id: TreeId::from(tree),
            parent: parent.map(NodeId::from),
            children: vec![],
            height: 0,
            depth,
            char_span: Some(span),
            input_kind: InputKind::OriginalText,
            status: NodeStatus::Planned,
        }
    }

    fn two_leaf_tree(first: [usize; 2], second: [usize; 2]) -> TaskTree {
        let root = TaskNode {
            id: NodeId::from("r"),
            tree_id: TreeId::from("t"),
            parent: None,
            children: vec![NodeId::from("a"), NodeId::from("b")],
            height: 1,
            depth: 0,
            char_span: None,
            input_kind: InputKind::Concatenation,
            status: NodeStatus::Planned,
        };
        let nodes = BTreeMap::from([
            (NodeId::from("r"), root),
            (NodeId::from("a"), leaf("t", "a", Some("r"), first, 1)),
            (NodeId::from("b"), leaf("t", "b", Some("r"), second, 1)),
        ]);
        TaskTree {
            id: TreeId::from("t"),
            book_id: "book".into(),
            seed: 0,
            budget: TokenBudget::default(),
            root: NodeId::from("r"),
            nodes,
        }
    }

    fn book(text: &str) -> BookDocument {
        BookDocument::new("book", "Book", text, Default::default())
    }

    #[test]
    fn single_leaf_is_valid() {
        let text = "word ".repeat(300);
        let b = book(text.trim_end());
        let nodes = BTreeMap::from([(
            NodeId::from("r"),
            leaf("t", "r", None, [0, b.text.len()], 0),
        )]);
        let tree = TaskTree {
            id: TreeId::from("t"),
            book_id: "book".into(),
            seed: 0,
            budget: TokenBudget::default(),
            root: NodeId::from("r"),
            nodes,
        };
        assert_eq!(validate_tree(&tree, &b), vec![]);
    }

    #[test]
    fn overlapping_leaves_give_one_violation() {
        let b = book("abcdefghij");
        let tree = two_leaf_tree([0, 6], [5, 10]);
        let v = validate_tree(&tree, &b);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(v[0], Violation::Overlap { bytes: 1, .. }));
        assert!(v[0].to_string().starts_with("overlap"));
    }

    #[test]
    fn gaps_are_reported() {
        let b = book("abcdefghij");
        let v = validate_tree(&two_leaf_tree([0, 4], [5, 10]), &b);
        assert!(matches!(v.as_slice(), [Violation::Gap { bytes: 1, .. }]));
        let v = validate_tree(&two_leaf_tree([0, 5], [5, 9]), &b);
        assert!(matches!(v.as_slice(), [Violation::Gap { bytes: 1, right: None, .. }]));
    }

    #[test]
    fn unknown_child_is_a_violation_not_a_panic() {
        let b = book("abcdefghij");
        let mut tree = two_leaf_tree([0, 5], [5, 10]);
        tree.nodes
            .get_mut(&NodeId::from("r"))
            .unwrap()
            .children
            .push(NodeId::from("ghost"));
        let v = validate_tree(&tree, &b);
        assert!(v
            .iter()
            .any(|v| matches!(v, Violation::UnknownNode { id, .. } if id.as_str() == "ghost")));
    }

    #[test]
    fn wrong_height_and_depth() {
        let b = book("abcdefghij");
        let mut tree = two_leaf_tree([0, 5], [5, 10]);
        tree.nodes.get_mut(&NodeId::from("r")).unwrap().height = 2;
        tree.nodes.get_mut(&NodeId::from("a")).unwrap().depth = 3;
        let v = validate_tree(&tree, &b);
        assert!(v.iter().any(|v| matches!(v, Violation::Height { expected: 1, found: 2, .. })));
        assert!(v.iter().any(|v| matches!(v, Violation::Depth { expected: 1, found: 3, .. })));
    }

    #[test]
    fn orphan_nodes_are_unreachable() {
        let b = book("abcdefghij");
        let mut tree = two_leaf_tree([0, 5], [5, 10]);
        tree.nodes.insert(
            NodeId::from("z"),
            leaf("t", "z", None, [0, 1], 0),
        );
        let v = validate_tree(&tree, &b);
        assert!(v.contains(&Violation::Unreachable(NodeId::from("z"))));
    }
}
