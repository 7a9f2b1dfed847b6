//! Planning the summarization task tree for a book.
//!
//! The shape is decided bottom-up from the token count: one leaf per
//! `leaf_input_target` tokens, leaves grouped under height-1 nodes of fan-in
//! 10 to 13, and higher levels grouped by at most 8 until a single root
//! remains. Spans are then realized top-down by cutting each node's text into
//! pieces proportional to the number of leaves below each child.

use std::collections::BTreeMap;
use std::ops::Range;

use sha2::{Digest, Sha256};

use super::boundary::{find_boundaries, merge_boundaries, whitespace_boundaries, Boundary};
use super::chunk::{forced_cuts, weighted_cuts};
use super::filter::filter_front_back_matter;
use crate::model::{
    hex16, BookDocument, BudgetError, InputKind, NodeId, NodeStatus, TaskNode, TaskTree,
    TokenBudget, TreeId,
};
use crate::tokenizer::Tokenizer;

/// Fan-in range for height-1 nodes (children are leaves).
pub const LEAF_PARENT_FAN_IN: (usize, usize) = (10, 13);
/// Fan-in range above height 1.
pub const UPPER_FAN_IN: (usize, usize) = (2, 8);
/// Tokens kept free in every composition prompt beyond the concatenated child
/// summaries, the separators and the output, e.g. for a question instruction.
pub const PROMPT_RESERVE: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("book `{0}` has no text left after front/back matter filtering")]
    EmptyText(String),
    #[error(transparent)]
    Budget(#[from] BudgetError),
}

/// Balanced group sizes (larger groups first) for `n` items.
///
/// Among group counts whose balanced sizes fall inside `[lo, hi]`, picks the
/// one with the smallest size variance, ties going to fewer groups. When no
/// count fits, uses the fewest groups of at most `hi`.
pub fn leaf_group_sizes(n: usize, lo: usize, hi: usize) -> Vec<usize> {
    if n <= hi {
        return vec![n];
    }
    let lo = lo.min(hi).max(1);
    let fewest = n.div_ceil(hi);
    let most = n / lo;
    let groups = (fewest..=most)
        .min_by(|&a, &b| {
            balanced_variance(n, a)
                .total_cmp(&balanced_variance(n, b))
                .then(a.cmp(&b))
        })
        .unwrap_or(fewest);
    balanced(n, groups)
}

/// Fewest balanced groups of at most `hi` items.
pub fn upper_group_sizes(n: usize, hi: usize) -> Vec<usize> {
    if n <= hi {
        return vec![n];
    }
    balanced(n, n.div_ceil(hi))
}

fn balanced(n: usize, groups: usize) -> Vec<usize> {
    let q = n / groups;
    let r = n % groups;
    (0..groups).map(|i| if i < r { q + 1 } else { q }).collect()
}

fn balanced_variance(n: usize, groups: usize) -> f64 {
    let r = (n % groups) as f64;
    let g = groups as f64;
    r * (g - r) / (g * g)
}

/// Largest fan-in for a node at `parent_height` whose composition prompt
/// still fits the context window with full-length child summaries.
pub fn max_fan_in(budget: &TokenBudget, tokenizer: &dyn Tokenizer, parent_height: u32) -> usize {
    let child_limit = budget.summary_limit(parent_height.saturating_sub(1));
    let join = tokenizer.count("\n\n");
    let fixed = tokenizer.count("\n====\n") + tokenizer.count("\nTL;DR:") + PROMPT_RESERVE;
    let room = budget
        .context_window
        .saturating_sub(budget.summary_limit(parent_height) + fixed);
    ((room + join) / (child_limit + join).max(1)).max(2)
}

#[derive(Debug, Clone)]
struct Shape {
    leaves: usize,
    height: u32,
    children: Vec<Shape>,
}

fn plan_shape(leaf_count: usize, budget: &TokenBudget, tokenizer: &dyn Tokenizer) -> Shape {
    let mut level: Vec<Shape> = (0..leaf_count)
        .map(|_| Shape {
            leaves: 1,
            height: 0,
            children: Vec::new(),
        })
        .collect();
    let mut height = 0u32;
    while level.len() > 1 {
        let cap = max_fan_in(budget, tokenizer, height + 1);
        let sizes = if height == 0 {
            let (lo, hi) = LEAF_PARENT_FAN_IN;
            leaf_group_sizes(level.len(), lo, hi.min(cap))
        } else {
            upper_group_sizes(level.len(), UPPER_FAN_IN.1.min(cap))
        };
        let mut rest = level.into_iter();
        level = sizes
            .into_iter()
            .map(|size| {
                let children: Vec<Shape> = rest.by_ref().take(size).collect();
                Shape {
                    leaves: children.iter().map(|c| c.leaves).sum(),
                    height: height + 1,
                    children,
                }
            })
            .collect();
        height += 1;
    }
    level.pop().expect("at least one leaf")
}

/// Deterministic tree id for (book, seed, budget).
pub fn tree_id_for(book_id: &str, seed: u64, budget: &TokenBudget) -> TreeId {
    let mut h = Sha256::new();
    h.update(book_id.as_bytes());
    h.update([0]);
    h.update(seed.to_le_bytes());
    h.update(serde_json::to_vec(budget).unwrap_or_default());
    TreeId(format!("tree-{}", hex16(&h.finalize())))
}

struct Realizer<'a> {
    text: &'a str,
    base: usize,
    boundaries: Vec<Boundary>,
    tokenizer: &'a dyn Tokenizer,
    seed: u64,
    tree_id: TreeId,
    nodes: BTreeMap<NodeId, TaskNode>,
    counter: usize,
}

impl Realizer<'_> {
    fn next_id(&mut self) -> NodeId {
        let id = NodeId(format!("{}-n{}", self.tree_id, self.counter));
        self.counter += 1;
        id
    }

    fn boundaries_in(&self, span: &Range<usize>) -> Vec<Boundary> {
        let from = self.boundaries.partition_point(|b| b.offset <= span.start);
        let to = self.boundaries.partition_point(|b| b.offset < span.end);
        self.boundaries[from..to]
            .iter()
            .map(|b| Boundary {
                offset: b.offset - span.start,
                strength: b.strength,
            })
            .collect()
    }

    fn cuts(&self, span: &Range<usize>, weights: &[usize], node_seed: u64) -> Vec<usize> {
        let slice = &self.text[span.clone()];
        let structural = self.boundaries_in(span);
        if let Ok(cuts) = weighted_cuts(slice, weights, &structural, node_seed, self.tokenizer) {
            return cuts;
        }
        let widened = merge_boundaries(&structural, &whitespace_boundaries(slice));
        if let Ok(cuts) = weighted_cuts(slice, weights, &widened, node_seed, self.tokenizer) {
            return cuts;
        }
        tracing::warn!(
            tree = %self.tree_id,
            "no usable whitespace near cut targets; cutting at character boundaries"
        );
        forced_cuts(slice, weights, self.tokenizer)
    }

    fn realize(
        &mut self,
        shape: &Shape,
        span: Range<usize>,
        depth: u32,
        parent: Option<NodeId>,
    ) -> NodeId {
        let id = self.next_id();
        if shape.children.is_empty() {
            self.nodes.insert(
                id.clone(),
                TaskNode {
                    id: id.clone(),
                    tree_id: self.tree_id.clone(),
                    parent,
                    children: Vec::new(),
                    height: 0,
                    depth,
                    char_span: Some([self.base + span.start, self.base + span.end]),
                    input_kind: InputKind::OriginalText,
                    status: NodeStatus::Planned,
                },
            );
            return id;
        }

        let weights: Vec<usize> = shape.children.iter().map(|c| c.leaves).collect();
        let node_seed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(self.counter as u64);
        let mut cuts = self.cuts(&span, &weights, node_seed);
        // forced cuts can come up short on pathological input; pad at the end
        while cuts.len() + 1 < weights.len() {
            cuts.push(span.len());
        }
        let mut child_spans = Vec::with_capacity(weights.len());
        let mut prev = 0;
        for &c in cuts.iter().chain(std::iter::once(&span.len())) {
            child_spans.push(span.start + prev..span.start + c);
            prev = c;
        }

        // reserve the id slot order: parent first, then children in pre-order
        let mut children = Vec::with_capacity(shape.children.len());
        for (child, child_span) in shape.children.iter().zip(child_spans) {
            children.push(self.realize(child, child_span, depth + 1, Some(id.clone())));
        }
        self.nodes.insert(
            id.clone(),
            TaskNode {
                id: id.clone(),
                tree_id: self.tree_id.clone(),
                parent,
                children,
                height: shape.height,
                depth,
                char_span: None,
                input_kind: InputKind::Concatenation,
                status: NodeStatus::Planned,
            },
        );
        id
    }
}

/// Plans the task tree for `book`. Deterministic in (book, budget, tokenizer, seed).
pub fn plan_tree(
    book: &BookDocument,
    budget: &TokenBudget,
    tokenizer: &dyn Tokenizer,
    seed: u64,
) -> Result<TaskTree, PlanError> {
    budget.validate()?;
    let filtered = filter_front_back_matter(&book.text);
    if let Some(warning) = &filtered.warning {
        tracing::warn!(book = %book.id, "{warning}");
    }
    if filtered.text.trim().is_empty() {
        return Err(PlanError::EmptyText(book.id.to_string()));
    }
    let total = tokenizer.count(filtered.text);
    let leaf_count = ((total as f64 / budget.leaf_input_target as f64).round() as usize).max(1);
    let shape = plan_shape(leaf_count, budget, tokenizer);

    let tree_id = tree_id_for(book.id.as_str(), seed, budget);
    let mut realizer = Realizer {
        text: filtered.text,
        base: filtered.body.start,
        boundaries: find_boundaries(filtered.text),
        tokenizer,
        seed,
        tree_id: tree_id.clone(),
        nodes: BTreeMap::new(),
        counter: 0,
    };
    let root = realizer.realize(&shape, 0..filtered.text.len(), 0, None);
    Ok(TaskTree {
        id: tree_id,
        book_id: book.id.clone(),
        seed,
        budget: budget.clone(),
        root,
        nodes: realizer.nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::HeuristicTokenizer;

    /// All compositions of `n` into parts within `[lo, hi]`.
    fn compositions(n: usize, lo: usize, hi: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for first in lo..=hi.min(n) {
            for mut rest in compositions(n - first, lo, hi) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }

    fn variance(parts: &[usize]) -> f64 {
        let mean = parts.iter().sum::<usize>() as f64 / parts.len() as f64;
        parts.iter().map(|&p| (p as f64 - mean).powi(2)).sum::<f64>() / parts.len() as f64
    }

    #[test]
    fn twenty_six_leaves_make_two_groups_of_thirteen() {
        assert_eq!(leaf_group_sizes(26, 10, 13), vec![13, 13]);
    }

    #[test]
    fn leaf_grouping_matches_brute_force() {
        for n in 14..=80 {
            let all = compositions(n, 10, 13);
            if all.is_empty() {
                continue;
            }
            let best = all
                .iter()
                .min_by(|a, b| {
                    variance(a)
                        .total_cmp(&variance(b))
                        .then(a.len().cmp(&b.len()))
                })
                .unwrap();
            let mut expected = best.clone();
            expected.sort_unstable_by(|a, b| b.cmp(a));
            assert_eq!(leaf_group_sizes(n, 10, 13), expected, "n = {n}");
        }
    }

    #[test]
    fn infeasible_counts_still_respect_bounds() {
        for n in 14..=19 {
            let sizes = leaf_group_sizes(n, 10, 13);
            assert_eq!(sizes.iter().sum::<usize>(), n);
            assert!(sizes.iter().all(|&s| (5..=13).contains(&s)), "{n}: {sizes:?}");
        }
    }

    #[test]
    fn upper_grouping() {
        assert_eq!(upper_group_sizes(20, 8), vec![7, 7, 6]);
        assert_eq!(upper_group_sizes(8, 8), vec![8]);
        assert_eq!(upper_group_sizes(9, 8), vec![5, 4]);
    }

    #[test]
    fn fan_in_caps_follow_the_window() {
        let b = TokenBudget::default();
        let t = HeuristicTokenizer;
        assert_eq!(max_fan_in(&b, &t, 1), 13);
        assert_eq!(max_fan_in(&b, &t, 2), 8);
        assert_eq!(max_fan_in(&b, &t, 3), 4);
    }

    #[test]
    fn two_hundred_leaves_shape() {
        let shape = plan_shape(200, &TokenBudget::default(), &HeuristicTokenizer);
        assert_eq!(shape.height, 3);
        assert_eq!(shape.leaves, 200);
        let h1: usize = shape.children.iter().map(|c| c.children.len()).sum();
        assert_eq!(h1, 20);
    }

    #[test]
    fn tiny_book_is_a_single_leaf() {
        let text = (0..40)
            .map(|i| format!("Short line {i} here."))
            .collect::<Vec<_>>()
            .join(" ");
        let book = BookDocument::new("b", "t", &text, Default::default());
        let tree = plan_tree(&book, &TokenBudget::default(), &HeuristicTokenizer, 1).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        let root = tree.root_node();
        assert_eq!(root.height, 0);
        assert_eq!(root.char_span, Some([0, text.len()]));
    }

    #[test]
    fn empty_book_is_rejected() {
        let book = BookDocument::new("b", "t", "   \n ", Default::default());
        assert!(matches!(
            plan_tree(&book, &TokenBudget::default(), &HeuristicTokenizer, 1),
            Err(PlanError::EmptyText(_))
        ));
    }
}
