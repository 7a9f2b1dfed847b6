//! Training-task sampling.
//!
//! Training starts on the first leaves of a book (the leaf children of its
//! first height-1 node), widens to that whole first subtree, and finally
//! covers the full tree.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{EpisodeSpec, EpisodeVariant, NodeId, TaskNode, TaskTree, TreeId};

/// Curriculum stages share their names with the episode variants.
pub type Stage = EpisodeVariant;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CurriculumError {
    #[error("tree has no internal node to compose")]
    NoInternalNode,
    #[error("stage cannot move backward from {from:?} to {to:?}")]
    Backward { from: Stage, to: Stage },
    #[error("sampler state: {0}")]
    State(String),
}

/// The document-first height-1 node and its leaf children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirstSubtree<'a> {
    /// Absent for single-leaf trees.
    pub composition: Option<&'a TaskNode>,
    pub leaves: Vec<&'a TaskNode>,
}

pub fn first_subtree(tree: &TaskTree) -> FirstSubtree<'_> {
    let order = tree.preorder();
    match order.iter().find(|n| n.height == 1) {
        Some(h1) => FirstSubtree {
            composition: Some(h1),
            leaves: h1.children.iter().filter_map(|c| tree.node(c)).collect(),
        },
        None => FirstSubtree {
            composition: None,
            leaves: order.into_iter().filter(|n| n.is_leaf()).take(1).collect(),
        },
    }
}

/// Per-tree sampling pools, built once and reused across draws.
pub struct NodeSampler<'a> {
    first: FirstSubtree<'a>,
    by_depth: Vec<Vec<&'a TaskNode>>,
    internal_by_depth: Vec<Vec<&'a TaskNode>>,
}

impl<'a> NodeSampler<'a> {
    pub fn new(tree: &'a TaskTree) -> Self {
        Self {
            first: first_subtree(tree),
            by_depth: nodes_by_depth(tree, |_| true),
            internal_by_depth: nodes_by_depth(tree, |n| !n.is_leaf()),
        }
    }

    /// Full-tree sampling picks a depth uniformly among occupied depths, then
    /// a node uniformly at that depth.
    pub fn data_node<R: Rng + ?Sized>(&self, stage: Stage, rng: &mut R) -> &'a TaskNode {
        match stage {
            Stage::FirstLeaves => *pick(&self.first.leaves, rng),
            Stage::FirstSubtree => {
                let n = self.first.leaves.len() + usize::from(self.first.composition.is_some());
                let i = rng.random_range(0..n);
                self.first.leaves.get(i).copied().or(self.first.composition).expect("index in range")
            }
            Stage::FullTree => *pick(pick(&self.by_depth, rng), rng),
        }
    }

    pub fn episode<R: Rng + ?Sized>(&self, variant: EpisodeVariant, rng: &mut R) -> Result<EpisodeSpec, CurriculumError> {
        let ids = |nodes: &[&TaskNode]| nodes.iter().map(|n| n.id.clone()).collect::<Vec<_>>();
        match variant {
            EpisodeVariant::FirstLeaves => Ok(EpisodeSpec {
                variant,
                tasks: ids(&self.first.leaves),
                composition_tail: None,
            }),
            EpisodeVariant::FirstSubtree => Ok(EpisodeSpec {
                variant,
                tasks: ids(&self.first.leaves),
                composition_tail: self.first.composition.map(|n| n.id.clone()),
            }),
            EpisodeVariant::FullTree => {
                if self.internal_by_depth.is_empty() {
                    return Err(CurriculumError::NoInternalNode);
                }
                let parent = pick(pick(&self.internal_by_depth, rng), rng);
                Ok(EpisodeSpec {
                    variant,
                    tasks: parent.children.clone(),
                    composition_tail: Some(parent.id.clone()),
                })
            }
        }
    }
}

/// Draws one node for data collection under `stage`.
pub fn sample_data_node<R: Rng + ?Sized>(tree: &TaskTree, stage: Stage, rng: &mut R) -> NodeId {
    NodeSampler::new(tree).data_node(stage, rng).id.clone()
}

/// Builds one training episode.
pub fn make_episode<R: Rng + ?Sized>(
    tree: &TaskTree,
    variant: EpisodeVariant,
    rng: &mut R,
) -> Result<EpisodeSpec, CurriculumError> {
    NodeSampler::new(tree).episode(variant, rng)
}

/// Non-empty per-depth node lists (document order), shallowest first.
fn nodes_by_depth(tree: &TaskTree, keep: impl Fn(&TaskNode) -> bool) -> Vec<Vec<&TaskNode>> {
    (0..=tree.max_depth())
        .map(|d| {
            tree.nodes_at_depth(d)
                .into_iter()
                .filter(|n| keep(n))
                .collect::<Vec<_>>()
        })
        .filter(|level| !level.is_empty())
        .collect()
}

fn pick<'a, T, R: Rng + ?Sized>(items: &'a [T], rng: &mut R) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

/// `count` node samples drawn from a generator seeded with `seed`.
pub fn draw_nodes(tree: &TaskTree, stage: Stage, seed: u64, count: usize) -> Vec<NodeId> {
    let sampler = NodeSampler::new(tree);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| sampler.data_node(stage, &mut rng).id.clone())
        .collect()
}

/// `count` episodes drawn from a generator seeded with `seed`.
pub fn draw_episodes(
    tree: &TaskTree,
    variant: EpisodeVariant,
    seed: u64,
    count: usize,
) -> Result<Vec<EpisodeSpec>, CurriculumError> {
    let sampler = NodeSampler::new(tree);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sampler.episode(variant, &mut rng)).collect()
}

/// Persisted curriculum position. Stages only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub rng_seed: u64,
    pub stage: Stage,
}

impl SamplerState {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            rng_seed,
            stage: Stage::FirstLeaves,
        }
    }

    pub fn advance(&mut self, to: Stage) -> Result<(), CurriculumError> {
        if to < self.stage {
            return Err(CurriculumError::Backward {
                from: self.stage,
                to,
            });
        }
        self.stage = to;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Option<Self>, CurriculumError> {
        match std::fs::read_to_string(path) {
            Ok(raw) => serde_json::from_str(&raw)
                .map(Some)
                .map_err(|e| CurriculumError::State(e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(CurriculumError::State(e.to_string())),
        }
    }

    /// Saves, refusing to overwrite a state that is further along.
    pub fn save(&self, path: &Path) -> Result<(), CurriculumError> {
        if let Some(existing) = Self::load(path)? {
            if existing.stage > self.stage {
                return Err(CurriculumError::Backward {
                    from: existing.stage,
                    to: self.stage,
                });
            }
        }
        let raw = serde_json::to_string_pretty(self).map_err(|e| CurriculumError::State(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, raw)
            .and_then(|_| std::fs::rename(&tmp, path))
            .map_err(|e| CurriculumError::State(e.to_string()))
    }
}

/// One exported sample, for downstream training pipelines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub tree_id: TreeId,
    pub variant: EpisodeVariant,
    pub node_ids: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition_tail: Option<NodeId>,
    pub seed: u64,
}

impl SampleRecord {
    pub fn from_episode(tree_id: TreeId, episode: &EpisodeSpec, seed: u64) -> Self {
        Self {
            tree_id,
            variant: episode.variant,
            node_ids: episode.tasks.clone(),
            composition_tail: episode.composition_tail.clone(),
            seed,
        }
    }

    pub fn from_node(tree_id: TreeId, stage: Stage, node: NodeId, seed: u64) -> Self {
        Self {
            tree_id,
            variant: stage,
            node_ids: vec![node],
            composition_tail: None,
            seed,
        }
    }
}

pub fn write_samples<W: Write>(mut out: W, samples: &[SampleRecord]) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
