//! Token-aware segmentation: matter filtering, boundary detection, chunking
//! and task-tree planning.

mod boundary;
mod chunk;
mod filter;
mod plan;

pub use boundary::{find_boundaries, merge_boundaries, whitespace_boundaries, Boundary, Strength};
pub use chunk::{chunkify_text, forced_cuts, pieces, weighted_cuts, ChunkError, JITTER_FRACTION, WINDOW_FRACTION};
pub use filter::{filter_front_back_matter, FilteredText};
pub use plan::{
    leaf_group_sizes, max_fan_in, plan_tree, tree_id_for, upper_group_sizes, PlanError,
    LEAF_PARENT_FAN_IN, PROMPT_RESERVE, UPPER_FAN_IN,
};
