//! Entropy profiles, stage detection, block ranking and pruning plans.
//!
//! A profile holds the entropy of every block boundary and the entropy
//! increase ΔH of every block. Blocks whose index precedes the stage start
//! (the block right after the entropy minimum) are protected; the rest are
//! ranked by ascending ΔH and the first `k` are pruned. The cosine-distance
//! baseline plugs into the same ranking.

mod cosine;
mod plan;
mod profile;
pub mod report;
mod sweep;

pub use cosine::{cosine_importance, CosineImportance};
pub use plan::{
    make_plan, rank_correlation, Criterion, ImportanceScore, PlanInput, PruningPlan, RankedBlock,
};
pub use profile::{build_profile, detect_stage_start, snapshot_entropies, EntropyProfile, Granularity};
pub use sweep::{bin_grid, neighbor_grid, sweep, SweepRow, SweepTable};
