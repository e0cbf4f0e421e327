//! Entropy-increase pruning of Transformer computation blocks.
//!
//! The pipeline: capture an [`trace::ActivationTrace`] of residual-stream
//! snapshots on calibration data, estimate the entropy of every snapshot with
//! one of the [`estimators`], turn adjacent differences into per-block entropy
//! increases ([`importance::EntropyProfile`]), protect the blocks before the
//! entropy minimum, and prune the `k` remaining blocks with the smallest
//! increase ([`importance::PruningPlan`]). The [`model`] module supplies a
//! small decoder-only Transformer to generate traces and measure what pruning
//! costs in perplexity and saves in latency.

pub mod error;
pub mod estimators;
pub mod importance;
pub mod model;
pub mod numerics;
pub mod trace;

pub use error::{Error, Result};
pub use estimators::{estimate, EntropyValue, EstimatorConfig, EstimatorKind};
pub use importance::{
    build_profile, cosine_importance, detect_stage_start, make_plan, rank_correlation, sweep,
    Criterion, EntropyProfile, Granularity, ImportanceScore, PlanInput, PruningPlan,
};
pub use model::{BlockMask, SyntheticCorpus, ToyModelConfig, ToyTransformer};
pub use numerics::{Matrix, Rng};
pub use trace::{read_trace, subsample, write_trace, ActivationTrace, SamplePolicy, SnapshotLabel};
