use serde::{Deserialize, Serialize};

use super::{Criterion, Granularity, ImportanceScore};
use crate::error::{Error, Result};
use crate::numerics::dot;
use crate::trace::ActivationTrace;

/// Cosine-distance importance of every block, plus how many token rows had
/// to be skipped because one of their vectors had zero norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineImportance {
    pub granularity: Granularity,
    pub scores: Vec<ImportanceScore>,
    pub excluded_tokens: Vec<usize>,
}

/// `1 − cos(xₜ, yₜ)` averaged over tokens, between each block's input and
/// output snapshot rows.
pub fn cosine_importance(
    trace: &ActivationTrace,
    granularity: Granularity,
) -> Result<CosineImportance> {
    let layers = trace.layer_count()?;
    let snaps = trace.snapshots();
    let mut scores = Vec::with_capacity(layers);
    let mut excluded_tokens = Vec::with_capacity(layers);
    for block in 1..=layers {
        let (i, o) = granularity.snapshot_pair(block);
        let (x, y) = (&snaps[i].data, &snaps[o].data);
        let mut total = 0.0;
        let mut used = 0usize;
        for t in 0..x.rows() {
            let (xr, yr) = (x.row(t), y.row(t));
            let nx = dot(xr, xr).sqrt();
            let ny = dot(yr, yr).sqrt();
            if nx == 0.0 || ny == 0.0 {
                continue;
            }
            let cos = (dot(xr, yr) / (nx * ny)).clamp(-1.0, 1.0);
            total += 1.0 - cos;
            used += 1;
        }
        if used == 0 {
            return Err(Error::Degenerate(format!(
                "block {block} ({granularity}): every token vector has zero norm"
            )));
        }
        scores.push(ImportanceScore {
            block,
            score: total / used as f64,
            criterion: Criterion::CosineDistance,
        });
        excluded_tokens.push(x.rows() - used);
    }
    Ok(CosineImportance {
        granularity,
        scores,
        excluded_tokens,
    })
}
