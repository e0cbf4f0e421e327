//! Plain-text outputs: block tables as CSV and plans as JSON.
//!
//! Block tables share one header:
//!
//! ```text
//! block_index,position,h_nats,delta_h_nats,score,rank,pruned
//! ```
//!
//! preceded by `#`-prefixed metadata lines (`# estimator: <json>`,
//! `# granularity: <name>`, `# s_start: <n>`). Row 0 of a profile is the
//! input boundary of block 1 and only carries `h_nats`. `rank` is the 1-based
//! position in the plan's ranking and is empty for protected blocks.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    Criterion, EntropyProfile, Granularity, PruningPlan, RankedBlock, SweepTable,
};
use crate::error::{Error, Result};
use crate::estimators::EstimatorConfig;

pub const CSV_HEADER: &str = "block_index,position,h_nats,delta_h_nats,score,rank,pruned";

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn metadata(out: &mut String, estimator: Option<&EstimatorConfig>, g: Granularity, s_start: Option<usize>) {
    if let Some(e) = estimator {
        let json = serde_json::to_string(e).expect("estimator config serialises");
        let _ = writeln!(out, "# estimator: {json}");
    }
    let _ = writeln!(out, "# granularity: {g}");
    if let Some(s) = s_start {
        let _ = writeln!(out, "# s_start: {s}");
    }
}

/// Profile as CSV; rank/pruned columns are filled from `plan` when given.
pub fn profile_to_csv(profile: &EntropyProfile, plan: Option<&PruningPlan>) -> String {
    let ranks: HashMap<usize, usize> = plan
        .map(|p| p.ranked.iter().enumerate().map(|(i, r)| (r.block, i + 1)).collect())
        .unwrap_or_default();
    let pruned: Vec<usize> = plan.map(|p| p.prune_set.clone()).unwrap_or_default();
    let mut out = String::new();
    metadata(
        &mut out,
        Some(&profile.estimator),
        profile.granularity,
        Some(plan.map_or_else(|| profile.stage_start(), |p| p.s_start)),
    );
    out.push_str(CSV_HEADER);
    out.push('\n');
    let _ = writeln!(out, "0,input,{},,,,", profile.h_values[0]);
    for b in 1..=profile.block_count {
        let delta = profile.delta_h[b - 1];
        let _ = writeln!(
            out,
            "{b},{},{},{delta},{delta},{},{}",
            profile.granularity,
            profile.h_values[b],
            opt(ranks.get(&b)),
            pruned.contains(&b)
        );
    }
    out
}

/// Plan as CSV: one row per block, scores from the plan's criterion.
pub fn plan_to_csv(plan: &PruningPlan) -> String {
    let mut out = String::new();
    metadata(&mut out, plan.estimator.as_ref(), plan.granularity, Some(plan.s_start));
    out.push_str(CSV_HEADER);
    out.push('\n');
    let by_block: HashMap<usize, (usize, f64)> = plan
        .ranked
        .iter()
        .enumerate()
        .map(|(i, r)| (r.block, (i + 1, r.score)))
        .collect();
    for b in 1..=plan.block_count {
        let entry = by_block.get(&b);
        let score = entry.map(|e| e.1);
        let delta = match plan.criterion {
            Criterion::EntropyIncrease => score,
            Criterion::CosineDistance => None,
        };
        let _ = writeln!(
            out,
            "{b},{},,{},{},{},{}",
            plan.granularity,
            opt(delta),
            opt(score),
            opt(entry.map(|e| e.0)),
            plan.prune_set.contains(&b)
        );
    }
    out
}

/// Reads a profile written by [`profile_to_csv`].
///
/// Per-snapshot entropies are not part of the CSV and come back as `None`.
pub fn parse_profile_csv(text: &str) -> Result<EntropyProfile> {
    let mut estimator = None;
    let mut granularity = None;
    let mut header_seen = false;
    let mut h_values = Vec::new();
    let mut delta_h = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("profile CSV line {}: {what}", lineno + 1));
        if let Some(meta) = line.strip_prefix('#') {
            let (key, value) = meta.split_once(':').ok_or_else(|| bad("malformed metadata"))?;
            match key.trim() {
                "estimator" => {
                    estimator = Some(
                        serde_json::from_str::<EstimatorConfig>(value.trim())
                            .map_err(|e| bad(&format!("estimator: {e}")))?,
                    )
                }
                "granularity" => granularity = Some(value.trim().parse::<Granularity>()?),
                _ => {}
            }
            continue;
        }
        if !header_seen {
            if line != CSV_HEADER {
                return Err(bad("unexpected header"));
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad("expected 7 columns"));
        }
        let index: usize = fields[0].parse().map_err(|_| bad("block_index"))?;
        if index != h_values.len() {
            return Err(bad("block rows out of order"));
        }
        let h: f64 = fields[2].parse().map_err(|_| bad("h_nats"))?;
        h_values.push(h);
        if index > 0 {
            delta_h.push(fields[3].parse::<f64>().map_err(|_| bad("delta_h_nats"))?);
        }
    }
    let estimator = estimator.ok_or_else(|| Error::Format("profile CSV lacks estimator metadata".into()))?;
    let granularity =
        granularity.ok_or_else(|| Error::Format("profile CSV lacks granularity metadata".into()))?;
    if delta_h.is_empty() {
        return Err(Error::Format("profile CSV has no block rows".into()));
    }
    let block_count = delta_h.len();
    Ok(EntropyProfile {
        estimator,
        granularity,
        block_count,
        h_values,
        delta_h,
        snapshot_h: vec![None; 2 * block_count + 1],
        sample_size: 0,
    })
}

/// JSON shape of a plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub granularity: Granularity,
    pub criterion: Criterion,
    pub estimator: Option<EstimatorConfig>,
    pub s_start: usize,
    pub k: usize,
    pub block_count: usize,
    pub ranked: Vec<usize>,
    pub scores: Vec<f64>,
    pub prune_set: Vec<usize>,
}

impl From<&PruningPlan> for PlanDocument {
    fn from(p: &PruningPlan) -> Self {
        Self {
            granularity: p.granularity,
            criterion: p.criterion,
            estimator: p.estimator,
            s_start: p.s_start,
            k: p.k,
            block_count: p.block_count,
            ranked: p.ranked.iter().map(|r| r.block).collect(),
            scores: p.ranked.iter().map(|r| r.score).collect(),
            prune_set: p.prune_set.clone(),
        }
    }
}

impl TryFrom<PlanDocument> for PruningPlan {
    type Error = Error;

    fn try_from(d: PlanDocument) -> Result<Self> {
        if d.ranked.len() != d.scores.len() {
            return Err(Error::Format("plan ranked/scores lengths differ".into()));
        }
        if d.prune_set.len() != d.k || d.k > d.ranked.len() || d.prune_set[..] != d.ranked[..d.k] {
            return Err(Error::Format("plan prune_set is not the first k ranked blocks".into()));
        }
        if d.ranked.iter().any(|&b| b == 0 || b > d.block_count || b < d.s_start) {
            return Err(Error::Format("plan ranks a block outside the eligible range".into()));
        }
        Ok(PruningPlan {
            granularity: d.granularity,
            criterion: d.criterion,
            estimator: d.estimator,
            block_count: d.block_count,
            s_start: d.s_start,
            k: d.k,
            ranked: d
                .ranked
                .iter()
                .zip(&d.scores)
                .map(|(&block, &score)| RankedBlock { block, score })
                .collect(),
            prune_set: d.prune_set,
        })
    }
}

pub fn plan_to_json(plan: &PruningPlan) -> String {
    serde_json::to_string_pretty(&PlanDocument::from(plan)).expect("plan serialises")
}

pub fn plan_from_json(text: &str) -> Result<PruningPlan> {
    let doc: PlanDocument =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("plan JSON: {e}")))?;
    doc.try_into()
}

/// Human-readable ranking table.
pub fn plan_table(plan: &PruningPlan) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "criterion: {}  granularity: {}  s_start: {}  k: {}",
        plan.criterion.name(),
        plan.granularity,
        plan.s_start,
        plan.k
    );
    let _ = writeln!(out, "{:>5} {:>6} {:>16} {:>7}", "rank", "block", "score", "pruned");
    for (i, r) in plan.ranked.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:>5} {:>6} {:>16.8} {:>7}",
            i + 1,
            r.block,
            r.score,
            if i < plan.k { "yes" } else { "" }
        );
    }
    out
}

/// One row per grid entry (`config,status,ranking`) followed by the
/// correlation matrix.
pub fn sweep_to_csv(table: &SweepTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# granularity: {}", table.granularity);
    out.push_str("entry,estimator,s_start,ranking\n");
    for (i, row) in table.rows.iter().enumerate() {
        match &row.outcome {
            Ok((_, plan)) => {
                let ranking: Vec<String> = plan.ranked.iter().map(|r| r.block.to_string()).collect();
                let _ = writeln!(out, "{i},{},{},{}", row.config.kind, plan.s_start, ranking.join(" "));
            }
            Err(e) => {
                let _ = writeln!(out, "{i},{},,error: {}", row.config.kind, e.to_string().replace(',', ";"));
            }
        }
    }
    out.push_str("\ncorrelation");
    for i in 0..table.rows.len() {
        let _ = write!(out, ",{i}");
    }
    out.push('\n');
    for (i, row) in table.correlation.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            let _ = write!(out, ",{}", opt(*v));
        }
        out.push('\n');
    }
    out
}
