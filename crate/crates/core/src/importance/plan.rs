use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{CosineImportance, EntropyProfile, Granularity};
use crate::error::{Error, Result};
use crate::estimators::EstimatorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// ΔH of the block; smallest increase is pruned first.
    EntropyIncrease,
    /// Mean `1 − cos` between block input and output; most similar first.
    CosineDistance,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::EntropyIncrease => "entropy",
            Criterion::CosineDistance => "cosine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScore {
    pub block: usize,
    pub score: f64,
    pub criterion: Criterion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedBlock {
    pub block: usize,
    pub score: f64,
}

/// Eligible blocks in ascending score order and the `k` of them to remove.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningPlan {
    pub granularity: Granularity,
    pub criterion: Criterion,
    pub estimator: Option<EstimatorConfig>,
    pub block_count: usize,
    pub s_start: usize,
    pub k: usize,
    pub ranked: Vec<RankedBlock>,
    /// The first `k` entries of `ranked`, in ranking order.
    pub prune_set: Vec<usize>,
}

impl PruningPlan {
    /// The first `k` blocks of the ranking; `k` may exceed the plan's own `k`
    /// up to the eligible count.
    pub fn prefix(&self, k: usize) -> Result<Vec<usize>> {
        if k > self.ranked.len() {
            return Err(Error::Capacity {
                requested: k,
                eligible: self.ranked.len(),
            });
        }
        Ok(self.ranked[..k].iter().map(|r| r.block).collect())
    }

    pub fn eligible_count(&self) -> usize {
        self.ranked.len()
    }
}

/// What a plan is ranked from.
#[derive(Debug, Clone, Copy)]
pub enum PlanInput<'a> {
    Profile(&'a EntropyProfile),
    Cosine(&'a CosineImportance),
    Scores {
        scores: &'a [ImportanceScore],
        granularity: Granularity,
        block_count: usize,
    },
}

/// Ranks blocks with index `>= s_start` by ascending score (ties to the lower
/// index) and takes the first `k`.
///
/// `s_start` defaults to the profile's detected stage start for entropy
/// profiles and to 1 (every block eligible) for bare scores.
pub fn make_plan(input: PlanInput<'_>, k: usize, s_start_override: Option<usize>) -> Result<PruningPlan> {
    let (scores, granularity, block_count, default_start, estimator): (
        Vec<ImportanceScore>,
        _,
        _,
        _,
        _,
    ) = match input {
        PlanInput::Profile(p) => (
            p.delta_h
                .iter()
                .enumerate()
                .map(|(i, &d)| ImportanceScore {
                    block: i + 1,
                    score: d,
                    criterion: Criterion::EntropyIncrease,
                })
                .collect(),
            p.granularity,
            p.block_count,
            p.stage_start(),
            Some(p.estimator),
        ),
        PlanInput::Cosine(c) => (c.scores.clone(), c.granularity, c.scores.len(), 1, None),
        PlanInput::Scores {
            scores,
            granularity,
            block_count,
        } => (scores.to_vec(), granularity, block_count, 1, None),
    };
    let criterion = scores
        .first()
        .map_or(Criterion::EntropyIncrease, |s| s.criterion);
    let mut seen = vec![false; block_count + 1];
    for s in &scores {
        if s.criterion != criterion {
            return Err(Error::contract("scores mix importance criteria"));
        }
        if !s.score.is_finite() {
            return Err(Error::contract(format!("block {} has a non-finite score", s.block)));
        }
        if s.block == 0 || s.block > block_count || seen[s.block] {
            return Err(Error::contract(format!(
                "block index {} is out of range or repeated (block_count {block_count})",
                s.block
            )));
        }
        seen[s.block] = true;
    }
    let s_start = s_start_override.unwrap_or(default_start);
    let mut ranked: Vec<RankedBlock> = scores
        .iter()
        .filter(|s| s.block >= s_start)
        .map(|s| RankedBlock {
            block: s.block,
            score: s.score,
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.score
            .partial_cmp(&b.score)
            .unwrap_or(Ordering::Equal)
            .then(a.block.cmp(&b.block))
    });
    if k > ranked.len() {
        return Err(Error::Capacity {
            requested: k,
            eligible: ranked.len(),
        });
    }
    let prune_set = ranked[..k].iter().map(|r| r.block).collect();
    Ok(PruningPlan {
        granularity,
        criterion,
        estimator,
        block_count,
        s_start,
        k,
        ranked,
        prune_set,
    })
}

/// Spearman rank correlation of two plans' rankings over the blocks both
/// consider eligible.
pub fn rank_correlation(a: &PruningPlan, b: &PruningPlan) -> Result<f64> {
    if a.granularity != b.granularity || a.block_count != b.block_count {
        return Err(Error::contract(format!(
            "plans rank different block sets: {} x{} vs {} x{}",
            a.granularity, a.block_count, b.granularity, b.block_count
        )));
    }
    let in_b: HashMap<usize, usize> = b
        .ranked
        .iter()
        .enumerate()
        .map(|(pos, r)| (r.block, pos))
        .collect();
    let shared: Vec<(usize, usize)> = a
        .ranked
        .iter()
        .enumerate()
        .filter_map(|(pos, r)| in_b.get(&r.block).map(|&pb| (pos, pb)))
        .collect();
    let n = shared.len();
    if n < 2 {
        return Err(Error::contract(format!(
            "rank correlation needs at least 2 shared eligible blocks, found {n}"
        )));
    }
    // compress positions to dense ranks within the shared set
    let dense = |mut positions: Vec<usize>| {
        let mut order: Vec<usize> = (0..positions.len()).collect();
        order.sort_by_key(|&i| positions[i]);
        for (rank, &i) in order.iter().enumerate() {
            positions[i] = rank;
        }
        positions
    };
    let ra = dense(shared.iter().map(|s| s.0).collect());
    let rb = dense(shared.iter().map(|s| s.1).collect());
    let d2: f64 = ra
        .iter()
        .zip(&rb)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let n = n as f64;
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn entropy_scores(values: &[f64]) -> Vec<ImportanceScore> {
        values
            .iter()
            .enumerate()
            .map(|(i, &score)| ImportanceScore {
                block: i + 1,
                score,
                criterion: Criterion::EntropyIncrease,
            })
            .collect()
    }

    fn plan(values: &[f64], k: usize, s_start: usize) -> Result<PruningPlan> {
        let scores = entropy_scores(values);
        make_plan(
            PlanInput::Scores {
                scores: &scores,
                granularity: Granularity::AttentionBlock,
                block_count: values.len(),
            },
            k,
            Some(s_start),
        )
    }

    #[test]
    fn smallest_increase_is_pruned() {
        let p = plan(&[9.0, 0.10, 0.50, 0.05], 1, 2).unwrap();
        assert_eq!(p.prune_set, vec![4]);
        assert_eq!(p.ranked.iter().map(|r| r.block).collect::<Vec<_>>(), vec![4, 2, 3]);
    }

    #[test]
    fn k_zero_returns_full_ranking() {
        let p = plan(&[0.3, 0.2, 0.1], 0, 1).unwrap();
        assert!(p.prune_set.is_empty());
        assert_eq!(p.ranked.len(), 3);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let p = plan(&[0.4, 0.1, 0.1, 0.3], 1, 1).unwrap();
        assert_eq!(p.prune_set, vec![2]);
    }

    #[test]
    fn capacity_error_reports_eligible() {
        match plan(&[0.1, 0.2, 0.3, 0.4], 3, 3) {
            Err(Error::Capacity {
                requested,
                eligible,
            }) => assert_eq!((requested, eligible), (3, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn s_start_zero_makes_everything_eligible() {
        assert_eq!(plan(&[0.1, 0.2], 2, 0).unwrap().prune_set, vec![1, 2]);
    }

    #[test]
    fn full_k_prunes_eligible_set_in_order() {
        let p = plan(&[0.5, 0.4, 0.3, 0.2, 0.1], 3, 3).unwrap();
        assert_eq!(p.prune_set, vec![5, 4, 3]);
    }

    #[test]
    fn rejects_bad_scores() {
        assert!(plan(&[0.1, f64::NAN], 0, 1).is_err());
        let mut s = entropy_scores(&[0.1, 0.2]);
        s[1].block = 1;
        assert!(make_plan(
            PlanInput::Scores {
                scores: &s,
                granularity: Granularity::MlpBlock,
                block_count: 2
            },
            0,
            None
        )
        .is_err());
    }

    #[test]
    fn correlation_identity_and_reversal() {
        let a = plan(&[0.1, 0.2, 0.3, 0.4, 0.5], 0, 1).unwrap();
        let b = plan(&[0.5, 0.4, 0.3, 0.2, 0.1], 0, 1).unwrap();
        assert_eq!(rank_correlation(&a, &a).unwrap(), 1.0);
        assert_eq!(rank_correlation(&a, &b).unwrap(), -1.0);
    }

    // Oracle: Pearson correlation of rank vectors, computed from scratch.
    fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap().then(i.cmp(&j)));
            let mut r = vec![0.0; v.len()];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos as f64;
            }
            r
        };
        let (rx, ry) = (rank(x), rank(y));
        let n = x.len() as f64;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn correlation_matches_pearson_on_ranks() {
        let mut rng = Rng::new(31);
        for _ in 0..20 {
            let x: Vec<f64> = (0..9).map(|_| rng.normal()).collect();
            let y: Vec<f64> = x.iter().map(|v| v + 0.7 * rng.normal()).collect();
            let got = rank_correlation(&plan(&x, 0, 1).unwrap(), &plan(&y, 0, 1).unwrap()).unwrap();
            assert!((got - spearman_oracle(&x, &y)).abs() < 1e-9);
        }
    }

    #[test]
    fn correlation_uses_shared_blocks_only() {
        let a = plan(&[0.9, 0.1, 0.2, 0.3], 0, 1).unwrap();
        let b = plan(&[0.9, 0.1, 0.2, 0.3], 0, 2).unwrap();
        assert_eq!(rank_correlation(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn correlation_rejects_mismatched_plans() {
        let a = plan(&[0.1, 0.2, 0.3], 0, 1).unwrap();
        let b = plan(&[0.1, 0.2, 0.3, 0.4], 0, 1).unwrap();
        assert!(matches!(rank_correlation(&a, &b), Err(Error::Contract(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn argsort_invariant_under_affine(values in prop::collection::vec(-5.0f64..5.0, 1..20),
                                              k_frac in 0.0f64..1.0, s_start in 0usize..4) {
                let eligible = values.iter().enumerate().filter(|(i, _)| i + 1 >= s_start).count();
                let k = ((eligible as f64) * k_frac) as usize;
                let mapped: Vec<f64> = values.iter().map(|v| 2.0 * v + 1.0).collect();
                let a = plan(&values, k, s_start).unwrap();
                let b = plan(&mapped, k, s_start).unwrap();
                prop_assert_eq!(&a.prune_set, &b.prune_set);
                let ra: Vec<usize> = a.ranked.iter().map(|r| r.block).collect();
                let rb: Vec<usize> = b.ranked.iter().map(|r| r.block).collect();
                prop_assert_eq!(ra, rb);
                prop_assert!(a.prune_set.iter().all(|&blk| blk >= s_start));
            }
        }
    }
}
