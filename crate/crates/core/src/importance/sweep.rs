use super::{build_profile, make_plan, rank_correlation, EntropyProfile, Granularity, PlanInput, PruningPlan};
use crate::error::Error;
use crate::estimators::EstimatorConfig;
use crate::trace::ActivationTrace;

/// One grid entry's outcome. Failures are kept per entry.
#[derive(Debug)]
pub struct SweepRow {
    pub config: EstimatorConfig,
    pub outcome: Result<(EntropyProfile, PruningPlan), Error>,
}

#[derive(Debug)]
pub struct SweepTable {
    pub granularity: Granularity,
    pub rows: Vec<SweepRow>,
    /// Pairwise Spearman correlation of the rows' rankings; `None` where
    /// either row failed or the plans share fewer than two blocks.
    pub correlation: Vec<Vec<Option<f64>>>,
}

impl SweepTable {
    pub fn plan(&self, i: usize) -> Option<&PruningPlan> {
        self.rows[i].outcome.as_ref().ok().map(|(_, p)| p)
    }
}

/// Profiles and ranks the trace once per estimator configuration.
pub fn sweep(trace: &ActivationTrace, grid: &[EstimatorConfig], granularity: Granularity) -> SweepTable {
    let rows: Vec<SweepRow> = grid
        .iter()
        .map(|config| {
            let outcome = build_profile(trace, config, granularity).and_then(|profile| {
                let plan = make_plan(PlanInput::Profile(&profile), 0, None)?;
                Ok((profile, plan))
            });
            SweepRow {
                config: *config,
                outcome,
            }
        })
        .collect();
    let n = rows.len();
    let plan_of = |i: usize| rows[i].outcome.as_ref().ok().map(|(_, p)| p);
    let mut correlation = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i..n {
            let value = match (plan_of(i), plan_of(j)) {
                (Some(a), Some(b)) => rank_correlation(a, b).ok(),
                _ => None,
            };
            correlation[i][j] = value;
            correlation[j][i] = value;
        }
    }
    SweepTable {
        granularity,
        rows,
        correlation,
    }
}

/// Bucket grid used by the hyper-parameter robustness study.
pub fn bin_grid() -> Vec<EstimatorConfig> {
    [20, 40, 80, 160].into_iter().map(EstimatorConfig::bucket).collect()
}

/// Neighbour-count grid used by the hyper-parameter robustness study.
pub fn neighbor_grid() -> Vec<EstimatorConfig> {
    [25, 50, 75, 100].into_iter().map(EstimatorConfig::knn).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, Rng};
    use crate::trace::{Snapshot, SnapshotLabel};

    // Each snapshot takes more distinct integer levels than the last, so
    // every estimator sees entropy rise monotonically and all blocks are eligible.
    fn growing_trace(layers: usize) -> ActivationTrace {
        let mut rng = Rng::new(12);
        let snapshots = SnapshotLabel::sequence(layers)
            .into_iter()
            .enumerate()
            .map(|(i, label)| Snapshot {
                label,
                data: Matrix::from_fn(200, 4, |_, _| (rng.normal() * (i + 1) as f64 * 2.0).round() as f32),
            })
            .collect();
        ActivationTrace::new(snapshots, "sweep", 0).unwrap()
    }

    #[test]
    fn single_entry_grid() {
        let t = sweep(&growing_trace(3), &[EstimatorConfig::bucket(40)], Granularity::FullLayer);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.correlation, vec![vec![Some(1.0)]]);
    }

    #[test]
    fn bin_grid_gives_symmetric_matrix() {
        let t = sweep(&growing_trace(4), &bin_grid(), Granularity::AttentionBlock);
        assert_eq!(t.rows.len(), 4);
        for i in 0..4 {
            assert_eq!(t.correlation[i][i], Some(1.0));
            for j in 0..4 {
                assert_eq!(t.correlation[i][j], t.correlation[j][i]);
            }
        }
    }

    #[test]
    fn duplicate_configs_give_identical_rows() {
        let cfg = EstimatorConfig::knn(5);
        let t = sweep(&growing_trace(2), &[cfg, cfg], Granularity::MlpBlock);
        let (pa, qa) = t.rows[0].outcome.as_ref().unwrap();
        let (pb, qb) = t.rows[1].outcome.as_ref().unwrap();
        assert_eq!(pa, pb);
        assert_eq!(qa, qb);
    }

    #[test]
    fn failing_entry_does_not_abort() {
        let t = sweep(
            &growing_trace(2),
            &[EstimatorConfig::bucket(40), EstimatorConfig::knn(10_000)],
            Granularity::FullLayer,
        );
        assert!(t.rows[0].outcome.is_ok());
        assert!(t.rows[1].outcome.is_err());
        assert_eq!(t.correlation[0][1], None);
    }
}
