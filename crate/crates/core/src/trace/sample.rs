use serde::{Deserialize, Serialize};

use super::ActivationTrace;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Which token rows are candidates before random down-sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TokenScope {
    /// Every captured position.
    #[default]
    All,
    /// Rows `offset, offset + period, ...`. With fixed-length calibration
    /// sequences of length `period`, `offset = period - 1` keeps only the
    /// last token of each sequence.
    Strided { period: usize, offset: usize },
}

/// Bounds how many token rows feed entropy estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePolicy {
    pub max_tokens: usize,
    pub seed: u64,
    #[serde(default)]
    pub scope: TokenScope,
}

impl Default for SamplePolicy {
    fn default() -> Self {
        Self {
            max_tokens: 4096,
            seed: 0,
            scope: TokenScope::All,
        }
    }
}

impl SamplePolicy {
    pub fn new(max_tokens: usize, seed: u64) -> Result<Self> {
        let p = Self {
            max_tokens,
            seed,
            scope: TokenScope::All,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens < 2 {
            return Err(Error::contract(format!(
                "max_tokens must be at least 2, got {}",
                self.max_tokens
            )));
        }
        if let TokenScope::Strided { period, offset } = self.scope {
            if period == 0 || offset >= period {
                return Err(Error::contract(format!(
                    "strided scope needs 0 <= offset < period, got offset {offset}, period {period}"
                )));
            }
        }
        Ok(())
    }

    /// Row indices kept out of `token_count`, ascending. Depends only on
    /// `(token_count, self)`, so every snapshot of a trace gets the same rows.
    pub fn select(&self, token_count: usize) -> Vec<usize> {
        let candidates: Vec<usize> = match self.scope {
            TokenScope::All => (0..token_count).collect(),
            TokenScope::Strided { period, offset } => {
                (offset..token_count).step_by(period.max(1)).collect()
            }
        };
        if candidates.len() <= self.max_tokens {
            return candidates;
        }
        let mut rng = Rng::new(self.seed);
        rng.sample_indices(candidates.len(), self.max_tokens)
            .into_iter()
            .map(|i| candidates[i])
            .collect()
    }

    /// Applies the policy to a single sample matrix.
    pub fn apply(&self, sample: &Matrix) -> Matrix {
        let rows = self.select(sample.rows());
        if rows.len() == sample.rows() {
            return sample.clone();
        }
        sample.select_rows(&rows)
    }
}

/// Keeps the same seeded subset of token rows in every snapshot.
///
/// Idempotent under [`TokenScope::All`]; a strided scope re-strides.
pub fn subsample(trace: &ActivationTrace, policy: &SamplePolicy) -> Result<ActivationTrace> {
    policy.validate()?;
    let rows = policy.select(trace.token_count());
    if rows.len() == trace.token_count() {
        return Ok(trace.clone());
    }
    if rows.is_empty() {
        return Err(Error::contract("sample policy selects no token rows"));
    }
    Ok(trace.map_snapshots(|m| m.select_rows(&rows)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Snapshot, SnapshotLabel};

    fn numbered_trace(tokens: usize, layers: usize) -> ActivationTrace {
        // entry (t, c) of snapshot s encodes (s, t) so row provenance is recoverable
        let snapshots = SnapshotLabel::sequence(layers)
            .into_iter()
            .enumerate()
            .map(|(s, label)| Snapshot {
                label,
                data: Matrix::from_fn(tokens, 2, |t, c| (s * 100_000 + t) as f32 + c as f32 * 0.5),
            })
            .collect();
        ActivationTrace::new(snapshots, "numbered", 7).unwrap()
    }

    #[test]
    fn large_budget_is_noop() {
        let t = numbered_trace(50, 1);
        let p = SamplePolicy::new(50, 1).unwrap();
        assert_eq!(subsample(&t, &p).unwrap(), t);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let t = numbered_trace(10_000, 1);
        let p = SamplePolicy::new(1_000, 99).unwrap();
        let a = subsample(&t, &p).unwrap();
        let b = subsample(&t, &p).unwrap();
        assert_eq!(a.token_count(), 1_000);
        assert_eq!(a, b);
        assert_ne!(p.select(10_000), SamplePolicy::new(1_000, 100).unwrap().select(10_000));
    }

    #[test]
    fn snapshots_share_row_provenance() {
        let t = numbered_trace(500, 2);
        let s = subsample(&t, &SamplePolicy::new(37, 5).unwrap()).unwrap();
        let first: Vec<f32> = s.snapshots()[0].data.iter_rows().map(|r| r[0]).collect();
        for (i, snap) in s.snapshots().iter().enumerate() {
            let rows: Vec<f32> = snap
                .data
                .iter_rows()
                .map(|r| r[0] - (i * 100_000) as f32)
                .collect();
            assert_eq!(rows, first);
        }
    }

    #[test]
    fn subsample_is_idempotent() {
        let t = numbered_trace(300, 1);
        let p = SamplePolicy::new(64, 3).unwrap();
        let once = subsample(&t, &p).unwrap();
        assert_eq!(subsample(&once, &p).unwrap(), once);
    }

    #[test]
    fn rejects_tiny_budget() {
        assert!(SamplePolicy::new(1, 0).is_err());
    }

    #[test]
    fn strided_scope_keeps_last_tokens() {
        let p = SamplePolicy {
            max_tokens: 100,
            seed: 0,
            scope: TokenScope::Strided { period: 8, offset: 7 },
        };
        assert_eq!(p.select(32), vec![7, 15, 23, 31]);
    }
}
