use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_prepared, EstimatorConfig};
use crate::trace::{subsample, ActivationTrace};

/// Which computation unit is ranked and removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Granularity {
    #[serde(rename = "layer")]
    FullLayer,
    #[serde(rename = "attention")]
    AttentionBlock,
    #[serde(rename = "mlp")]
    MlpBlock,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [
        Granularity::FullLayer,
        Granularity::AttentionBlock,
        Granularity::MlpBlock,
    ];

    /// `(input, output)` snapshot indices of block `block` (1-based) in the
    /// `2L + 1` snapshot sequence.
    pub fn snapshot_pair(self, block: usize) -> (usize, usize) {
        assert!(block >= 1, "blocks are numbered from 1");
        let l = block - 1;
        match self {
            Granularity::FullLayer => (2 * l, 2 * l + 2),
            Granularity::AttentionBlock => (2 * l, 2 * l + 1),
            Granularity::MlpBlock => (2 * l + 1, 2 * l + 2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Granularity::FullLayer => "layer",
            Granularity::AttentionBlock => "attention",
            Granularity::MlpBlock => "mlp",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layer" | "full-layer" | "full_layer" => Ok(Granularity::FullLayer),
            "attention" | "attn" => Ok(Granularity::AttentionBlock),
            "mlp" => Ok(Granularity::MlpBlock),
            other => Err(Error::Input(format!(
                "unknown granularity '{other}' (expected layer, attention or mlp)"
            ))),
        }
    }
}

/// Entropy of every block boundary and the entropy increase of every block,
/// for one estimator and one granularity.
///
/// Blocks are numbered `1..=block_count`. `h_values[0]` is the entropy of the
/// first block's input and `h_values[b]` the entropy of block `b`'s output.
/// For [`Granularity::FullLayer`] adjacent differences of `h_values` are the
/// `delta_h`; for sub-blocks the input of block `b` is not the output of block
/// `b - 1`, and `delta_h` is taken from `snapshot_h` directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyProfile {
    pub estimator: EstimatorConfig,
    pub granularity: Granularity,
    pub block_count: usize,
    pub h_values: Vec<f64>,
    pub delta_h: Vec<f64>,
    /// Entropy of each of the `2L + 1` snapshots, where it was needed.
    pub snapshot_h: Vec<Option<f64>>,
    pub sample_size: usize,
}

impl EntropyProfile {
    /// Derives the profile for `granularity` from per-snapshot entropies.
    pub fn from_snapshot_entropies(
        snapshot_h: Vec<Option<f64>>,
        granularity: Granularity,
        estimator: EstimatorConfig,
        sample_size: usize,
    ) -> Result<Self> {
        let n = snapshot_h.len();
        if n < 3 || n % 2 == 0 {
            return Err(Error::Structural(format!(
                "{n} snapshot entropies do not form a 2L+1 sequence"
            )));
        }
        let block_count = (n - 1) / 2;
        let get = |i: usize| {
            snapshot_h[i].ok_or_else(|| {
                Error::Structural(format!("entropy of snapshot {i} was not computed"))
            })
        };
        let mut h_values = Vec::with_capacity(block_count + 1);
        let mut delta_h = Vec::with_capacity(block_count);
        h_values.push(get(granularity.snapshot_pair(1).0)?);
        for b in 1..=block_count {
            let (input, output) = granularity.snapshot_pair(b);
            let out = get(output)?;
            h_values.push(out);
            delta_h.push(out - get(input)?);
        }
        Ok(Self {
            estimator,
            granularity,
            block_count,
            h_values,
            delta_h,
            snapshot_h,
            sample_size,
        })
    }

    /// Index of the first block after the stage-1 entropy minimum.
    pub fn stage_start(&self) -> usize {
        detect_stage_start(&self.h_values)
    }
}

/// Snapshot indices a granularity needs entropies for.
fn needed_snapshots(granularity: Granularity, layers: usize) -> Vec<bool> {
    let mut needed = vec![false; 2 * layers + 1];
    for b in 1..=layers {
        let (i, o) = granularity.snapshot_pair(b);
        needed[i] = true;
        needed[o] = true;
    }
    needed
}

fn entropies_for(
    trace: &ActivationTrace,
    config: &EstimatorConfig,
    needed: &[bool],
) -> Result<(Vec<Option<f64>>, usize)> {
    config.validate()?;
    let reduced = subsample(trace, &config.sample_policy)?;
    let snaps = reduced.snapshots();
    let values: Vec<Result<Option<f64>>> = snaps
        .par_iter()
        .enumerate()
        .map(|(i, snap)| {
            if !needed[i] {
                return Ok(None);
            }
            estimate_prepared(&snap.data, &config.kind)
                .map(|v| Some(v.nats))
                .map_err(|e| match e {
                    Error::Contract(msg) => {
                        Error::Contract(format!("snapshot {i} ({}): {msg}", snap.label))
                    }
                    other => other,
                })
        })
        .collect();
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((values, reduced.token_count()))
}

/// Entropy of every snapshot in a complete trace.
pub fn snapshot_entropies(trace: &ActivationTrace, config: &EstimatorConfig) -> Result<Vec<f64>> {
    let layers = trace.layer_count()?;
    let (values, _) = entropies_for(trace, config, &vec![true; 2 * layers + 1])?;
    Ok(values.into_iter().map(|v| v.expect("all requested")).collect())
}

/// Estimates snapshot entropies (each once, in parallel) and differences them
/// into per-block entropy increases.
pub fn build_profile(
    trace: &ActivationTrace,
    config: &EstimatorConfig,
    granularity: Granularity,
) -> Result<EntropyProfile> {
    let layers = trace.layer_count()?;
    if layers == 0 {
        return Err(Error::Structural("trace has no layers".into()));
    }
    let (values, sample_size) = entropies_for(trace, config, &needed_snapshots(granularity, layers))?;
    EntropyProfile::from_snapshot_entropies(values, granularity, *config, sample_size)
}

/// Block index (1-based) immediately after the first global minimum of the
/// boundary-entropy curve `h_values`.
pub fn detect_stage_start(h_values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &h) in h_values.iter().enumerate() {
        if h < h_values[best] {
            best = i;
        }
    }
    best + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, Rng};
    use crate::trace::{Snapshot, SnapshotLabel};

    fn random_trace(layers: usize, tokens: usize, dim: usize, seed: u64) -> ActivationTrace {
        let mut rng = Rng::new(seed);
        let snapshots = SnapshotLabel::sequence(layers)
            .into_iter()
            .enumerate()
            .map(|(i, label)| Snapshot {
                label,
                data: Matrix::from_fn(tokens, dim, |_, _| {
                    (rng.normal() * (1.0 + i as f64 * 0.3)) as f32
                }),
            })
            .collect();
        ActivationTrace::new(snapshots, "random", seed).unwrap()
    }

    #[test]
    fn snapshot_pairs() {
        assert_eq!(Granularity::FullLayer.snapshot_pair(1), (0, 2));
        assert_eq!(Granularity::AttentionBlock.snapshot_pair(2), (2, 3));
        assert_eq!(Granularity::MlpBlock.snapshot_pair(3), (5, 6));
    }

    #[test]
    fn constant_snapshots_give_zero_increase() {
        let m = Matrix::from_fn(20, 3, |r, c| (r * 3 + c) as f32);
        let snapshots = SnapshotLabel::sequence(3)
            .into_iter()
            .map(|label| Snapshot {
                label,
                data: m.clone(),
            })
            .collect();
        let trace = ActivationTrace::new(snapshots, "const", 0).unwrap();
        for g in Granularity::ALL {
            for cfg in [EstimatorConfig::bucket(40), EstimatorConfig::knn(3)] {
                let p = build_profile(&trace, &cfg, g).unwrap();
                assert!(p.delta_h.iter().all(|&d| d == 0.0), "{g} {cfg}");
            }
        }
    }

    #[test]
    fn delta_matches_independent_recomputation() {
        let trace = random_trace(2, 64, 4, 3);
        let cfg = EstimatorConfig::bucket(40);
        let p = build_profile(&trace, &cfg, Granularity::AttentionBlock).unwrap();
        for b in 1..=2 {
            let (i, o) = Granularity::AttentionBlock.snapshot_pair(b);
            let hi = crate::estimators::bucket_entropy(&trace.snapshots()[i].data, 40).unwrap();
            let ho = crate::estimators::bucket_entropy(&trace.snapshots()[o].data, 40).unwrap();
            assert_eq!(p.delta_h[b - 1], ho.nats - hi.nats);
        }
    }

    #[test]
    fn layer_delta_telescopes() {
        let trace = random_trace(4, 50, 3, 9);
        for cfg in [EstimatorConfig::bucket(40), EstimatorConfig::knn(5)] {
            let layer = build_profile(&trace, &cfg, Granularity::FullLayer).unwrap();
            let attn = build_profile(&trace, &cfg, Granularity::AttentionBlock).unwrap();
            let mlp = build_profile(&trace, &cfg, Granularity::MlpBlock).unwrap();
            for l in 0..4 {
                let sum = attn.delta_h[l] + mlp.delta_h[l];
                assert!((layer.delta_h[l] - sum).abs() < 1e-9);
            }
            for w in 0..4 {
                let recon = layer.h_values[w + 1] - layer.h_values[w];
                assert!((recon - layer.delta_h[w]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn missing_snapshot_is_structural() {
        let full = random_trace(2, 10, 2, 1);
        let partial = ActivationTrace::new(full.snapshots()[..4].to_vec(), "cut", 0).unwrap();
        assert!(matches!(
            build_profile(&partial, &EstimatorConfig::bucket(10), Granularity::FullLayer),
            Err(Error::Structural(_))
        ));
    }

    #[test]
    fn estimator_errors_name_the_snapshot() {
        let trace = random_trace(1, 4, 2, 1);
        let err = build_profile(&trace, &EstimatorConfig::knn(10), Granularity::FullLayer)
            .unwrap_err()
            .to_string();
        assert!(err.contains("snapshot 0 (embedding)"), "{err}");
    }

    #[test]
    fn stage_start_rule() {
        assert_eq!(detect_stage_start(&[5.0, 3.0, 4.0, 6.0]), 2);
        assert_eq!(detect_stage_start(&[1.0, 2.0, 3.0, 4.0]), 1);
        assert_eq!(detect_stage_start(&[4.0, 2.0, 2.0, 5.0]), 2);
    }
}
