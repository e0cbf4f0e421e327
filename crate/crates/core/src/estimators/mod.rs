//! Entropy estimators. Each maps one snapshot's `tokens × hidden_dim` sample
//! to a single entropy value in nats.
//!
//! * [`bucket_entropy`]: Shannon entropy of an equal-width histogram over the
//!   pooled scalar activations.
//! * [`knn_entropy`]: Kozachenko–Leonenko k-nearest-neighbour estimate of the
//!   differential entropy of the token vectors.
//! * [`renyi_entropy`]: order-α Rényi entropy of the same histogram as the
//!   bucket estimator.

mod histogram;
mod knn;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::trace::SamplePolicy;

pub use histogram::{bucket_entropy, histogram_counts, renyi_entropy};
pub use knn::knn_entropy;

pub const DEFAULT_BINS: usize = 40;
pub const DEFAULT_NEIGHBORS: usize = 25;
pub const DEFAULT_ALPHA: f64 = 2.0;

pub const MIN_BINS: usize = 2;
pub const MAX_BINS: usize = 65_536;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum EstimatorKind {
    Bucket { bins: usize },
    Knn { k: usize },
    Renyi { alpha: f64, bins: usize },
}

impl EstimatorKind {
    /// Checks the parameters that do not depend on the sample.
    pub fn validate(&self) -> Result<()> {
        let check_bins = |bins: usize| {
            if !(MIN_BINS..=MAX_BINS).contains(&bins) {
                return Err(Error::contract(format!(
                    "bins must be in [{MIN_BINS}, {MAX_BINS}], got {bins}"
                )));
            }
            Ok(())
        };
        match *self {
            EstimatorKind::Bucket { bins } => check_bins(bins),
            EstimatorKind::Knn { k } => {
                if k == 0 {
                    return Err(Error::contract("k must be at least 1"));
                }
                Ok(())
            }
            EstimatorKind::Renyi { alpha, bins } => {
                check_alpha(alpha)?;
                check_bins(bins)
            }
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Bucket { bins } => write!(f, "bucket(bins={bins})"),
            EstimatorKind::Knn { k } => write!(f, "knn(k={k})"),
            EstimatorKind::Renyi { alpha, bins } => write!(f, "renyi(alpha={alpha}, bins={bins})"),
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::contract(format!("alpha must be positive and finite, got {alpha}")));
    }
    if alpha == 1.0 {
        return Err(Error::contract(
            "alpha = 1 is the Shannon limit; use the bucket estimator",
        ));
    }
    Ok(())
}

/// Estimator choice plus the token sub-sampling applied before it runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub sample_policy: SamplePolicy,
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind) -> Self {
        Self {
            kind,
            sample_policy: SamplePolicy::default(),
        }
    }

    pub fn bucket(bins: usize) -> Self {
        Self::new(EstimatorKind::Bucket { bins })
    }

    pub fn knn(k: usize) -> Self {
        Self::new(EstimatorKind::Knn { k })
    }

    pub fn renyi(alpha: f64, bins: usize) -> Self {
        Self::new(EstimatorKind::Renyi { alpha, bins })
    }

    pub fn with_policy(mut self, policy: SamplePolicy) -> Self {
        self.sample_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        self.sample_policy.validate()
    }
}

impl fmt::Display for EstimatorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} max_tokens={} sample_seed={}",
            self.kind, self.sample_policy.max_tokens, self.sample_policy.seed
        )
    }
}

/// An entropy estimate in nats, tagged with how it was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyValue {
    pub nats: f64,
    pub estimator: EstimatorKind,
    pub sample_size: usize,
}

/// Sub-samples `sample` per the config's policy, then runs the estimator.
pub fn estimate(sample: &Matrix, config: &EstimatorConfig) -> Result<EntropyValue> {
    config.validate()?;
    let reduced = config.sample_policy.apply(sample);
    estimate_prepared(&reduced, &config.kind)
}

/// Runs the estimator on an already sub-sampled matrix.
pub(crate) fn estimate_prepared(sample: &Matrix, kind: &EstimatorKind) -> Result<EntropyValue> {
    match *kind {
        EstimatorKind::Bucket { bins } => bucket_entropy(sample, bins),
        EstimatorKind::Knn { k } => knn_entropy(sample, k),
        EstimatorKind::Renyi { alpha, bins } => renyi_entropy(sample, alpha, bins),
    }
}
