use super::{check_alpha, EntropyValue, EstimatorKind, MAX_BINS, MIN_BINS};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Equal-width histogram of every scalar in `sample` over `[min, max]`.
///
/// Returns `None` when all values coincide (zero-width range). The last bin is
/// closed on the right so `max` lands in bin `bins - 1`.
pub fn histogram_counts(sample: &Matrix, bins: usize) -> Result<Option<Vec<u64>>> {
    if sample.data().is_empty() {
        return Err(Error::contract("entropy of an empty sample"));
    }
    if !(MIN_BINS..=MAX_BINS).contains(&bins) {
        return Err(Error::contract(format!(
            "bins must be in [{MIN_BINS}, {MAX_BINS}], got {bins}"
        )));
    }
    let (min, max) = sample
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            let v = f64::from(v);
            (lo.min(v), hi.max(v))
        });
    if min == max {
        return Ok(None);
    }
    let range = max - min;
    let scale = bins as f64;
    let last = bins - 1;
    let mut counts = vec![0u64; bins];
    for &v in sample.data() {
        let t = (f64::from(v) - min) / range;
        let idx = ((t * scale) as usize).min(last);
        counts[idx] += 1;
    }
    Ok(Some(counts))
}

/// Shannon entropy (nats) of the equal-width histogram of all activations.
pub fn bucket_entropy(sample: &Matrix, bins: usize) -> Result<EntropyValue> {
    let value = |nats| EntropyValue {
        nats,
        estimator: EstimatorKind::Bucket { bins },
        sample_size: sample.rows(),
    };
    let Some(counts) = histogram_counts(sample, bins)? else {
        return Ok(value(0.0));
    };
    let total = sample.data().len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok(value(h.clamp(0.0, (bins as f64).ln())))
}

/// Order-`alpha` Rényi entropy (nats) over the same binning as
/// [`bucket_entropy`]: `ln(Σ pᵢ^α) / (1 − α)`.
pub fn renyi_entropy(sample: &Matrix, alpha: f64, bins: usize) -> Result<EntropyValue> {
    check_alpha(alpha)?;
    let value = |nats| EntropyValue {
        nats,
        estimator: EstimatorKind::Renyi { alpha, bins },
        sample_size: sample.rows(),
    };
    let Some(counts) = histogram_counts(sample, bins)? else {
        return Ok(value(0.0));
    };
    let total = sample.data().len() as f64;
    // log-sum-exp of α·ln pᵢ keeps large α from underflowing
    let logs: Vec<f64> = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| alpha * (c as f64 / total).ln())
        .collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = peak + logs.iter().map(|l| (l - peak).exp()).sum::<f64>().ln();
    let h = lse / (1.0 - alpha);
    Ok(value(h.clamp(0.0, (bins as f64).ln())))
}
