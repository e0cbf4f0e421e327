use rayon::prelude::*;

use super::{EntropyValue, EstimatorKind};
use crate::error::{Error, Result};
use crate::numerics::{digamma, log_unit_ball_volume, Matrix};

/// Distances below this are treated as this value before taking logs, so
/// duplicate tokens keep the estimate finite.
pub const MIN_DISTANCE: f64 = 1e-12;

/// Kozachenko–Leonenko differential entropy estimate (nats) of the rows of
/// `sample` as points in `cols`-dimensional Euclidean space:
///
/// `Ĥ = ψ(n) − ψ(k) + ln V_d + (d/n) Σᵢ ln εᵢ`
///
/// where `εᵢ` is the distance from point `i` to its `k`-th nearest other
/// point. Neighbour search is exact brute force.
pub fn knn_entropy(sample: &Matrix, k: usize) -> Result<EntropyValue> {
    let n = sample.rows();
    let d = sample.cols();
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    if n < k + 1 {
        return Err(Error::contract(format!(
            "k-NN entropy with k = {k} needs at least {} points, got {n}",
            k + 1
        )));
    }
    if d == 0 {
        return Err(Error::contract("k-NN entropy of zero-dimensional points"));
    }
    let points: Vec<f64> = sample.data().iter().map(|&v| f64::from(v)).collect();
    let min_sq = MIN_DISTANCE * MIN_DISTANCE;

    let mut log_eps: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n - 1),
            |dists, i| {
                dists.clear();
                let pi = &points[i * d..(i + 1) * d];
                for j in (0..n).filter(|&j| j != i) {
                    let pj = &points[j * d..(j + 1) * d];
                    let sq: f64 = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum();
                    dists.push(sq);
                }
                let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
                0.5 * kth.max(min_sq).ln()
            },
        )
        .collect();
    // summing in sorted order makes the result independent of row order
    log_eps.sort_unstable_by(f64::total_cmp);
    let sum_log: f64 = log_eps.iter().sum();

    let nats = digamma(n as f64)? - digamma(k as f64)?
        + log_unit_ball_volume(d)
        + d as f64 * sum_log / n as f64;
    Ok(EntropyValue {
        nats,
        estimator: EstimatorKind::Knn { k },
        sample_size: n,
    })
}
