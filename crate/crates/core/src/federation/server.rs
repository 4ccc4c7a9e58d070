use rand::Rng;

use super::{ClientUpdate, GlobalModel};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KmeansParams};
use crate::points::{distinct_rows, ClusterSet};

/// Merge client means into `k_global` global means with count-weighted
/// k-means (k-means++ seeded, run to convergence).
pub fn server_aggregate<R: Rng + ?Sized>(
    updates: &[ClientUpdate],
    k_global: usize,
    round: usize,
    rng: &mut R,
) -> Result<GlobalModel> {
    aggregate_traced(updates, k_global, round, KmeansParams::default(), rng).map(|(m, _)| m)
}

pub(crate) fn aggregate_traced<R: Rng + ?Sized>(
    updates: &[ClientUpdate],
    k_global: usize,
    round: usize,
    params: KmeansParams,
    rng: &mut R,
) -> Result<(GlobalModel, Vec<f64>)> {
    if k_global == 0 {
        return Err(Error::invalid("k_global must be at least 1"));
    }
    let dim = match updates.iter().find(|u| !u.clusters.is_empty()) {
        Some(u) => u.clusters.dim(),
        None => {
            return Err(Error::Protocol {
                round,
                message: "no clusters survived filtering".into(),
            })
        }
    };
    // Zero-count rows carry no weight in the objective.
    let mut pooled = ClusterSet::empty(dim);
    for u in updates {
        pooled.extend(&u.clusters.retain(|_, n| n > 0))?;
    }
    if pooled.is_empty() {
        return Err(Error::Protocol {
            round,
            message: "no clusters survived filtering".into(),
        });
    }

    let points = pooled.to_points()?;
    let weights: Vec<f64> = pooled.counts().iter().map(|&c| c as f64).collect();
    let k = k_global.min(distinct_rows(pooled.means_flat(), dim));
    let fit = kmeans(&points, k, Some(&weights), params, rng)?;

    let mut mass = vec![0u64; k];
    for (&j, &c) in fit.assignment.iter().zip(pooled.counts()) {
        mass[j] += c;
    }
    let means = pad_round_robin(&fit.clusters, mass, k_global);
    Ok((GlobalModel { round, means }, fit.inertia_trace))
}

/// Repeat the first means cyclically until there are `k_global`; padded
/// rows carry count 0.
fn pad_round_robin(fitted: &ClusterSet, mut counts: Vec<u64>, k_global: usize) -> ClusterSet {
    let k = fitted.k();
    let mut flat = fitted.means_flat().to_vec();
    for j in k..k_global {
        flat.extend_from_slice(fitted.mean((j - k) % k));
        counts.push(0);
    }
    ClusterSet::new(flat, counts, fitted.dim()).expect("padding keeps the shape consistent")
}
