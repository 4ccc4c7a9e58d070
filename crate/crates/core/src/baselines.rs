//! Comparison methods: k-means on pooled data, and one-shot aggregation of
//! locally converged means.

use std::ops::RangeInclusive;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::federation::{aggregate_traced, ClientUpdate, CLIENT_INIT_STREAM, SERVER_STREAM};
use crate::kmeans::{assign, kmeans, kmeans_from, kmeanspp_init, KmeansParams, KmeansResult};
use crate::metrics::ari;
use crate::points::{ClusterSet, PointSet};
use crate::seeding::rng_for;

pub(crate) const CENTRAL_STREAM: &str = "central";

/// Pool every client's points (in client order) and run k-means++ seeded
/// k-means with unit weights. The generator is `rng_for(seed, "central", 0)`.
pub fn central_kmeans(
    datasets: &[PointSet],
    k_global: usize,
    seed: u64,
    params: KmeansParams,
) -> Result<KmeansResult> {
    let pooled = PointSet::concat(datasets)?;
    let mut rng = rng_for(seed, CENTRAL_STREAM, 0);
    kmeans(&pooled, k_global, None, params, &mut rng)
}

/// One-shot baseline: each client runs k-means to convergence with
/// `k_local` clusters (clamped to its distinct points), then the server
/// clusters all local means once into `k_global`.
///
/// With `weighted` the server weights local means by their counts; otherwise
/// every local mean counts once. Client seeding and the server pass use the
/// same seed streams as the federated protocol's initial round.
pub fn oneshot(
    datasets: &[PointSet],
    k_local: usize,
    k_global: usize,
    weighted: bool,
    seed: u64,
    params: KmeansParams,
) -> Result<ClusterSet> {
    if k_local == 0 {
        return Err(Error::invalid("k_local must be at least 1"));
    }
    let updates: Vec<ClientUpdate> = datasets
        .par_iter()
        .enumerate()
        .map(|(i, data)| {
            let mut rng = rng_for(seed, CLIENT_INIT_STREAM, i as u64);
            let k = k_local.min(data.distinct_count());
            let init = kmeanspp_init(data, k, None, &mut rng)?;
            let fit = kmeans_from(data, &init, None, params)?;
            let mut clusters = fit.clusters;
            if !weighted {
                let ones = clusters
                    .counts()
                    .iter()
                    .map(|&c| u64::from(c > 0))
                    .collect();
                clusters.set_counts(ones);
            }
            Ok(ClientUpdate {
                client_id: i,
                clusters,
            })
        })
        .collect::<Result<_>>()?;

    let mut rng = rng_for(seed, SERVER_STREAM, 0);
    let (model, _) = aggregate_traced(&updates, k_global, 0, params, &mut rng)?;
    Ok(model.means)
}

#[derive(Debug, Clone)]
pub struct InformedOneshot {
    pub k_local: usize,
    pub means: ClusterSet,
    pub ari: f64,
}

/// One-shot with the local cluster count picked by exhaustive search for the
/// best ARI against `truth` (ground-truth labels of the pooled points in
/// client order). Ties keep the smallest `k_local`.
pub fn oneshot_informed(
    datasets: &[PointSet],
    k_local: RangeInclusive<usize>,
    k_global: usize,
    weighted: bool,
    seed: u64,
    truth: &[i64],
    params: KmeansParams,
) -> Result<InformedOneshot> {
    let pooled = PointSet::concat(datasets)?;
    if truth.len() != pooled.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} pooled points",
            truth.len(),
            pooled.len()
        )));
    }
    let mut best: Option<InformedOneshot> = None;
    for kl in k_local {
        let means = oneshot(datasets, kl, k_global, weighted, seed, params)?;
        let (pred, _) = assign(&pooled, &means)?;
        let score = ari(truth, &pred)?;
        if best.as_ref().is_none_or(|b| score > b.ari) {
            best = Some(InformedOneshot {
                k_local: kl,
                means,
                ari: score,
            });
        }
    }
    best.ok_or_else(|| Error::invalid("empty k_local search range"))
}
