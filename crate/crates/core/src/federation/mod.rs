//! Federated k-means protocol.
//!
//! Each client seeds local means with k-means++, then every round:
//!
//! 1. the server runs weighted k-means over all received local means (weights
//!    are the per-cluster sample counts) and broadcasts `k_global` means;
//! 2. each client assigns its data to those means, drops the ones that got no
//!    points, runs `local_iters` Lloyd steps from the survivors and reports the
//!    resulting means and counts, omitting clusters smaller than the privacy
//!    threshold.
//!
//! Rounds are synchronous. Client work within a round runs in parallel; the
//! server only aggregates once every update is in.

mod client;
mod server;
pub mod wire;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::KmeansParams;
use crate::points::{ClusterSet, PointSet};
use crate::seeding::rng_for;

pub use client::{client_init, client_round, privacy_filter};
pub use server::server_aggregate;

pub(crate) use client::client_round_traced;
pub(crate) use server::aggregate_traced;

/// Local means and counts sent from a client to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub clusters: ClusterSet,
}

/// Global means broadcast by the server. Always exactly `k_global` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel {
    pub round: usize,
    /// Counts hold the total sample weight the server attributed to each mean.
    pub means: ClusterSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub k_global: usize,
    /// Clusters with fewer samples are never reported to the server.
    pub privacy_threshold: u64,
    /// Lloyd steps each client runs per round.
    pub local_iters: usize,
    /// Upper bound on aggregations, including the initial one.
    pub max_rounds: usize,
    /// Stop once the global means move by at most this (per coordinate).
    pub stop_tol: f64,
    pub seed: u64,
    pub server_tol: f64,
    pub server_max_iter: usize,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            k_global: 16,
            privacy_threshold: 2,
            local_iters: 1,
            max_rounds: 100,
            stop_tol: 1e-6,
            seed: 0,
            server_tol: KmeansParams::default().tol,
            server_max_iter: KmeansParams::default().max_iter,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_global == 0 {
            return Err(Error::config("k_global", "must be at least 1"));
        }
        if self.local_iters == 0 {
            return Err(Error::config("local_iters", "must be at least 1"));
        }
        if self.max_rounds == 0 {
            return Err(Error::config("max_rounds", "must be at least 1"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::config("stop_tol", "must be a nonnegative number"));
        }
        if !(self.server_tol >= 0.0) || self.server_max_iter == 0 {
            return Err(Error::config(
                "server_tol",
                "server k-means needs tol >= 0 and max_iter >= 1",
            ));
        }
        Ok(())
    }

    pub(crate) fn server_params(&self) -> KmeansParams {
        KmeansParams {
            tol: self.server_tol,
            max_iter: self.server_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub model: GlobalModel,
    /// Whatever the observer computed for this round.
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundHistory {
    pub rounds: Vec<RoundRecord>,
    /// True when the stopping tolerance was met before `max_rounds`.
    pub converged: bool,
}

impl RoundHistory {
    pub fn final_model(&self) -> &GlobalModel {
        &self
            .rounds
            .last()
            .expect("history holds at least one round")
            .model
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }
}

/// Where a k-means objective trace came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOrigin {
    Client(usize),
    Server,
}

/// Hooks into a federated run. All methods are called from the orchestrating
/// thread in a fixed order, never concurrently.
pub trait FederationObserver {
    /// Every update exactly as it crosses from client to server.
    fn on_client_update(&mut self, _round: usize, _update: &ClientUpdate) {}

    /// Objective values of a local or server k-means run.
    fn on_kmeans_trace(&mut self, _round: usize, _origin: TraceOrigin, _trace: &[f64]) {}

    /// Evaluate a freshly aggregated model. The protocol never reads the result.
    fn on_global_model(&mut self, _model: &GlobalModel) -> Vec<(String, f64)> {
        Vec::new()
    }
}

pub struct NoopObserver;

impl FederationObserver for NoopObserver {}

/// Purpose tags used for seed derivation, shared with the one-shot baseline.
pub(crate) const CLIENT_INIT_STREAM: &str = "client-init";
pub(crate) const SERVER_STREAM: &str = "server";

/// Run the protocol over one dataset per client.
pub fn run_federated(
    datasets: &[PointSet],
    cfg: &FedConfig,
    observer: &mut dyn FederationObserver,
) -> Result<RoundHistory> {
    cfg.validate()?;
    let first = datasets
        .first()
        .ok_or_else(|| Error::invalid("federation needs at least one client"))?;
    if let Some(bad) = datasets.iter().find(|d| d.dim() != first.dim()) {
        return Err(Error::DimensionMismatch {
            expected: first.dim(),
            got: bad.dim(),
        });
    }

    let init: Vec<ClientUpdate> = datasets
        .par_iter()
        .enumerate()
        .map(|(i, data)| {
            let mut rng = rng_for(cfg.seed, CLIENT_INIT_STREAM, i as u64);
            client_init(i, data, cfg.k_global, &mut rng)
                .map(|u| privacy_filter(u, cfg.privacy_threshold))
        })
        .collect::<Result<_>>()?;

    let mut rounds = Vec::new();
    let mut model = aggregate_round(0, &init, cfg, observer)?;
    let metrics = observer.on_global_model(&model);
    rounds.push(RoundRecord {
        model: model.clone(),
        metrics,
    });

    let mut converged = false;
    for round in 1..cfg.max_rounds {
        let results: Vec<(ClientUpdate, Vec<f64>)> = datasets
            .par_iter()
            .enumerate()
            .map(|(i, data)| client_round_traced(i, data, &model, cfg))
            .collect::<Result<_>>()?;
        let mut updates = Vec::with_capacity(results.len());
        for (update, trace) in results {
            observer.on_kmeans_trace(round, TraceOrigin::Client(update.client_id), &trace);
            updates.push(update);
        }

        let next = aggregate_round(round, &updates, cfg, observer)?;
        let shift = model.means.hausdorff_shift(&next.means);
        model = next;
        let metrics = observer.on_global_model(&model);
        rounds.push(RoundRecord {
            model: model.clone(),
            metrics,
        });
        if shift <= cfg.stop_tol {
            converged = true;
            break;
        }
    }

    Ok(RoundHistory { rounds, converged })
}

fn aggregate_round(
    round: usize,
    updates: &[ClientUpdate],
    cfg: &FedConfig,
    observer: &mut dyn FederationObserver,
) -> Result<GlobalModel> {
    for u in updates {
        observer.on_client_update(round, u);
    }
    let mut rng = rng_for(cfg.seed, SERVER_STREAM, round as u64);
    let (model, trace) =
        aggregate_traced(updates, cfg.k_global, round, cfg.server_params(), &mut rng)?;
    observer.on_kmeans_trace(round, TraceOrigin::Server, &trace);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmeans::lloyd_step;
    use crate::seeding::rng_from_seed;
    use rand::Rng;

    fn blobs(seed: u64, centers: &[[f64; 2]], per: usize) -> PointSet {
        let mut rng = rng_from_seed(seed);
        let mut rows = Vec::new();
        for c in centers {
            for _ in 0..per {
                rows.push([
                    c[0] + rng.random_range(-1.0..1.0),
                    c[1] + rng.random_range(-1.0..1.0),
                ]);
            }
        }
        PointSet::from_rows(&rows).unwrap()
    }

    #[test]
    fn max_rounds_one_records_single_aggregation() {
        let data = blobs(1, &[[0.0, 0.0], [10.0, 0.0]], 10);
        let cfg = FedConfig {
            k_global: 2,
            max_rounds: 1,
            ..FedConfig::default()
        };
        let h = run_federated(&[data], &cfg, &mut NoopObserver).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.rounds[0].model.round, 0);
        assert_eq!(h.final_model().means.k(), 2);
    }

    #[test]
    fn rounds_are_contiguous_and_models_full_size() {
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
        let parts: Vec<PointSet> = (0..3)
            .map(|s| blobs(s, &centers[..2 + s as usize], 15))
            .collect();
        let cfg = FedConfig {
            k_global: 4,
            max_rounds: 30,
            ..FedConfig::default()
        };
        let h = run_federated(&parts, &cfg, &mut NoopObserver).unwrap();
        for (i, r) in h.rounds.iter().enumerate() {
            assert_eq!(r.model.round, i);
            assert_eq!(r.model.means.k(), 4);
        }
    }

    #[test]
    fn single_client_tracks_central_lloyd() {
        let data = blobs(9, &[[0.0, 0.0], [6.0, 1.0], [2.0, 7.0]], 20);
        let cfg = FedConfig {
            k_global: 3,
            privacy_threshold: 0,
            max_rounds: 8,
            stop_tol: 0.0,
            ..FedConfig::default()
        };
        let h = run_federated(std::slice::from_ref(&data), &cfg, &mut NoopObserver).unwrap();
        let mut rng = rng_for(cfg.seed, CLIENT_INIT_STREAM, 0);
        let mut central = client_init(0, &data, 3, &mut rng).unwrap().clusters;
        for rec in &h.rounds {
            assert!(
                rec.model.means.hausdorff_shift(&central) <= 1e-9,
                "round {}",
                rec.model.round
            );
            central = lloyd_step(&data, None, &central).unwrap();
        }
    }

    #[test]
    fn all_clusters_filtered_is_a_protocol_error() {
        // Three singleton points, p = 2: nothing can be reported.
        let data = PointSet::from_rows(&[[0.0], [5.0], [9.0]]).unwrap();
        let cfg = FedConfig {
            k_global: 3,
            privacy_threshold: 2,
            ..FedConfig::default()
        };
        let err = run_federated(&[data], &cfg, &mut NoopObserver).unwrap_err();
        assert!(matches!(err, Error::Protocol { round: 0, .. }), "{err}");
    }

    #[test]
    fn config_validation() {
        assert!(FedConfig {
            k_global: 0,
            ..FedConfig::default()
        }
        .validate()
        .is_err());
        assert!(FedConfig {
            local_iters: 0,
            ..FedConfig::default()
        }
        .validate()
        .is_err());
        assert!(FedConfig {
            max_rounds: 0,
            ..FedConfig::default()
        }
        .validate()
        .is_err());
        assert!(FedConfig {
            stop_tol: f64::NAN,
            ..FedConfig::default()
        }
        .validate()
        .is_err());
    }
}
