use rand::Rng;

use super::{ClientUpdate, FedConfig, GlobalModel};
use crate::error::{Error, Result};
use crate::kmeans::{assign, kmeans_from, kmeanspp_init, KmeansParams};
use crate::points::PointSet;

/// Initial local means via k-means++. A client with fewer distinct points than
/// `k_global` seeds one mean per distinct point. The privacy filter is not
/// applied here.
pub fn client_init<R: Rng + ?Sized>(
    client_id: usize,
    data: &PointSet,
    k_global: usize,
    rng: &mut R,
) -> Result<ClientUpdate> {
    if k_global == 0 {
        return Err(Error::invalid("k_global must be at least 1"));
    }
    let k_local = k_global.min(data.distinct_count());
    let clusters = kmeanspp_init(data, k_local, None, rng)?;
    Ok(ClientUpdate {
        client_id,
        clusters,
    })
}

/// Drop every cluster holding fewer than `p` samples.
pub fn privacy_filter(update: ClientUpdate, p: u64) -> ClientUpdate {
    if p == 0 {
        return update;
    }
    ClientUpdate {
        client_id: update.client_id,
        clusters: update.clusters.retain(|_, n| n >= p),
    }
}

/// One client round: keep the global means that attract local data, run the
/// configured number of Lloyd steps from them, filter, report.
pub fn client_round(
    client_id: usize,
    data: &PointSet,
    model: &GlobalModel,
    cfg: &FedConfig,
) -> Result<ClientUpdate> {
    client_round_traced(client_id, data, model, cfg).map(|(u, _)| u)
}

pub(crate) fn client_round_traced(
    client_id: usize,
    data: &PointSet,
    model: &GlobalModel,
    cfg: &FedConfig,
) -> Result<(ClientUpdate, Vec<f64>)> {
    if model.means.k() != cfg.k_global {
        return Err(Error::Protocol {
            round: model.round,
            message: format!(
                "global model has {} means, expected {}",
                model.means.k(),
                cfg.k_global
            ),
        });
    }
    let (_, counts) = assign(data, &model.means)?;
    let mut present = model.means.clone();
    present.set_counts(counts);
    let present = present.retain(|_, n| n > 0);
    assert!(
        !present.is_empty(),
        "nonempty data always has a nearest mean"
    );

    let fit = kmeans_from(data, &present, None, KmeansParams::steps(cfg.local_iters))?;
    let update = ClientUpdate {
        client_id,
        clusters: fit.clusters,
    };
    Ok((
        privacy_filter(update, cfg.privacy_threshold),
        fit.inertia_trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points::ClusterSet;
    use crate::seeding::rng_from_seed;
    use rand::Rng;

    fn model(rows: &[[f64; 2]]) -> GlobalModel {
        GlobalModel {
            round: 1,
            means: ClusterSet::from_rows(rows).unwrap(),
        }
    }

    #[test]
    fn init_clamps_to_distinct_points() {
        let mut rng = rng_from_seed(1);
        let data = PointSet::from_scalars(&(0..10).map(f64::from).collect::<Vec<_>>()).unwrap();
        let u = client_init(4, &data, 16, &mut rng).unwrap();
        assert_eq!(u.client_id, 4);
        assert_eq!(u.clusters.k(), 10);
        assert!(u.clusters.counts().iter().all(|&c| c == 1));
    }

    #[test]
    fn init_with_k_equal_n_returns_the_points() {
        let mut rng = rng_from_seed(2);
        let rows: Vec<[f64; 2]> = (0..16)
            .map(|i| [-7.5 + 5.0 * f64::from(i % 4), -7.5 + 5.0 * f64::from(i / 4)])
            .collect();
        let data = PointSet::from_rows(&rows).unwrap();
        let u = client_init(0, &data, 16, &mut rng).unwrap();
        let mut got: Vec<Vec<f64>> = u.clusters.means().map(|m| m.to_vec()).collect();
        let mut want: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
        assert!(u.clusters.counts().iter().all(|&c| c == 1));
    }

    #[test]
    fn init_single_cluster_counts_everything() {
        let mut rng = rng_from_seed(3);
        let data = PointSet::from_scalars(&[1.0, 4.0, 9.0, 9.5]).unwrap();
        let u = client_init(0, &data, 1, &mut rng).unwrap();
        assert_eq!(u.clusters.counts(), &[4]);
        assert!([1.0, 4.0, 9.0, 9.5].contains(&u.clusters.mean(0)[0]));
    }

    #[test]
    fn privacy_filter_cases() {
        let u = ClientUpdate {
            client_id: 0,
            clusters: ClusterSet::new(vec![0.0, 1.0, 2.0], vec![5, 1, 2], 1).unwrap(),
        };
        assert_eq!(privacy_filter(u.clone(), 2).clusters.counts(), &[5, 2]);
        assert_eq!(privacy_filter(u.clone(), 0), u);
        let ones = ClientUpdate {
            client_id: 0,
            clusters: ClusterSet::new(vec![0.0, 1.0], vec![1, 1], 1).unwrap(),
        };
        assert!(privacy_filter(ones, 2).clusters.is_empty());
    }

    #[test]
    fn far_global_mean_is_dropped() {
        let data = PointSet::from_rows(&[[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [6.0, 5.0]]).unwrap();
        let m = model(&[[0.5, 0.0], [5.5, 5.0], [1000.0, 1000.0]]);
        let cfg = FedConfig {
            k_global: 3,
            ..FedConfig::default()
        };
        let u = client_round(0, &data, &m, &cfg).unwrap();
        assert_eq!(u.clusters.k(), 2);
        assert_eq!(u.clusters.counts(), &[2, 2]);
    }

    #[test]
    fn duplicated_means_are_a_fixed_point() {
        let m = model(&[[0.0, 0.0], [3.0, 1.0], [-2.0, 4.0]]);
        let mut rows = Vec::new();
        for r in m.means.means() {
            rows.push(r.to_vec());
            rows.push(r.to_vec());
        }
        let data = PointSet::from_rows(&rows).unwrap();
        let cfg = FedConfig {
            k_global: 3,
            local_iters: 1,
            privacy_threshold: 2,
            ..FedConfig::default()
        };
        let u = client_round(0, &data, &m, &cfg).unwrap();
        assert_eq!(u.clusters.means_flat(), m.means.means_flat());
        assert_eq!(u.clusters.counts(), &[2, 2, 2]);
    }

    #[test]
    fn wrong_model_size_is_rejected() {
        let data = PointSet::from_rows(&[[0.0, 0.0]]).unwrap();
        let cfg = FedConfig {
            k_global: 2,
            ..FedConfig::default()
        };
        assert!(client_round(0, &data, &model(&[[0.0, 0.0]]), &cfg).is_err());
    }

    #[test]
    fn round_matches_naive_one_step_lloyd() {
        let mut rng = rng_from_seed(77);
        for _ in 0..20 {
            let n = rng.random_range(5..60);
            let rows: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)])
                .collect();
            let g: Vec<[f64; 2]> = (0..6)
                .map(|_| [rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0)])
                .collect();
            let data = PointSet::from_rows(&rows).unwrap();
            let cfg = FedConfig {
                k_global: 6,
                privacy_threshold: 0,
                ..FedConfig::default()
            };
            let u = client_round(0, &data, &model(&g), &cfg).unwrap();

            // Oracle: nearest-mean groups, drop the empty ones, average the rest.
            let mut groups: Vec<Vec<[f64; 2]>> = vec![Vec::new(); 6];
            for x in &rows {
                let d = |c: &[f64; 2]| (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
                let j = (0..6).fold(0, |b, j| if d(&g[j]) < d(&g[b]) { j } else { b });
                groups[j].push(*x);
            }
            let want: Vec<[f64; 2]> = groups
                .iter()
                .filter(|g| !g.is_empty())
                .map(|g| {
                    let n = g.len() as f64;
                    [
                        g.iter().map(|x| x[0]).sum::<f64>() / n,
                        g.iter().map(|x| x[1]).sum::<f64>() / n,
                    ]
                })
                .collect();
            assert_eq!(u.clusters.k(), want.len());
            for (a, b) in u.clusters.means().zip(&want) {
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
        }
    }
}
