use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{sq_dist, PointSet};

/// Which client owns each point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    client_of: Vec<usize>,
    clients: usize,
}

impl Partition {
    pub fn new(client_of: Vec<usize>, clients: usize) -> Result<Self> {
        if clients == 0 {
            return Err(Error::invalid("a partition needs at least one client"));
        }
        if let Some(i) = client_of.iter().position(|&c| c >= clients) {
            return Err(Error::invalid(format!(
                "point {i} assigned to client {} of {clients}",
                client_of[i]
            )));
        }
        Ok(Self { client_of, clients })
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn client_of(&self) -> &[usize] {
        &self.client_of
    }

    /// Point indices of every client, ascending.
    pub fn indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.clients];
        for (i, &c) in self.client_of.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.indices().iter().map(Vec::len).collect()
    }

    /// Keep at most `caps[c]` randomly chosen points of client `c` (`None`
    /// keeps all). Returns the kept indices per client, ascending.
    pub fn subsample<R: Rng + ?Sized>(
        &self,
        caps: &[Option<usize>],
        rng: &mut R,
    ) -> Result<Vec<Vec<usize>>> {
        if caps.len() != self.clients {
            return Err(Error::invalid(format!(
                "{} caps for {} clients",
                caps.len(),
                self.clients
            )));
        }
        Ok(self
            .indices()
            .into_iter()
            .zip(caps)
            .map(|(idx, cap)| match cap {
                Some(cap) if *cap < idx.len() => {
                    let mut kept: Vec<usize> = idx.choose_multiple(rng, *cap).copied().collect();
                    kept.sort_unstable();
                    kept
                }
                _ => idx,
            })
            .collect())
    }
}

/// `1 - exp(-beta / d)`, with the d = 0 limit taken as 1.
pub fn claim_probability(beta: f64, d: f64) -> f64 {
    if d == 0.0 {
        1.0
    } else {
        -(-beta / d).exp_m1()
    }
}

/// Clients that independently claim `x`: client `c` claims with
/// probability `claim_probability(beta, |x - location_c|)`.
pub fn claimants<R: Rng + ?Sized>(
    x: &[f64],
    locations: &PointSet,
    beta: f64,
    rng: &mut R,
) -> Vec<usize> {
    locations
        .rows()
        .enumerate()
        .filter_map(|(c, loc)| {
            let p = claim_probability(beta, sq_dist(x, loc).sqrt());
            (rng.random::<f64>() < p).then_some(c)
        })
        .collect()
}

fn nearest_location(x: &[f64], locations: &PointSet) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, loc) in locations.rows().enumerate() {
        let d = sq_dist(x, loc);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Distance-based split: a point claimed by several clients goes to one of
/// them uniformly at random; a point nobody claims goes to the nearest client.
pub fn distribute_by_beta<R: Rng + ?Sized>(
    points: &PointSet,
    locations: &PointSet,
    beta: f64,
    rng: &mut R,
) -> Result<Partition> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    if locations.dim() != points.dim() {
        return Err(Error::DimensionMismatch {
            expected: points.dim(),
            got: locations.dim(),
        });
    }
    let client_of = points
        .rows()
        .map(|x| {
            let claims = claimants(x, locations, beta, rng);
            match claims.len() {
                0 => nearest_location(x, locations),
                1 => claims[0],
                _ => *claims.choose(rng).expect("nonempty"),
            }
        })
        .collect();
    Partition::new(client_of, locations.len())
}

/// `n` locations drawn uniformly from the open box `(-half_width, half_width)^dim`.
pub fn random_locations<R: Rng + ?Sized>(
    n: usize,
    dim: usize,
    half_width: f64,
    rng: &mut R,
) -> Result<PointSet> {
    if n == 0 || !(half_width > 0.0) {
        return Err(Error::invalid(
            "need at least one location and a positive field width",
        ));
    }
    let data = (0..n * dim)
        .map(|_| rng.random_range(-half_width..half_width))
        .collect();
    PointSet::new(data, dim)
}

/// Result of dealing whole label groups to clients.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDealing {
    pub partition: Partition,
    /// Label ids requested by each client, ascending.
    pub labels_per_client: Vec<Vec<i64>>,
}

/// Give client `i` the points of `clusters_per_client[i]` label groups.
///
/// Clients are served in descending order of request size (ties by index).
/// Each first takes labels nobody holds yet, in shuffled order, and tops up
/// with random already-held labels. Points of a label held by several
/// clients are spread uniformly at random among them.
pub fn distribute_fixed_clusters<R: Rng + ?Sized>(
    points: &PointSet,
    clusters_per_client: &[usize],
    rng: &mut R,
) -> Result<FixedDealing> {
    let labels = points
        .labels()
        .ok_or_else(|| Error::invalid("fixed-cluster dealing needs labelled points"))?;
    let ids: Vec<i64> = labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if clusters_per_client.is_empty() {
        return Err(Error::invalid("need at least one client"));
    }
    if let Some(&bad) = clusters_per_client
        .iter()
        .find(|&&c| c == 0 || c > ids.len())
    {
        return Err(Error::invalid(format!(
            "each client needs between 1 and {} clusters, got {bad}",
            ids.len()
        )));
    }
    let total: usize = clusters_per_client.iter().sum();
    if total < ids.len() {
        return Err(Error::invalid(format!(
            "requests cover {total} clusters but the data has {}",
            ids.len()
        )));
    }

    let mut order: Vec<usize> = (0..clusters_per_client.len()).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(clusters_per_client[c]));

    let mut deck = ids.clone();
    deck.shuffle(rng);
    let mut held: Vec<i64> = Vec::new();
    let mut subsets = vec![Vec::new(); clusters_per_client.len()];
    for &c in &order {
        let want = clusters_per_client[c];
        let fresh = want.min(deck.len());
        let mut mine: Vec<i64> = deck.drain(..fresh).collect();
        let extra: Vec<i64> = held.choose_multiple(rng, want - fresh).copied().collect();
        held.extend_from_slice(&mine);
        mine.extend(extra);
        mine.sort_unstable();
        subsets[c] = mine;
    }

    let requesters = |label: i64| -> Vec<usize> {
        (0..subsets.len())
            .filter(|&c| subsets[c].binary_search(&label).is_ok())
            .collect()
    };
    let owners: Vec<(i64, Vec<usize>)> = ids.iter().map(|&l| (l, requesters(l))).collect();
    let client_of = labels
        .iter()
        .map(|l| {
            let who = &owners[owners
                .binary_search_by_key(l, |(id, _)| *id)
                .expect("known label")]
            .1;
            if who.len() == 1 {
                who[0]
            } else {
                *who.choose(rng).expect("every label is held")
            }
        })
        .collect();

    Ok(FixedDealing {
        partition: Partition::new(client_of, clusters_per_client.len())?,
        labels_per_client: subsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_grid_dataset, GridSpec};
    use crate::seeding::rng_from_seed;

    fn grid() -> PointSet {
        make_grid_dataset(&GridSpec::default()).unwrap().0
    }

    fn assert_total(p: &Partition, n: usize) {
        let idx = p.indices();
        assert_eq!(idx.iter().map(Vec::len).sum::<usize>(), n);
        let mut all: Vec<usize> = idx.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn claim_probability_limits() {
        assert_eq!(claim_probability(1.0, 0.0), 1.0);
        assert!((claim_probability(1.0, 1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!(claim_probability(1e-9, 10.0) < 1e-9);
    }

    #[test]
    fn huge_beta_mixes_uniformly() {
        let points = grid();
        let mut rng = rng_from_seed(4);
        let locs = random_locations(5, 2, 12.5, &mut rng).unwrap();
        let part = distribute_by_beta(&points, &locs, 1e6, &mut rng).unwrap();
        assert_total(&part, 800);
        let sigma = (800.0 * 0.2 * 0.8f64).sqrt();
        for s in part.sizes() {
            assert!((s as f64 - 160.0).abs() <= 3.0 * sigma, "{s}");
        }
    }

    #[test]
    fn tiny_beta_is_a_voronoi_split() {
        let points = grid();
        let mut rng = rng_from_seed(5);
        let locs = random_locations(5, 2, 12.5, &mut rng).unwrap();
        let part = distribute_by_beta(&points, &locs, 1e-9, &mut rng).unwrap();
        for (x, &c) in points.rows().zip(part.client_of()) {
            let d = |j: usize| sq_dist(x, locs.row(j));
            assert!((0..5).all(|j| d(c) <= d(j)));
        }
    }

    #[test]
    fn beta_controls_locality() {
        // Fraction of points owned by their nearest client falls as beta grows.
        let points = grid();
        let mut frac = Vec::new();
        for beta in [0.1, 1.0, 10.0] {
            let mut rng = rng_from_seed(6);
            let locs = random_locations(5, 2, 12.5, &mut rng).unwrap();
            let part = distribute_by_beta(&points, &locs, beta, &mut rng).unwrap();
            let local = points
                .rows()
                .zip(part.client_of())
                .filter(|(x, &c)| nearest_location(x, &locs) == c)
                .count();
            frac.push(local as f64 / 800.0);
        }
        assert!(frac[0] > 0.9, "{frac:?}");
        assert!(frac[0] > frac[1] && frac[1] > frac[2], "{frac:?}");
        assert!(frac[2] < 0.5, "{frac:?}");
    }

    #[test]
    fn claim_frequency_matches_formula() {
        let locs = PointSet::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let x = [0.0, 2.0];
        let mut rng = rng_from_seed(7);
        let trials = 20_000;
        for beta in [0.5, 2.0] {
            let mut hits = [0u32; 2];
            for _ in 0..trials {
                for c in claimants(&x, &locs, beta, &mut rng) {
                    hits[c] += 1;
                }
            }
            for (c, d) in [(0, 2.0), (1, (9.0f64 + 4.0).sqrt())] {
                let p = claim_probability(beta, d);
                let sigma = (p * (1.0 - p) / trials as f64).sqrt();
                let f = f64::from(hits[c]) / trials as f64;
                assert!(
                    (f - p).abs() <= 3.0 * sigma,
                    "client {c} beta {beta}: {f} vs {p}"
                );
            }
        }
    }

    #[test]
    fn beta_rejects_nonpositive() {
        let mut rng = rng_from_seed(0);
        let locs = PointSet::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(distribute_by_beta(&grid(), &locs, 0.0, &mut rng).is_err());
    }

    #[test]
    fn fixed_single_client_takes_everything() {
        let mut rng = rng_from_seed(1);
        let d = distribute_fixed_clusters(&grid(), &[16], &mut rng).unwrap();
        assert_eq!(d.partition.sizes(), vec![800]);
    }

    #[test]
    fn fixed_heterogeneous_counts() {
        let points = grid();
        let mut rng = rng_from_seed(2);
        let d = distribute_fixed_clusters(&points, &[1, 4, 7, 10, 16], &mut rng).unwrap();
        assert_total(&d.partition, 800);
        let labels = points.labels().unwrap();
        for (c, idx) in d.partition.indices().iter().enumerate() {
            let held: BTreeSet<i64> = idx.iter().map(|&i| labels[i]).collect();
            assert!(held.iter().all(|l| d.labels_per_client[c].contains(l)));
            assert_eq!(d.labels_per_client[c].len(), [1, 4, 7, 10, 16][c]);
        }
        // Client 0 holds exactly one cluster, client 4 requested all 16.
        let held0: BTreeSet<i64> = d.partition.indices()[0]
            .iter()
            .map(|&i| labels[i])
            .collect();
        assert_eq!(held0.len(), 1);
        assert_eq!(d.labels_per_client[4], (0..16).collect::<Vec<i64>>());
    }

    #[test]
    fn fixed_disjoint_dealing_covers_all_labels() {
        let points = grid();
        let mut rng = rng_from_seed(3);
        let d = distribute_fixed_clusters(&points, &[8, 8], &mut rng).unwrap();
        assert_total(&d.partition, 800);
        let a: BTreeSet<i64> = d.labels_per_client[0].iter().copied().collect();
        let b: BTreeSet<i64> = d.labels_per_client[1].iter().copied().collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.union(&b).count(), 16);
        assert_eq!(d.partition.sizes(), vec![400, 400]);
    }

    #[test]
    fn fixed_rejects_bad_requests() {
        let mut rng = rng_from_seed(0);
        let points = grid();
        assert!(distribute_fixed_clusters(&points, &[4, 4], &mut rng).is_err());
        assert!(distribute_fixed_clusters(&points, &[17], &mut rng).is_err());
        assert!(distribute_fixed_clusters(&points, &[0, 16], &mut rng).is_err());
        assert!(
            distribute_fixed_clusters(&points.clone().without_labels(), &[16], &mut rng).is_err()
        );
    }

    #[test]
    fn subsample_caps_clients() {
        let mut rng = rng_from_seed(9);
        let d = distribute_fixed_clusters(&grid(), &[8, 8], &mut rng).unwrap();
        let kept = d.partition.subsample(&[Some(10), None], &mut rng).unwrap();
        assert_eq!(kept[0].len(), 10);
        assert_eq!(kept[1].len(), 400);
        assert!(kept[0].iter().all(|&i| d.partition.client_of()[i] == 0));
    }
}
