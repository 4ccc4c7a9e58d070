//! Clustering quality: adjusted Rand index, silhouette, simplified silhouette.
//!
//! Labels are compared by equality only, so any hashable id type works and
//! ids need not be contiguous.

use std::collections::HashMap;
use std::hash::Hash;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::points::{sq_dist, ClusterSet, PointSet};

fn pairs(n: u64) -> u128 {
    let n = u128::from(n);
    n * n.saturating_sub(1) / 2
}

fn group_sizes<T: Hash + Eq + Copy>(labels: &[T]) -> HashMap<T, u64> {
    let mut m = HashMap::new();
    for &l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

/// Adjusted Rand index of two labelings of the same points.
///
/// Computed from the contingency table in integer arithmetic with a single
/// final division. When both labelings are the same trivial partition (all
/// points together, or all apart) the chance correction is 0/0; we return 1.
pub fn ari<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Hash + Eq + Copy,
    B: Hash + Eq + Copy,
{
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "labelings have {} and {} points",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("ARI needs at least two points"));
    }
    let mut table: HashMap<(A, B), u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0) += 1;
    }
    let index: u128 = table.values().map(|&c| pairs(c)).sum();
    let sum_a: u128 = group_sizes(a).values().map(|&c| pairs(c)).sum();
    let sum_b: u128 = group_sizes(b).values().map(|&c| pairs(c)).sum();
    let total = pairs(a.len() as u64);

    let num = 2 * (total * index) as i128 - 2 * (sum_a * sum_b) as i128;
    let den = (total * (sum_a + sum_b)) as i128 - 2 * (sum_a * sum_b) as i128;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Mean silhouette over all points, with Euclidean distances.
///
/// Points in singleton clusters score 0. O(n^2); meant for evaluation on
/// pooled data only.
pub fn silhouette<T: Hash + Eq + Copy + Sync>(points: &PointSet, labels: &[T]) -> Result<f64> {
    if labels.len() != points.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} points",
            labels.len(),
            points.len()
        )));
    }
    let mut ids: HashMap<T, usize> = HashMap::new();
    let dense: Vec<usize> = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(*l).or_insert(next)
        })
        .collect();
    let k = ids.len();
    if k < 2 {
        return Err(Error::UndefinedMetric(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let mut sizes = vec![0usize; k];
    for &c in &dense {
        sizes[c] += 1;
    }

    let scores: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = dense[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sum = vec![0.0; k];
            let x = points.row(i);
            for (j, y) in points.rows().enumerate() {
                sum[dense[j]] += sq_dist(x, y).sqrt();
            }
            let a = sum[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sum[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Running sum of per-point simplified-silhouette values. Clients can each
/// compute one against shared means; merging gives the global score.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SilhouettePartial {
    pub sum: f64,
    pub count: u64,
}

impl SilhouettePartial {
    pub fn merge(self, other: SilhouettePartial) -> SilhouettePartial {
        SilhouettePartial {
            sum: self.sum + other.sum,
            count: self.count + other.count,
        }
    }

    pub fn mean(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::UndefinedMetric("no points scored".into()));
        }
        Ok(self.sum / self.count as f64)
    }
}

/// Simplified-silhouette contribution of `points`, where `assignment[i]`
/// indexes the mean point `i` belongs to. `a` is the distance to the own
/// mean, `b` the distance to the closest other mean.
pub fn simplified_silhouette_partial(
    points: &PointSet,
    assignment: &[usize],
    means: &ClusterSet,
) -> Result<SilhouettePartial> {
    if means.k() < 2 {
        return Err(Error::UndefinedMetric(
            "simplified silhouette needs at least two cluster means".into(),
        ));
    }
    if means.dim() != points.dim() {
        return Err(Error::DimensionMismatch {
            expected: points.dim(),
            got: means.dim(),
        });
    }
    if assignment.len() != points.len() {
        return Err(Error::invalid(format!(
            "{} assignments for {} points",
            assignment.len(),
            points.len()
        )));
    }
    if let Some(&bad) = assignment.iter().find(|&&j| j >= means.k()) {
        return Err(Error::invalid(format!("assignment {bad} has no mean")));
    }
    let mut sum = 0.0;
    for (x, &own) in points.rows().zip(assignment) {
        let a = sq_dist(x, means.mean(own)).sqrt();
        let b = means
            .means()
            .enumerate()
            .filter(|&(j, _)| j != own)
            .map(|(_, m)| sq_dist(x, m).sqrt())
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            sum += (b - a) / m;
        }
    }
    Ok(SilhouettePartial {
        sum,
        count: points.len() as u64,
    })
}

pub fn simplified_silhouette(
    points: &PointSet,
    assignment: &[usize],
    means: &ClusterSet,
) -> Result<f64> {
    simplified_silhouette_partial(points, assignment, means)?.mean()
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn rank_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid(
            "rank correlation needs two equally long series of length >= 2",
        ));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric(
            "rank correlation of a constant series".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    /// Pair-counting ARI: classify all n(n-1)/2 pairs directly.
    fn ari_by_pairs(a: &[u8], b: &[u8]) -> f64 {
        let (mut ss, mut sd, mut ds, mut dd) = (0i128, 0i128, 0i128, 0i128);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => ss += 1,
                    (true, false) => sd += 1,
                    (false, true) => ds += 1,
                    (false, false) => dd += 1,
                }
            }
        }
        let den = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
        if den == 0 {
            return 1.0;
        }
        (2 * (ss * dd - sd * ds)) as f64 / den as f64
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(ari(&[3, 3, 3], &[9, 9, 9]).unwrap(), 1.0);
        assert!(ari(&[0, 1], &[0]).is_err());
        assert!(ari::<u8, u8>(&[0], &[0]).is_err());
    }

    #[test]
    fn ari_matches_pair_counting_oracle() {
        let mut rng = rng_from_seed(12);
        for _ in 0..500 {
            let n = rng.random_range(2..=12);
            let ka = rng.random_range(1..=4);
            let kb = rng.random_range(1..=4);
            let a: Vec<u8> = (0..n).map(|_| rng.random_range(0..ka)).collect();
            let b: Vec<u8> = (0..n).map(|_| rng.random_range(0..kb)).collect();
            assert_eq!(ari(&a, &b).unwrap(), ari_by_pairs(&a, &b), "{a:?} {b:?}");
        }
    }

    #[test]
    fn ari_of_random_labels_is_near_zero() {
        let mut rng = rng_from_seed(13);
        let truth: Vec<u32> = (0..200).map(|i| i % 5).collect();
        let mean = (0..1000)
            .map(|_| {
                let guess: Vec<u32> = (0..200).map(|_| rng.random_range(0..5)).collect();
                ari(&truth, &guess).unwrap()
            })
            .sum::<f64>()
            / 1000.0;
        assert!(mean.abs() <= 0.02, "{mean}");
    }

    #[test]
    fn silhouette_four_points() {
        let p = PointSet::from_scalars(&[0.0, 1.0, 10.0, 11.0]).unwrap();
        let s = silhouette(&p, &[0, 0, 1, 1]).unwrap();
        // Outer points: a = 1, b = 10.5. Inner points: a = 1, b = 9.5.
        let want = (9.5 / 10.5 + 8.5 / 9.5) / 2.0;
        assert!((s - want).abs() <= 1e-12, "{s}");
        assert!((s - 359.0 / 399.0).abs() <= 1e-12, "{s}");
    }

    #[test]
    fn silhouette_edge_cases() {
        let p = PointSet::from_scalars(&[0.0, 1.0, 10.0]).unwrap();
        assert!(matches!(
            silhouette(&p, &[0, 0, 0]),
            Err(Error::UndefinedMetric(_))
        ));
        // The singleton at 10 scores 0.
        let with_single = silhouette(&p, &[0, 0, 1]).unwrap();
        let s01 = (10.0 - 1.0) / 10.0 + (9.0 - 1.0) / 9.0;
        assert!((with_single - s01 / 3.0).abs() < 1e-12);
        // Same points under two labels: b <= a.
        let q = PointSet::from_scalars(&[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(silhouette(&q, &[0, 0, 1, 1]).unwrap() <= 0.0);
    }

    #[test]
    fn simplified_four_points() {
        let p = PointSet::from_scalars(&[0.0, 1.0, 10.0, 11.0]).unwrap();
        let m = ClusterSet::from_means(vec![0.5, 10.5], 1).unwrap();
        let s = simplified_silhouette(&p, &[0, 0, 1, 1], &m).unwrap();
        let want = (2.0 * (18.0 / 19.0) + 2.0 * (20.0 / 21.0)) / 4.0;
        assert!((s - want).abs() <= 1e-12, "{s} vs {want}");
        let full = silhouette(&p, &[0, 0, 1, 1]).unwrap();
        assert_eq!(s.signum(), full.signum());
    }

    #[test]
    fn simplified_point_on_its_mean_scores_one() {
        let p = PointSet::from_scalars(&[0.0, 100.0]).unwrap();
        let m = ClusterSet::from_means(vec![0.0, 100.0], 1).unwrap();
        assert_eq!(simplified_silhouette(&p, &[0, 1], &m).unwrap(), 1.0);
        let one = ClusterSet::from_means(vec![0.0], 1).unwrap();
        assert!(matches!(
            simplified_silhouette(&p, &[0, 0], &one),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(simplified_silhouette(&p, &[0, 2], &m).is_err());
    }

    #[test]
    fn simplified_shards_sum_to_pooled() {
        let mut rng = rng_from_seed(14);
        let data: Vec<f64> = (0..300).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p = PointSet::new(data, 3).unwrap();
        let m = ClusterSet::from_means((0..12).map(|_| rng.random_range(-5.0..5.0)).collect(), 3)
            .unwrap();
        let (asg, _) = crate::kmeans::assign(&p, &m).unwrap();
        let pooled = simplified_silhouette(&p, &asg, &m).unwrap();
        let cuts = [0, 17, 50, 81, 100];
        let merged = cuts
            .windows(2)
            .map(|w| {
                let idx: Vec<usize> = (w[0]..w[1]).collect();
                simplified_silhouette_partial(&p.select(&idx).unwrap(), &asg[w[0]..w[1]], &m)
                    .unwrap()
            })
            .fold(SilhouettePartial::default(), SilhouettePartial::merge);
        assert_eq!(merged.count, 100);
        assert!((merged.mean().unwrap() - pooled).abs() <= 1e-12);
    }

    #[test]
    fn rank_correlation_basics() {
        assert_eq!(
            rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]).unwrap(),
            1.0
        );
        assert_eq!(
            rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0
        );
        let r = rank_correlation(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(r > 0.9 && r < 1.0);
        assert!(rank_correlation(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn ari_symmetric_and_relabel_invariant(
            a in proptest::collection::vec(0u8..4, 2..30),
            seed in any::<u64>(),
        ) {
            let mut rng = rng_from_seed(seed);
            let b: Vec<u8> = a.iter().map(|_| rng.random_range(0..4)).collect();
            let ab = ari(&a, &b).unwrap();
            prop_assert_eq!(ab, ari(&b, &a).unwrap());
            // Bijective relabeling of `a`.
            let renamed: Vec<u32> = a.iter().map(|&x| 100 + 7 * u32::from(3 - x)).collect();
            prop_assert_eq!(ab, ari(&renamed, &b).unwrap());
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn silhouettes_are_bounded(seed in any::<u64>(), n in 3usize..40, k in 2usize..5) {
            let mut rng = rng_from_seed(seed);
            let p = PointSet::new((0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect(), 2).unwrap();
            let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let s = silhouette(&p, &labels).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
            let m = ClusterSet::from_means((0..2 * k).map(|_| rng.random_range(-3.0..3.0)).collect(), 2).unwrap();
            let ss = simplified_silhouette(&p, &labels, &m).unwrap();
            prop_assert!((-1.0..=1.0).contains(&ss));
        }
    }
}
