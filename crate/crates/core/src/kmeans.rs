//! Weighted Lloyd iteration and k-means++ seeding.
//!
//! Every routine takes optional per-point weights. With weights `w`, the
//! objective is `sum_i w_i * min_j ||x_i - c_j||^2`; unit weights give the
//! ordinary within-cluster sum of squares.
//!
//! Assignment ties go to the lowest cluster index. A cluster that receives no
//! points during an update is moved onto the point farthest from its current
//! mean, so a run always keeps exactly `k` means.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::points::{sq_dist, ClusterSet, PointSet};

/// Work size (n * k * d) above which assignment runs on the rayon pool.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmeansParams {
    /// Stop once no mean coordinate moves by more than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KmeansParams {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 300,
        }
    }
}

impl KmeansParams {
    /// A fixed number of Lloyd steps, stopping early only at an exact fixed point.
    pub fn steps(n: usize) -> Self {
        Self {
            tol: 0.0,
            max_iter: n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    /// Final means; counts are the number of points assigned to each.
    pub clusters: ClusterSet,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective before the first step and after every step.
    pub inertia_trace: Vec<f64>,
}

fn check_dims(points: &PointSet, means: &ClusterSet) -> Result<()> {
    if means.dim() != points.dim() {
        return Err(Error::DimensionMismatch {
            expected: points.dim(),
            got: means.dim(),
        });
    }
    if means.is_empty() {
        return Err(Error::invalid("need at least one mean"));
    }
    Ok(())
}

fn check_weights(points: &PointSet, weights: Option<&[f64]>) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != points.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} points",
                w.len(),
                points.len()
            )));
        }
        if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!(
                "weight {i} is {}, weights must be finite and positive",
                w[i]
            )));
        }
    }
    Ok(())
}

#[inline]
fn weight(weights: Option<&[f64]>, i: usize) -> f64 {
    weights.map_or(1.0, |w| w[i])
}

fn nearest(x: &[f64], means: &ClusterSet) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, m) in means.means().enumerate() {
        let d = sq_dist(x, m);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Nearest mean index and its squared distance for every point.
fn nearest_all(points: &PointSet, means: &ClusterSet) -> Vec<(usize, f64)> {
    if points.len() * means.k() * points.dim() >= PAR_THRESHOLD {
        points
            .as_slice()
            .par_chunks_exact(points.dim())
            .map(|x| nearest(x, means))
            .collect()
    } else {
        points.rows().map(|x| nearest(x, means)).collect()
    }
}

fn tally(assignment: &[usize], k: usize) -> Vec<u64> {
    let mut counts = vec![0u64; k];
    for &a in assignment {
        counts[a] += 1;
    }
    counts
}

fn objective(nearest: &[(usize, f64)], weights: Option<&[f64]>) -> f64 {
    nearest
        .iter()
        .enumerate()
        .map(|(i, &(_, d))| weight(weights, i) * d)
        .sum()
}

/// Map each point to its nearest mean. Returns the assignment and the
/// number of points per mean (zero for means nobody chose).
pub fn assign(points: &PointSet, means: &ClusterSet) -> Result<(Vec<usize>, Vec<u64>)> {
    check_dims(points, means)?;
    let assignment: Vec<usize> = nearest_all(points, means)
        .into_iter()
        .map(|(j, _)| j)
        .collect();
    let counts = tally(&assignment, means.k());
    Ok((assignment, counts))
}

/// Weighted objective of `means` on `points`.
pub fn weighted_inertia(
    points: &PointSet,
    weights: Option<&[f64]>,
    means: &ClusterSet,
) -> Result<f64> {
    check_dims(points, means)?;
    check_weights(points, weights)?;
    Ok(objective(&nearest_all(points, means), weights))
}

/// Weighted centroid update given a current assignment.
///
/// Offsets are summed relative to each cluster's first member, so a cluster
/// whose members coincide lands exactly on them.
fn update_means(
    points: &PointSet,
    weights: Option<&[f64]>,
    means: &ClusterSet,
    nearest: &[(usize, f64)],
) -> ClusterSet {
    let (k, dim) = (means.k(), points.dim());
    let mut origin: Vec<Option<usize>> = vec![None; k];
    let mut sums = vec![0.0; k * dim];
    let mut mass = vec![0.0; k];
    for (i, (x, &(j, _))) in points.rows().zip(nearest).enumerate() {
        let w = weight(weights, i);
        mass[j] += w;
        let o = points.row(*origin[j].get_or_insert(i));
        for ((s, v), r) in sums[j * dim..(j + 1) * dim].iter_mut().zip(x).zip(o) {
            *s += w * (v - r);
        }
    }

    let mut out = vec![0.0; k * dim];
    for j in 0..k {
        if mass[j] == 0.0 {
            continue;
        }
        let o = points.row(origin[j].expect("a cluster with mass has a member"));
        for ((m, s), r) in out[j * dim..(j + 1) * dim]
            .iter_mut()
            .zip(&sums[j * dim..])
            .zip(o)
        {
            *m = r + s / mass[j];
        }
    }

    let empties: Vec<usize> = (0..k).filter(|&j| mass[j] == 0.0).collect();
    if !empties.is_empty() {
        // Farthest points first; stable sort keeps the lowest index on ties.
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| nearest[b].1.total_cmp(&nearest[a].1));
        for (e, &j) in empties.iter().enumerate() {
            // More empty clusters than points: the surplus stays put.
            let src = match order.get(e) {
                Some(&i) => points.row(i),
                None => means.mean(j),
            };
            out[j * dim..(j + 1) * dim].copy_from_slice(src);
        }
    }
    ClusterSet::from_means(out, dim).expect("centroids of finite points are finite")
}

/// One Lloyd iteration: assign, then move every mean to the weighted
/// centroid of its points. Returned counts are those of a fresh assignment
/// against the new means.
pub fn lloyd_step(
    points: &PointSet,
    weights: Option<&[f64]>,
    means: &ClusterSet,
) -> Result<ClusterSet> {
    check_dims(points, means)?;
    check_weights(points, weights)?;
    let near = nearest_all(points, means);
    let mut next = update_means(points, weights, means, &near);
    let (_, counts) = assign(points, &next)?;
    next.set_counts(counts);
    Ok(next)
}

/// Lloyd iterations from the given initial means.
pub fn kmeans_from(
    points: &PointSet,
    init: &ClusterSet,
    weights: Option<&[f64]>,
    params: KmeansParams,
) -> Result<KmeansResult> {
    check_dims(points, init)?;
    check_weights(points, weights)?;
    if init.k() > points.len() {
        return Err(Error::invalid(format!(
            "k = {} exceeds the {} available points",
            init.k(),
            points.len()
        )));
    }
    if !(params.tol >= 0.0) || params.max_iter == 0 {
        return Err(Error::invalid("need tol >= 0 and max_iter >= 1"));
    }

    let mut means = init.clone();
    let mut near = nearest_all(points, &means);
    let mut trace = vec![objective(&near, weights)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        let next = update_means(points, weights, &means, &near);
        near = nearest_all(points, &next);
        trace.push(objective(&near, weights));
        iterations += 1;
        let shift = means.max_coord_shift(&next);
        means = next;
        if shift <= params.tol {
            converged = true;
            break;
        }
    }

    let assignment: Vec<usize> = near.iter().map(|&(j, _)| j).collect();
    means.set_counts(tally(&assignment, means.k()));
    Ok(KmeansResult {
        clusters: means,
        assignment,
        inertia: *trace.last().expect("trace is never empty"),
        iterations,
        converged,
        inertia_trace: trace,
    })
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans<R: Rng + ?Sized>(
    points: &PointSet,
    k: usize,
    weights: Option<&[f64]>,
    params: KmeansParams,
    rng: &mut R,
) -> Result<KmeansResult> {
    if k == 0 || k > points.len() {
        return Err(Error::invalid(format!(
            "k = {k} must lie in [1, {}]",
            points.len()
        )));
    }
    let init = kmeanspp_init(points, k, weights, rng)?;
    kmeans_from(points, &init, weights, params)
}

/// Index drawn with probability proportional to `mass`; None when all mass is zero.
fn draw<R: Rng + ?Sized>(mass: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            acc += m;
            last_positive = Some(i);
            if acc > target {
                return Some(i);
            }
        }
    }
    // Rounding left `acc` a hair short of `total`.
    last_positive
}

/// k-means++ seeding: the first mean is drawn proportionally to weight, each
/// later one proportionally to weight times squared distance to the nearest
/// mean chosen so far. Counts come from an assignment pass.
pub fn kmeanspp_init<R: Rng + ?Sized>(
    points: &PointSet,
    k: usize,
    weights: Option<&[f64]>,
    rng: &mut R,
) -> Result<ClusterSet> {
    check_weights(points, weights)?;
    let distinct = points.distinct_count();
    if k == 0 || k > distinct {
        return Err(Error::invalid(format!(
            "k-means++ needs 1 <= k <= {distinct} (distinct points), got {k}"
        )));
    }
    let n = points.len();
    let dim = points.dim();
    let w: Vec<f64> = (0..n).map(|i| weight(weights, i)).collect();

    let first = draw(&w, rng).expect("weights are positive");
    let mut chosen = Vec::with_capacity(k * dim);
    chosen.extend_from_slice(points.row(first));
    let mut d2: Vec<f64> = points
        .rows()
        .map(|x| sq_dist(x, points.row(first)))
        .collect();

    for _ in 1..k {
        let mass: Vec<f64> = w.iter().zip(&d2).map(|(a, b)| a * b).collect();
        let next =
            draw(&mass, rng).expect("k <= distinct points leaves a point at positive distance");
        let c = points.row(next);
        chosen.extend_from_slice(c);
        for (d, x) in d2.iter_mut().zip(points.rows()) {
            let nd = sq_dist(x, c);
            if nd < *d {
                *d = nd;
            }
        }
    }

    let mut out = ClusterSet::from_means(chosen, dim)?;
    let (_, counts) = assign(points, &out)?;
    out.set_counts(counts);
    Ok(out)
}
