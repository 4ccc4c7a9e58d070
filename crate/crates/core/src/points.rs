//! Dense point and cluster containers shared by every module.
//!
//! Both types store rows contiguously (row-major) so that distance loops walk
//! memory linearly.

use std::collections::HashSet;

use crate::error::{Error, Result};

/// Squared Euclidean distance between two rows of equal length.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let t = x - y;
            t * t
        })
        .sum()
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::invalid(format!(
            "{what} contains a non-finite value at flat index {i}"
        ))),
        None => Ok(()),
    }
}

/// n points in d dimensions, optionally carrying integer ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    data: Vec<f64>,
    dim: usize,
    labels: Option<Vec<i64>>,
}

impl PointSet {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("point dimension must be at least 1"));
        }
        if data.is_empty() {
            return Err(Error::invalid("a point set needs at least one point"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        check_finite(&data, "point set")?;
        Ok(Self {
            data,
            dim,
            labels: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::invalid(format!(
                    "row {i} has {} values, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(data, dim)
    }

    /// 1-D convenience constructor.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), 1)
    }

    pub fn with_labels(mut self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} points",
                labels.len(),
                self.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    /// Always false for a constructed set; present for clippy's sake.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    /// Subset by index, keeping labels. Fails on an empty selection.
    pub fn select(&self, indices: &[usize]) -> Result<PointSet> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let out = PointSet::new(data, self.dim)?;
        match &self.labels {
            Some(l) => out.with_labels(indices.iter().map(|&i| l[i]).collect()),
            None => Ok(out),
        }
    }

    /// Stack point sets in order. Labels survive only if every part has them.
    pub fn concat(parts: &[PointSet]) -> Result<PointSet> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("cannot concatenate zero point sets"))?;
        let dim = first.dim;
        let mut data = Vec::new();
        let mut labels = Some(Vec::new());
        for p in parts {
            if p.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.dim,
                });
            }
            data.extend_from_slice(&p.data);
            labels = match (labels, &p.labels) {
                (Some(mut acc), Some(l)) => {
                    acc.extend_from_slice(l);
                    Some(acc)
                }
                _ => None,
            };
        }
        let out = PointSet::new(data, dim)?;
        match labels {
            Some(l) => out.with_labels(l),
            None => Ok(out),
        }
    }

    /// Number of pairwise-distinct rows (bitwise, with -0.0 folded into 0.0).
    pub fn distinct_count(&self) -> usize {
        distinct_rows(&self.data, self.dim)
    }
}

pub(crate) fn distinct_rows(data: &[f64], dim: usize) -> usize {
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    for r in data.chunks_exact(dim) {
        seen.insert(r.iter().map(|v| (v + 0.0).to_bits()).collect());
    }
    seen.len()
}

/// Cluster means with per-cluster sample counts.
///
/// `k` may be zero: a client whose clusters were all filtered out sends an
/// empty set. Operations that need at least one mean check for it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    means: Vec<f64>,
    counts: Vec<u64>,
    dim: usize,
}

impl ClusterSet {
    pub fn new(means: Vec<f64>, counts: Vec<u64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("cluster dimension must be at least 1"));
        }
        if means.len() != counts.len() * dim {
            return Err(Error::invalid(format!(
                "{} mean values do not match {} counts of dimension {dim}",
                means.len(),
                counts.len()
            )));
        }
        check_finite(&means, "cluster means")?;
        Ok(Self { means, counts, dim })
    }

    /// Means with all counts zero.
    pub fn from_means(means: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !means.len().is_multiple_of(dim) {
            return Err(Error::invalid("mean values do not form whole rows"));
        }
        let k = means.len() / dim;
        Self::new(means, vec![0; k], dim)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let ps = PointSet::from_rows(rows)?;
        let dim = ps.dim();
        Self::from_means(ps.data, dim)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            means: Vec::new(),
            counts: Vec::new(),
            dim,
        }
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self, j: usize) -> &[f64] {
        &self.means[j * self.dim..(j + 1) * self.dim]
    }

    pub fn means(&self) -> std::slice::ChunksExact<'_, f64> {
        self.means.chunks_exact(self.dim)
    }

    pub fn means_flat(&self) -> &[f64] {
        &self.means
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub(crate) fn set_counts(&mut self, counts: Vec<u64>) {
        assert_eq!(counts.len(), self.k());
        self.counts = counts;
    }

    /// Keep clusters for which `keep(index, count)` holds, order preserved.
    pub fn retain(&self, mut keep: impl FnMut(usize, u64) -> bool) -> ClusterSet {
        let mut means = Vec::new();
        let mut counts = Vec::new();
        for (j, (m, &c)) in self.means().zip(&self.counts).enumerate() {
            if keep(j, c) {
                means.extend_from_slice(m);
                counts.push(c);
            }
        }
        ClusterSet {
            means,
            counts,
            dim: self.dim,
        }
    }

    /// Append every cluster of `other`.
    pub fn extend(&mut self, other: &ClusterSet) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        self.means.extend_from_slice(&other.means);
        self.counts.extend_from_slice(&other.counts);
        Ok(())
    }

    /// View the means as a point set (fails when k = 0).
    pub fn to_points(&self) -> Result<PointSet> {
        PointSet::new(self.means.clone(), self.dim)
    }

    /// Largest per-coordinate difference between two equally shaped sets,
    /// compared row by row.
    pub fn max_coord_shift(&self, other: &ClusterSet) -> f64 {
        assert_eq!(self.means.len(), other.means.len());
        self.means
            .iter()
            .zip(&other.means)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Order-free distance between two sets of means: the symmetric
    /// Hausdorff distance under the per-coordinate (Chebyshev) norm.
    pub fn hausdorff_shift(&self, other: &ClusterSet) -> f64 {
        fn directed(a: &ClusterSet, b: &ClusterSet) -> f64 {
            a.means()
                .map(|x| {
                    b.means()
                        .map(|y| {
                            x.iter()
                                .zip(y)
                                .map(|(p, q)| (p - q).abs())
                                .fold(0.0, f64::max)
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        }
        if self.is_empty() || other.is_empty() {
            return if self.is_empty() && other.is_empty() {
                0.0
            } else {
                f64::INFINITY
            };
        }
        directed(self, other).max(directed(other, self))
    }
}
