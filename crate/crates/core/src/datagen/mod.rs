//! Synthetic benchmark data, client partitions and point files.

mod file;
mod partition;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{ClusterSet, PointSet};
use crate::seeding::rng_from_seed;

pub use file::{load_points_file, write_json, write_points_file};
pub use partition::{
    claim_probability, claimants, distribute_by_beta, distribute_fixed_clusters, random_locations,
    FixedDealing, Partition,
};

/// A square grid of isotropic Gaussian clusters centred on the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub centers_per_side: usize,
    /// Distance between neighbouring centres.
    pub spacing: f64,
    pub points_per_cluster: usize,
    /// Standard deviation of every coordinate around its centre.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            centers_per_side: 4,
            spacing: 5.0,
            points_per_cluster: 50,
            sigma: 1.0,
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.centers_per_side == 0 {
            return Err(Error::config("centers_per_side", "must be at least 1"));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::config("spacing", "must be a positive number"));
        }
        if self.points_per_cluster == 0 {
            return Err(Error::config("points_per_cluster", "must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma", "must be a nonnegative number"));
        }
        Ok(())
    }

    pub fn cluster_count(&self) -> usize {
        self.centers_per_side * self.centers_per_side
    }

    /// Half the side of the square field around the grid: the outermost
    /// centre plus one spacing, e.g. 12.5 for the default 4 x 4 grid.
    pub fn half_width(&self) -> f64 {
        (self.centers_per_side as f64 + 1.0) * self.spacing / 2.0
    }

    /// Grid centres, row-major with x varying fastest.
    pub fn centers(&self) -> Vec<[f64; 2]> {
        let s = self.centers_per_side;
        let offset = (s as f64 - 1.0) / 2.0;
        let coord = |i: usize| (i as f64 - offset) * self.spacing;
        (0..s * s).map(|c| [coord(c % s), coord(c / s)]).collect()
    }
}

/// Sample the grid dataset. Points are grouped by cluster; the label of a
/// point is the index of its generating centre. The returned cluster set holds
/// the true centres with their point counts.
pub fn make_grid_dataset(spec: &GridSpec) -> Result<(PointSet, ClusterSet)> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let centers = spec.centers();
    let n = centers.len() * spec.points_per_cluster;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.points_per_cluster {
            for &mu in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(mu + spec.sigma * z);
            }
            labels.push(c as i64);
        }
    }
    let points = PointSet::new(data, 2)?.with_labels(labels)?;
    let truth = ClusterSet::new(
        centers.iter().flatten().copied().collect(),
        vec![spec.points_per_cluster as u64; centers.len()],
        2,
    )?;
    Ok((points, truth))
}
