//! Experiment configuration files (JSON, or TOML by `.toml` extension).
//!
//! Every field except `dataset`, `methods`, `metrics`, `seeds` and `output`
//! has a default, and the fully resolved config is written next to results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::GridSpec;
use crate::error::{Error, Result};
use crate::federation::FedConfig;
use crate::kmeans::KmeansParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub partition: PartitionSpec,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub fed: FedSettings,
    /// Lloyd settings for the central and one-shot baselines.
    #[serde(default)]
    pub baseline_kmeans: KmeansSettings,
    pub metrics: Vec<MetricKind>,
    pub seeds: Vec<u64>,
    pub output: OutputSpec,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default, skip_serializing_if = "Sweep::is_empty")]
    pub sweep: Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Grid(GridSettings),
    /// One labelled or unlabelled point file, split by `partition`.
    File {
        path: PathBuf,
        has_labels: bool,
    },
    /// One point file per client; requires `partition = "pre_partitioned"`.
    ClientFiles {
        paths: Vec<PathBuf>,
        has_labels: bool,
    },
}

impl DatasetSpec {
    pub fn has_labels(&self) -> bool {
        match self {
            DatasetSpec::Grid(_) => true,
            DatasetSpec::File { has_labels, .. } | DatasetSpec::ClientFiles { has_labels, .. } => {
                *has_labels
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub centers_per_side: usize,
    pub spacing: f64,
    pub points_per_cluster: usize,
    pub sigma: f64,
    /// Fixed data seed; when absent each run seed derives its own.
    pub data_seed: Option<u64>,
}

impl Default for GridSettings {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            centers_per_side: g.centers_per_side,
            spacing: g.spacing,
            points_per_cluster: g.points_per_cluster,
            sigma: g.sigma,
            data_seed: None,
        }
    }
}

impl GridSettings {
    pub fn spec(&self, seed: u64) -> GridSpec {
        GridSpec {
            centers_per_side: self.centers_per_side,
            spacing: self.spacing,
            points_per_cluster: self.points_per_cluster,
            sigma: self.sigma,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    Beta(BetaPartition),
    FixedClusters {
        clusters_per_client: Vec<usize>,
        /// Optional per-client cap on the number of points kept.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_points_per_client: Option<Vec<Option<usize>>>,
    },
    PrePartitioned,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec::Beta(BetaPartition::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaPartition {
    pub beta: f64,
    pub clients: usize,
    /// Explicit client locations; drawn uniformly in the field when absent.
    pub locations: Option<Vec<Vec<f64>>>,
    /// Half-width of the square field for random locations. Defaults to the
    /// grid's own half-width, or the largest absolute coordinate of file data.
    pub field_half_width: Option<f64>,
}

impl Default for BetaPartition {
    fn default() -> Self {
        Self {
            beta: 1.0,
            clients: 5,
            locations: None,
            field_half_width: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    Fkm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Central {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Oneshot {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        /// Local cluster count; `k_global` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_local: Option<usize>,
        /// Search `k_local` over this inclusive range for the best ARI.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        informed: Option<[usize; 2]>,
        #[serde(default)]
        weighted: bool,
    },
}

impl MethodSpec {
    /// Name used in result files.
    pub fn name(&self) -> String {
        match self {
            MethodSpec::Fkm { label: Some(l) }
            | MethodSpec::Central { label: Some(l) }
            | MethodSpec::Oneshot { label: Some(l), .. } => l.clone(),
            MethodSpec::Fkm { label: None } => "fkm".into(),
            MethodSpec::Central { label: None } => "central".into(),
            MethodSpec::Oneshot {
                label: None,
                k_local,
                informed,
                weighted,
            } => {
                let mut name = String::from("oneshot");
                if informed.is_some() {
                    name.push_str("_informed");
                } else if let Some(k) = k_local {
                    name.push_str(&format!("_kl{k}"));
                }
                if *weighted {
                    name.push_str("_weighted");
                }
                name
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Ari,
    Silhouette,
    SimplifiedSilhouette,
    Inertia,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Ari => "ari",
            MetricKind::Silhouette => "silhouette",
            MetricKind::SimplifiedSilhouette => "simplified_silhouette",
            MetricKind::Inertia => "inertia",
        }
    }
}

/// Federated settings; the seed comes from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedSettings {
    pub k_global: usize,
    pub privacy_threshold: u64,
    pub local_iters: usize,
    pub max_rounds: usize,
    pub stop_tol: f64,
    pub server_tol: f64,
    pub server_max_iter: usize,
}

impl Default for FedSettings {
    fn default() -> Self {
        let f = FedConfig::default();
        Self {
            k_global: f.k_global,
            privacy_threshold: f.privacy_threshold,
            local_iters: f.local_iters,
            max_rounds: f.max_rounds,
            stop_tol: f.stop_tol,
            server_tol: f.server_tol,
            server_max_iter: f.server_max_iter,
        }
    }
}

impl FedSettings {
    pub fn with_seed(&self, seed: u64) -> FedConfig {
        FedConfig {
            k_global: self.k_global,
            privacy_threshold: self.privacy_threshold,
            local_iters: self.local_iters,
            max_rounds: self.max_rounds,
            stop_tol: self.stop_tol,
            seed,
            server_tol: self.server_tol,
            server_max_iter: self.server_max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KmeansSettings {
    fn default() -> Self {
        let p = KmeansParams::default();
        Self {
            tol: p.tol,
            max_iter: p.max_iter,
        }
    }
}

impl From<KmeansSettings> for KmeansParams {
    fn from(s: KmeansSettings) -> Self {
        KmeansParams {
            tol: s.tol,
            max_iter: s.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    /// Record federated metrics after every round, not only the last.
    pub every_round: bool,
    /// Also compute the O(n^2) silhouette every round.
    pub silhouette_every_round: bool,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            every_round: true,
            silhouette_every_round: false,
        }
    }
}

/// Cartesian sweep over dataset and partition parameters. Each point of the
/// sweep is a separate experiment with its own output file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub beta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub points_per_cluster: Vec<usize>,
}

impl Sweep {
    pub fn is_empty(&self) -> bool {
        self.beta.is_empty() && self.sigma.is_empty() && self.points_per_cluster.is_empty()
    }
}

fn path_error(field: String, message: String) -> Error {
    Error::Config {
        field: if field == "." { "<root>".into() } else { field },
        message,
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| path_error(e.path().to_string(), e.inner().to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value =
            toml::from_str(text).map_err(|e| path_error("<root>".into(), e.to_string()))?;
        serde_path_to_error::deserialize(value)
            .map_err(|e| path_error(e.path().to_string(), e.inner().to_string()))
    }

    /// Parse and validate a config file. Relative paths inside it stay
    /// relative; resolve them against the file's directory with
    /// [`ExperimentConfig::resolve_paths`].
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text)?,
            _ => Self::from_json_str(&text)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSpec::Grid(_) => {}
            DatasetSpec::File { path, .. } => fix(path),
            DatasetSpec::ClientFiles { paths, .. } => paths.iter_mut().for_each(fix),
        }
        fix(&mut self.output.path);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("methods", "list at least one method"));
        }
        if self.metrics.is_empty() {
            return Err(Error::config("metrics", "list at least one metric"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "list at least one seed"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds", "seeds must be distinct"));
        }
        let mut names: Vec<String> = self.methods.iter().map(MethodSpec::name).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(
                "methods",
                format!("duplicate method name `{}`; add a label", w[0]),
            ));
        }

        self.fed.with_seed(0).validate().map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("fed.{field}"), message),
            other => other,
        })?;
        if !(self.baseline_kmeans.tol >= 0.0) || self.baseline_kmeans.max_iter == 0 {
            return Err(Error::config(
                "baseline_kmeans",
                "need tol >= 0 and max_iter >= 1",
            ));
        }

        let labelled = self.dataset.has_labels();
        if self.metrics.contains(&MetricKind::Ari) && !labelled {
            return Err(Error::config(
                "metrics",
                "`ari` needs ground-truth labels in the dataset",
            ));
        }

        match &self.dataset {
            DatasetSpec::Grid(g) => g.spec(0).validate().map_err(|e| match e {
                Error::Config { field, message } => {
                    Error::config(format!("dataset.grid.{field}"), message)
                }
                other => other,
            })?,
            DatasetSpec::File { .. } => {}
            DatasetSpec::ClientFiles { paths, .. } => {
                if paths.is_empty() {
                    return Err(Error::config(
                        "dataset.client_files.paths",
                        "list at least one file",
                    ));
                }
            }
        }

        let pre = matches!(self.dataset, DatasetSpec::ClientFiles { .. });
        match &self.partition {
            PartitionSpec::PrePartitioned if !pre => {
                return Err(Error::config(
                    "partition",
                    "`pre_partitioned` needs a `client_files` dataset",
                ))
            }
            PartitionSpec::Beta(_) | PartitionSpec::FixedClusters { .. } if pre => {
                return Err(Error::config(
                    "partition",
                    "a `client_files` dataset must use `pre_partitioned`",
                ))
            }
            PartitionSpec::Beta(b) => {
                if !(b.beta > 0.0) {
                    return Err(Error::config("partition.beta.beta", "must be positive"));
                }
                if b.clients == 0 {
                    return Err(Error::config(
                        "partition.beta.clients",
                        "must be at least 1",
                    ));
                }
                if let Some(locs) = &b.locations {
                    if locs.len() != b.clients {
                        return Err(Error::config(
                            "partition.beta.locations",
                            format!("{} locations for {} clients", locs.len(), b.clients),
                        ));
                    }
                }
                if let Some(w) = b.field_half_width {
                    if !(w > 0.0) {
                        return Err(Error::config(
                            "partition.beta.field_half_width",
                            "must be positive",
                        ));
                    }
                }
            }
            PartitionSpec::FixedClusters {
                clusters_per_client,
                max_points_per_client,
            } => {
                if !labelled {
                    return Err(Error::config(
                        "partition.fixed_clusters",
                        "needs a labelled dataset",
                    ));
                }
                if clusters_per_client.is_empty() {
                    return Err(Error::config(
                        "partition.fixed_clusters.clusters_per_client",
                        "list at least one client",
                    ));
                }
                if let Some(caps) = max_points_per_client {
                    if caps.len() != clusters_per_client.len() {
                        return Err(Error::config(
                            "partition.fixed_clusters.max_points_per_client",
                            "needs one entry per client",
                        ));
                    }
                }
            }
            PartitionSpec::PrePartitioned => {}
        }

        for (i, m) in self.methods.iter().enumerate() {
            if let MethodSpec::Oneshot {
                k_local, informed, ..
            } = m
            {
                let field = format!("methods[{i}]");
                if k_local.is_some() && informed.is_some() {
                    return Err(Error::config(
                        field,
                        "set either `k_local` or `informed`, not both",
                    ));
                }
                if *k_local == Some(0) {
                    return Err(Error::config(
                        format!("{field}.k_local"),
                        "must be at least 1",
                    ));
                }
                if let Some([lo, hi]) = informed {
                    if *lo == 0 || lo > hi {
                        return Err(Error::config(
                            format!("{field}.informed"),
                            "need 1 <= min <= max",
                        ));
                    }
                    if !labelled {
                        return Err(Error::config(
                            format!("{field}.informed"),
                            "needs ground-truth labels",
                        ));
                    }
                }
            }
        }

        if !self.sweep.beta.is_empty() && !matches!(self.partition, PartitionSpec::Beta(_)) {
            return Err(Error::config(
                "sweep.beta",
                "only applies to a `beta` partition",
            ));
        }
        if (!self.sweep.sigma.is_empty() || !self.sweep.points_per_cluster.is_empty())
            && !matches!(self.dataset, DatasetSpec::Grid(_))
        {
            return Err(Error::config(
                "sweep",
                "`sigma` and `points_per_cluster` only apply to a grid dataset",
            ));
        }
        if self.sweep.beta.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::config("sweep.beta", "values must be positive"));
        }
        if self
            .sweep
            .sigma
            .iter()
            .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return Err(Error::config("sweep.sigma", "values must be nonnegative"));
        }
        if self.sweep.points_per_cluster.contains(&0) {
            return Err(Error::config(
                "sweep.points_per_cluster",
                "values must be positive",
            ));
        }
        Ok(())
    }

    /// Expand the sweep into concrete configs, each tagged with a suffix
    /// such as `beta0.1_sigma1.5`. Without a sweep the result is the config
    /// itself with an empty suffix.
    pub fn expand(&self) -> Vec<(String, ExperimentConfig)> {
        let mut out = vec![(
            String::new(),
            ExperimentConfig {
                sweep: Sweep::default(),
                ..self.clone()
            },
        )];
        let join = |s: &str, part: String| {
            if s.is_empty() {
                part
            } else {
                format!("{s}_{part}")
            }
        };

        if !self.sweep.beta.is_empty() {
            out = out
                .into_iter()
                .flat_map(|(tag, cfg)| {
                    self.sweep.beta.iter().map(move |&b| {
                        let mut c = cfg.clone();
                        if let PartitionSpec::Beta(p) = &mut c.partition {
                            p.beta = b;
                        }
                        (join(&tag, format!("beta{b}")), c)
                    })
                })
                .collect();
        }
        if !self.sweep.sigma.is_empty() {
            out = out
                .into_iter()
                .flat_map(|(tag, cfg)| {
                    self.sweep.sigma.iter().map(move |&s| {
                        let mut c = cfg.clone();
                        if let DatasetSpec::Grid(g) = &mut c.dataset {
                            g.sigma = s;
                        }
                        (join(&tag, format!("sigma{s}")), c)
                    })
                })
                .collect();
        }
        if !self.sweep.points_per_cluster.is_empty() {
            out = out
                .into_iter()
                .flat_map(|(tag, cfg)| {
                    self.sweep.points_per_cluster.iter().map(move |&n| {
                        let mut c = cfg.clone();
                        if let DatasetSpec::Grid(g) = &mut c.dataset {
                            g.points_per_cluster = n;
                        }
                        (join(&tag, format!("ppc{n}")), c)
                    })
                })
                .collect();
        }
        for (tag, cfg) in &mut out {
            if !tag.is_empty() {
                cfg.output.path = suffixed(&cfg.output.path, tag);
            }
        }
        out
    }
}

/// `dir/results.csv` + `beta1` -> `dir/results_beta1.csv`.
pub fn suffixed(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("results");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{tag}.{ext}"),
        None => format!("{stem}_{tag}"),
    };
    path.with_file_name(name)
}
