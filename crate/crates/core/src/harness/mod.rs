//! Experiment driver: builds per-seed client data, runs each configured
//! method, evaluates it and collects result records.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use crate::baselines::{central_kmeans, oneshot, oneshot_informed};
use crate::datagen::{
    distribute_by_beta, distribute_fixed_clusters, load_points_file, make_grid_dataset,
    random_locations, write_json, write_points_file,
};
use crate::error::{Error, Result};
use crate::federation::{run_federated, FederationObserver, GlobalModel};
use crate::kmeans::{assign, weighted_inertia, KmeansParams};
use crate::metrics::{ari, silhouette, simplified_silhouette_partial, SilhouettePartial};
use crate::points::{ClusterSet, PointSet};
use crate::seeding::{derive_seed, rng_for};

pub use config::{
    suffixed, BetaPartition, DatasetSpec, EvalSpec, ExperimentConfig, FedSettings, GridSettings,
    KmeansSettings, MethodSpec, MetricKind, OutputFormat, OutputSpec, PartitionSpec, Sweep,
};
pub use output::{
    emit_results, read_csv, read_json, read_results, sidecar_path, write_csv, DataInfo,
    ExperimentOutput, ResultRecord, ResultsDocument, Round, Timing, META_FORMAT, RESULTS_FORMAT,
    RESULTS_VERSION,
};

const DATA_STREAM: &str = "data";
const PARTITION_STREAM: &str = "partition";

/// Client datasets for one seed.
#[derive(Debug, Clone)]
pub struct RunData {
    pub clients: Vec<PointSet>,
    pub info: DataInfo,
}

/// File data is read once per experiment; grids are regenerated per seed.
enum Source {
    Grid(GridSettings),
    Pooled(PointSet),
    Clients(Vec<PointSet>),
}

impl Source {
    fn open(cfg: &ExperimentConfig) -> Result<Source> {
        Ok(match &cfg.dataset {
            DatasetSpec::Grid(g) => Source::Grid(*g),
            DatasetSpec::File { path, has_labels } => {
                Source::Pooled(load_points_file(path, *has_labels)?)
            }
            DatasetSpec::ClientFiles { paths, has_labels } => {
                let clients: Vec<PointSet> = paths
                    .iter()
                    .map(|p| load_points_file(p, *has_labels))
                    .collect::<Result<_>>()?;
                if let Some((i, bad)) = clients
                    .iter()
                    .enumerate()
                    .find(|(_, c)| c.dim() != clients[0].dim())
                {
                    return Err(Error::config(
                        format!("dataset.client_files.paths[{i}]"),
                        format!("dimension {} differs from {}", bad.dim(), clients[0].dim()),
                    ));
                }
                Source::Clients(clients)
            }
        })
    }

    fn build(&self, cfg: &ExperimentConfig, seed: u64) -> Result<RunData> {
        let mut info = DataInfo {
            seed,
            data_seed: None,
            dim: 0,
            client_sizes: Vec::new(),
            dropped_clients: Vec::new(),
            locations: None,
            labels_per_client: None,
        };
        let generated;
        let pooled = match self {
            Source::Clients(clients) => {
                info.dim = clients[0].dim();
                return Ok(finish(clients.clone(), info));
            }
            Source::Pooled(p) => p,
            Source::Grid(g) => {
                let data_seed = g
                    .data_seed
                    .unwrap_or_else(|| derive_seed(seed, DATA_STREAM, 0));
                info.data_seed = Some(data_seed);
                generated = make_grid_dataset(&g.spec(data_seed))?.0;
                &generated
            }
        };
        info.dim = pooled.dim();

        let mut rng = rng_for(seed, PARTITION_STREAM, 0);
        let groups = match &cfg.partition {
            PartitionSpec::Beta(b) => {
                let locations = match &b.locations {
                    Some(rows) => {
                        let ps = PointSet::from_rows(rows).map_err(|e| {
                            Error::config("partition.beta.locations", e.to_string())
                        })?;
                        if ps.dim() != pooled.dim() {
                            return Err(Error::config(
                                "partition.beta.locations",
                                format!(
                                    "locations have dimension {}, data has {}",
                                    ps.dim(),
                                    pooled.dim()
                                ),
                            ));
                        }
                        ps
                    }
                    None => {
                        let half = b.field_half_width.unwrap_or_else(|| match self {
                            Source::Grid(g) => g.spec(0).half_width(),
                            _ => pooled
                                .as_slice()
                                .iter()
                                .fold(0.0_f64, |m, v| m.max(v.abs()))
                                .max(1.0),
                        });
                        random_locations(b.clients, pooled.dim(), half, &mut rng)?
                    }
                };
                let partition = distribute_by_beta(pooled, &locations, b.beta, &mut rng)?;
                info.locations = Some(locations.rows().map(<[f64]>::to_vec).collect());
                partition.indices()
            }
            PartitionSpec::FixedClusters {
                clusters_per_client,
                max_points_per_client,
            } => {
                let dealt = distribute_fixed_clusters(pooled, clusters_per_client, &mut rng)?;
                info.labels_per_client = Some(dealt.labels_per_client);
                match max_points_per_client {
                    Some(caps) => dealt.partition.subsample(caps, &mut rng)?,
                    None => dealt.partition.indices(),
                }
            }
            PartitionSpec::PrePartitioned => unreachable!("validated: client files only"),
        };

        let mut clients = Vec::with_capacity(groups.len());
        for (c, idx) in groups.iter().enumerate() {
            if idx.is_empty() {
                info.dropped_clients.push(c);
            } else {
                clients.push(pooled.select(idx)?);
            }
        }
        if !info.dropped_clients.is_empty() {
            warn!(
                "seed {seed}: clients {:?} received no points and are left out",
                info.dropped_clients
            );
        }
        Ok(finish(clients, info))
    }
}

fn finish(clients: Vec<PointSet>, mut info: DataInfo) -> RunData {
    info.client_sizes = clients.iter().map(PointSet::len).collect();
    RunData { clients, info }
}

/// Build the client datasets each seed of `cfg` would run on.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Vec<RunData>> {
    cfg.validate()?;
    let source = Source::open(cfg)?;
    cfg.seeds.iter().map(|&s| source.build(cfg, s)).collect()
}

/// Scores a set of means against the client data. This is the only place the
/// harness looks at all clients' points together, and it never feeds back
/// into a method.
struct Evaluator<'a> {
    clients: &'a [PointSet],
    truth: Option<Vec<i64>>,
    metrics: &'a [MetricKind],
}

impl<'a> Evaluator<'a> {
    fn new(clients: &'a [PointSet], metrics: &'a [MetricKind]) -> Self {
        let truth = clients
            .iter()
            .map(|c| c.labels().map(<[i64]>::to_vec))
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        Self {
            clients,
            truth,
            metrics,
        }
    }

    fn score(&self, means: &ClusterSet, with_silhouette: bool) -> Result<Vec<(MetricKind, f64)>> {
        let assignments: Vec<Vec<usize>> = self
            .clients
            .iter()
            .map(|c| assign(c, means).map(|(a, _)| a))
            .collect::<Result<_>>()?;
        let mut out = Vec::new();
        for &m in self.metrics {
            let value = match m {
                MetricKind::Ari => {
                    let truth = self.truth.as_ref().ok_or_else(|| {
                        Error::config("metrics", "`ari` needs ground-truth labels on every client")
                    })?;
                    ari(truth, &assignments.concat())
                }
                MetricKind::Inertia => self
                    .clients
                    .iter()
                    .map(|c| weighted_inertia(c, None, means))
                    .sum::<Result<f64>>(),
                MetricKind::SimplifiedSilhouette => self
                    .clients
                    .iter()
                    .zip(&assignments)
                    .map(|(c, a)| simplified_silhouette_partial(c, a, means))
                    .try_fold(SilhouettePartial::default(), |acc, p| {
                        p.map(|p| acc.merge(p))
                    })
                    .and_then(|p| p.mean()),
                MetricKind::Silhouette if with_silhouette => PointSet::concat(self.clients)
                    .and_then(|pooled| silhouette(&pooled, &assignments.concat())),
                MetricKind::Silhouette => continue,
            };
            match value {
                Ok(v) => out.push((m, v)),
                Err(Error::UndefinedMetric(why)) => warn!("{} skipped: {why}", m.as_str()),
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}

struct RoundScorer<'a> {
    eval: &'a Evaluator<'a>,
    eval_spec: EvalSpec,
    error: Option<Error>,
}

impl FederationObserver for RoundScorer<'_> {
    fn on_global_model(&mut self, model: &GlobalModel) -> Vec<(String, f64)> {
        if !self.eval_spec.every_round || self.error.is_some() {
            return Vec::new();
        }
        match self
            .eval
            .score(&model.means, self.eval_spec.silhouette_every_round)
        {
            Ok(v) => v
                .into_iter()
                .map(|(m, x)| (m.as_str().to_string(), x))
                .collect(),
            Err(e) => {
                self.error = Some(e);
                Vec::new()
            }
        }
    }
}

fn push_scores(
    out: &mut Vec<ResultRecord>,
    method: &str,
    seed: u64,
    round: Round,
    scores: Vec<(String, f64)>,
) {
    out.extend(scores.into_iter().map(|(metric, value)| ResultRecord {
        method: method.to_string(),
        seed,
        round,
        metric,
        value,
    }));
}

fn named(scores: Vec<(MetricKind, f64)>) -> Vec<(String, f64)> {
    scores
        .into_iter()
        .map(|(m, v)| (m.as_str().to_string(), v))
        .collect()
}

/// Run one method on one seed's data.
fn run_method(
    cfg: &ExperimentConfig,
    method: &MethodSpec,
    seed: u64,
    clients: &[PointSet],
    eval: &Evaluator<'_>,
) -> Result<Vec<ResultRecord>> {
    let name = method.name();
    let params: KmeansParams = cfg.baseline_kmeans.into();
    let k_global = cfg.fed.k_global;
    let mut out = Vec::new();
    let final_means = match method {
        MethodSpec::Fkm { .. } => {
            let mut scorer = RoundScorer {
                eval,
                eval_spec: cfg.eval,
                error: None,
            };
            let history = run_federated(clients, &cfg.fed.with_seed(seed), &mut scorer)?;
            if let Some(e) = scorer.error {
                return Err(e);
            }
            for (r, rec) in history.rounds.iter().enumerate() {
                push_scores(&mut out, &name, seed, Round::Index(r), rec.metrics.clone());
            }
            info!(
                "{name} seed {seed}: {} rounds, converged = {}",
                history.len(),
                history.converged
            );
            history.final_model().means.clone()
        }
        MethodSpec::Central { .. } => central_kmeans(clients, k_global, seed, params)?.clusters,
        MethodSpec::Oneshot {
            k_local,
            informed: None,
            weighted,
            ..
        } => oneshot(
            clients,
            k_local.unwrap_or(k_global),
            k_global,
            *weighted,
            seed,
            params,
        )?,
        MethodSpec::Oneshot {
            informed: Some([lo, hi]),
            weighted,
            ..
        } => {
            let truth = eval.truth.as_ref().ok_or_else(|| {
                Error::config("methods", "informed one-shot needs ground-truth labels")
            })?;
            let best =
                oneshot_informed(clients, *lo..=*hi, k_global, *weighted, seed, truth, params)?;
            push_scores(
                &mut out,
                &name,
                seed,
                Round::Final,
                vec![("k_local".into(), best.k_local as f64)],
            );
            best.means
        }
    };
    let scores = named(eval.score(&final_means, true)?);
    push_scores(&mut out, &name, seed, Round::Final, scores);
    Ok(out)
}

/// Run every seed and method of an expanded (sweep-free) config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if !cfg.sweep.is_empty() {
        return Err(Error::config("sweep", "expand the sweep before running"));
    }
    let source = Source::open(cfg)?;
    let per_seed: Vec<(DataInfo, Vec<ResultRecord>, Vec<Timing>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let data = source.build(cfg, seed)?;
            if data.clients.is_empty() {
                return Err(Error::invalid(format!(
                    "seed {seed}: no client received any points"
                )));
            }
            let eval = Evaluator::new(&data.clients, &cfg.metrics);
            let mut records = Vec::new();
            let mut timings = Vec::new();
            for method in &cfg.methods {
                let start = Instant::now();
                records.extend(run_method(cfg, method, seed, &data.clients, &eval)?);
                timings.push(Timing {
                    method: method.name(),
                    seed,
                    seconds: start.elapsed().as_secs_f64(),
                });
            }
            Ok((data.info, records, timings))
        })
        .collect::<Result<_>>()?;

    let mut out = ExperimentOutput {
        records: Vec::new(),
        data: Vec::new(),
        timings: Vec::new(),
    };
    for (info, records, timings) in per_seed {
        out.data.push(info);
        out.records.extend(records);
        out.timings.extend(timings);
    }
    output::sort_canonical(&mut out.records);
    out.timings
        .sort_by(|a, b| (&a.method, a.seed).cmp(&(&b.method, b.seed)));
    Ok(out)
}

/// Load and validate a config file. Returns the config as written (with
/// defaults filled in) and the directory its relative paths are based on.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

/// Run every sweep point of `cfg` and write its results, resolving relative
/// paths against `base`. Returns the files written.
pub fn run_config(cfg: &ExperimentConfig, base: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (tag, point) in cfg.expand() {
        if !tag.is_empty() {
            info!("sweep point {tag}");
        }
        let mut resolved = point.clone();
        resolved.resolve_paths(base);
        let out = run_experiment(&resolved)?;
        written.extend(emit_results(&out, &point, base)?);
    }
    Ok(written)
}

/// Write the pooled dataset, per-client files and a metadata sidecar for
/// every seed (and sweep point) into `<output stem>_data/`. Returns the files
/// written.
pub fn generate_data(cfg: &ExperimentConfig, base: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (_, point) in cfg.expand() {
        let mut resolved = point.clone();
        resolved.resolve_paths(base);
        let out = &resolved.output.path;
        let stem = out
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("results");
        let dir = out.with_file_name(format!("{stem}_data"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for data in prepare_data(&resolved)? {
            let seed = data.info.seed;
            if !data.clients.is_empty() {
                let pooled = dir.join(format!("seed{seed}_pooled.csv"));
                write_points_file(&pooled, &PointSet::concat(&data.clients)?)?;
                written.push(pooled);
            }
            for (i, c) in data.clients.iter().enumerate() {
                let p = dir.join(format!("seed{seed}_client{i}.csv"));
                write_points_file(&p, c)?;
                written.push(p);
            }
            let meta = dir.join(format!("seed{seed}_meta.json"));
            write_json(
                &meta,
                &serde_json::json!({
                    "format": META_FORMAT,
                    "version": RESULTS_VERSION,
                    "dataset": point.dataset,
                    "partition": point.partition,
                    "data": data.info,
                }),
            )?;
            written.push(meta);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        let c = ExperimentConfig::from_json_str(text).unwrap();
        c.validate().unwrap();
        c
    }

    fn small(methods: &str, extra: &str) -> ExperimentConfig {
        cfg(&format!(
            r#"{{
                "dataset": {{"grid": {{"centers_per_side": 2, "points_per_cluster": 15}}}},
                "partition": {{"beta": {{"clients": 3}}}},
                "methods": {methods},
                "fed": {{"k_global": 4, "max_rounds": 6}},
                "metrics": ["ari", "inertia", "simplified_silhouette", "silhouette"],
                "seeds": [2, 1],
                "output": {{"path": "unused.csv"}}
                {extra}
            }}"#
        ))
    }

    #[test]
    fn single_seed_single_round_central_gives_one_record_per_metric() {
        let mut c = small(r#"[{"kind": "central"}]"#, "");
        c.seeds = vec![5];
        c.fed.max_rounds = 1;
        let out = run_experiment(&c).unwrap();
        let metrics: Vec<&str> = out.records.iter().map(|r| r.metric.as_str()).collect();
        assert_eq!(
            metrics,
            ["ari", "inertia", "simplified_silhouette", "silhouette"]
        );
        assert!(out
            .records
            .iter()
            .all(|r| r.round == Round::Final && r.seed == 5));
        assert_eq!(out.timings.len(), 1);
    }

    #[test]
    fn fkm_records_every_round_then_final() {
        let c = small(r#"[{"kind": "fkm"}]"#, "");
        let out = run_experiment(&c).unwrap();
        for seed in [1, 2] {
            let rounds: Vec<Round> = out
                .records
                .iter()
                .filter(|r| r.seed == seed && r.metric == "ari")
                .map(|r| r.round)
                .collect();
            assert_eq!(*rounds.last().unwrap(), Round::Final);
            let idx: Vec<Round> = (0..rounds.len() - 1).map(Round::Index).collect();
            assert_eq!(rounds[..rounds.len() - 1], idx[..]);
            // Full silhouette only at the end by default.
            let sil: Vec<Round> = out
                .records
                .iter()
                .filter(|r| r.seed == seed && r.metric == "silhouette")
                .map(|r| r.round)
                .collect();
            assert_eq!(sil, [Round::Final]);
        }
        // Final values repeat the last round's.
        let last_ari = |seed| {
            let v: Vec<&ResultRecord> = out
                .records
                .iter()
                .filter(|r| r.seed == seed && r.metric == "ari")
                .collect();
            (v[v.len() - 2].value, v[v.len() - 1].value)
        };
        let (a, b) = last_ari(1);
        assert_eq!(a, b);
    }

    #[test]
    fn output_is_canonically_ordered_and_deterministic() {
        let c = small(
            r#"[{"kind": "oneshot"}, {"kind": "fkm"}, {"kind": "central"}, {"kind": "oneshot", "informed": [1, 3]}]"#,
            "",
        );
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.data, b.data);
        let keys: Vec<(&str, u64, Round)> = a
            .records
            .iter()
            .map(|r| (r.method.as_str(), r.seed, r.round))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(a
            .records
            .iter()
            .any(|r| r.method == "oneshot_informed" && r.metric == "k_local"));
        assert_eq!(a.data.iter().map(|d| d.seed).collect::<Vec<_>>(), [2, 1]);
    }

    #[test]
    fn beta_leaves_pooled_data_unchanged() {
        let pooled_sorted = |beta: f64| {
            let mut c = small(r#"[{"kind": "central"}]"#, "");
            if let PartitionSpec::Beta(b) = &mut c.partition {
                b.beta = beta;
            }
            let data = prepare_data(&c).unwrap().remove(0);
            let mut rows: Vec<Vec<u64>> = PointSet::concat(&data.clients)
                .unwrap()
                .rows()
                .map(|r| r.iter().map(|v| v.to_bits()).collect())
                .collect();
            rows.sort();
            (rows, data.info.client_sizes)
        };
        let (a, sa) = pooled_sorted(0.1);
        let (b, sb) = pooled_sorted(10.0);
        assert_eq!(a, b);
        assert_eq!(sa.iter().sum::<usize>(), 60);
        assert_eq!(sb.iter().sum::<usize>(), 60);
    }

    #[test]
    fn fixed_clusters_record_dealt_labels() {
        let c = cfg(r#"{
            "dataset": {"grid": {"centers_per_side": 2, "points_per_cluster": 10}},
            "partition": {"fixed_clusters": {"clusters_per_client": [1, 2, 4],
                                              "max_points_per_client": [5, null, null]}},
            "methods": [{"kind": "central"}],
            "metrics": ["ari"], "seeds": [0], "output": {"path": "x.csv"}
        }"#);
        let data = prepare_data(&c).unwrap().remove(0);
        let labels = data.info.labels_per_client.unwrap();
        assert_eq!(labels.iter().map(Vec::len).collect::<Vec<_>>(), [1, 2, 4]);
        assert!(data.info.client_sizes[0] <= 5);
        for (client, held) in data.clients.iter().zip(&labels) {
            assert!(client.labels().unwrap().iter().all(|l| held.contains(l)));
        }
    }

    #[test]
    fn client_files_run_pre_partitioned() {
        let dir = tempfile::tempdir().unwrap();
        let c = small(r#"[{"kind": "central"}]"#, "");
        let data = prepare_data(&c).unwrap().remove(0);
        let mut paths = Vec::new();
        for (i, client) in data.clients.iter().enumerate() {
            let p = dir.path().join(format!("c{i}.csv"));
            write_points_file(&p, client).unwrap();
            paths.push(p);
        }
        let mut c2 = c.clone();
        c2.dataset = DatasetSpec::ClientFiles {
            paths,
            has_labels: true,
        };
        c2.partition = PartitionSpec::PrePartitioned;
        c2.validate().unwrap();
        let loaded = prepare_data(&c2).unwrap().remove(0);
        assert_eq!(loaded.info.client_sizes, data.info.client_sizes);
        let out = run_experiment(&c2).unwrap();
        assert!(out.records.iter().any(|r| r.metric == "ari"));
    }

    #[test]
    fn missing_files_fail_before_running() {
        let mut c = small(r#"[{"kind": "fkm"}]"#, "");
        c.dataset = DatasetSpec::File {
            path: "/nonexistent/points.csv".into(),
            has_labels: true,
        };
        assert!(matches!(run_experiment(&c), Err(Error::Io { .. })));
    }

    #[test]
    fn generate_data_writes_clients_and_meta() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(r#"[{"kind": "central"}]"#, "");
        c.output.path = dir.path().join("exp.csv");
        let files = generate_data(&c, Path::new("")).unwrap();
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"seed2_pooled.csv".to_string()));
        assert!(names.contains(&"seed1_meta.json".to_string()));
        assert!(files
            .iter()
            .all(|p| p.starts_with(dir.path().join("exp_data"))));
        let pooled = load_points_file(&dir.path().join("exp_data/seed2_pooled.csv"), true).unwrap();
        assert_eq!(pooled.len(), 60);
    }
}
