//! Result records and the files they are written to.
//!
//! A run writes the main results file plus two sidecars next to it:
//! `<stem>.meta.json` (resolved config and per-seed data details) and
//! `<stem>.timing.csv` (wall time per method run). Wall times live in their
//! own file so the results and metadata are byte-identical across reruns.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::config::{ExperimentConfig, OutputFormat};
use crate::error::{Error, Result};

pub const RESULTS_FORMAT: &str = "fedkmeans-results";
pub const META_FORMAT: &str = "fedkmeans-run-meta";
pub const RESULTS_VERSION: u32 = 1;

const CSV_HEADER: [&str; 5] = ["method", "seed", "round", "metric", "value"];

/// Aggregation index, or the end of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Round {
    Index(usize),
    Final,
}

impl fmt::Display for Round {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Round::Index(r) => write!(f, "{r}"),
            Round::Final => f.write_str("final"),
        }
    }
}

impl FromStr for Round {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "final" {
            return Ok(Round::Final);
        }
        s.parse()
            .map(Round::Index)
            .map_err(|_| format!("round must be an integer or `final`, got `{s}`"))
    }
}

impl Serialize for Round {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Round::Index(r) => s.serialize_u64(*r as u64),
            Round::Final => s.serialize_str("final"),
        }
    }
}

impl<'de> Deserialize<'de> for Round {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(r) => Ok(Round::Index(r)),
            Raw::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: String,
    pub seed: u64,
    pub round: Round,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub method: String,
    pub seed: u64,
    pub seconds: f64,
}

/// What one seed's data looked like after generation and partitioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataInfo {
    pub seed: u64,
    /// Seed of the generated grid, if the dataset is synthetic.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    pub dim: usize,
    pub client_sizes: Vec<usize>,
    /// Clients left without points by the partition and excluded from runs.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub dropped_clients: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub locations: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels_per_client: Option<Vec<Vec<i64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    /// Canonically ordered: by method, seed, then round.
    pub records: Vec<ResultRecord>,
    pub data: Vec<DataInfo>,
    pub timings: Vec<Timing>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub format: String,
    pub version: u32,
    pub config: ExperimentConfig,
    pub data: Vec<DataInfo>,
    pub records: Vec<ResultRecord>,
}

#[derive(Serialize)]
struct MetaDocument<'a> {
    format: &'static str,
    version: u32,
    config: &'a ExperimentConfig,
    data: &'a [DataInfo],
}

pub(crate) fn sort_canonical(records: &mut [ResultRecord]) {
    // Stable, so metrics keep their configured order.
    records.sort_by(|a, b| (&a.method, a.seed, a.round).cmp(&(&b.method, b.seed, b.round)));
}

/// `dir/run.csv` -> `dir/run.<suffix>`.
pub fn sidecar_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("results");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Write `output` to `cfg.output.path` (relative to `base`) in the
/// configured format, plus the sidecars. `cfg` is echoed as given. Returns
/// the paths written.
pub fn emit_results(
    output: &ExperimentOutput,
    cfg: &ExperimentConfig,
    base: &Path,
) -> Result<Vec<PathBuf>> {
    if output.records.is_empty() {
        return Err(Error::invalid("no records to write"));
    }
    let path = &base.join(&cfg.output.path);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut written = vec![path.clone()];
    match cfg.output.format {
        OutputFormat::Csv => {
            write_csv(path, &output.records)?;
            let meta = sidecar_path(path, "meta.json");
            let doc = MetaDocument {
                format: META_FORMAT,
                version: RESULTS_VERSION,
                config: cfg,
                data: &output.data,
            };
            crate::datagen::write_json(&meta, &doc)?;
            written.push(meta);
        }
        OutputFormat::Json => {
            let doc = ResultsDocument {
                format: RESULTS_FORMAT.into(),
                version: RESULTS_VERSION,
                config: cfg.clone(),
                data: output.data.clone(),
                records: output.records.clone(),
            };
            crate::datagen::write_json(path, &doc)?;
        }
    }
    let timing = sidecar_path(path, "timing.csv");
    write_timings(&timing, &output.timings)?;
    written.push(timing);
    Ok(written)
}

pub fn write_csv(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for r in records {
        // f64 Display is the shortest string that parses back to the same bits.
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.round.to_string(),
            r.metric.clone(),
            r.value.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_timings(path: &Path, timings: &[Timing]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["method", "seed", "seconds"])
        .map_err(|e| csv_error(path, e))?;
    for t in timings {
        w.write_record([
            t.method.clone(),
            t.seed.to_string(),
            format!("{:.6}", t.seconds),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        out.push(ResultRecord {
            method: rec[0].to_string(),
            seed: rec[1].parse().map_err(|e| bad(format!("seed: {e}")))?,
            round: rec[2].parse().map_err(bad)?,
            metric: rec[3].to_string(),
            value: rec[4].parse().map_err(|e| bad(format!("value: {e}")))?,
        });
    }
    Ok(out)
}

pub fn read_json(path: &Path) -> Result<ResultsDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ResultsDocument = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    if doc.format != RESULTS_FORMAT || doc.version != RESULTS_VERSION {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!(
                "unsupported document `{}` version {}",
                doc.format, doc.version
            ),
        });
    }
    Ok(doc)
}

/// Read the records of a results file in either format.
pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_json(path).map(|d| d.records),
        _ => read_csv(path),
    }
}
