//! Plain-text point files.
//!
//! One point per line, comma-separated decimal values. An optional header
//! line (any non-numeric first line) is skipped. When labels are requested the
//! last column is an integer label and is not part of the coordinates.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::points::PointSet;

pub fn load_points_file(path: &Path, has_labels: bool) -> Result<PointSet> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(row as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        let values = match values {
            Ok(v) => v,
            Err(_) if row == 0 => continue, // header
            Err(e) => {
                let cell = record
                    .iter()
                    .find(|c| c.parse::<f64>().is_err())
                    .unwrap_or("");
                return Err(parse_err(line, format!("non-numeric cell `{cell}`: {e}")));
            }
        };
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(parse_err(line, format!("column {} is not finite", i + 1)));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_err(
                    line,
                    format!("expected {w} columns, found {}", values.len()),
                ))
            }
            _ => {}
        }
        if has_labels {
            let (&label, coords) = values.split_last().expect("csv records are never empty");
            if coords.is_empty() {
                return Err(parse_err(line, "label column leaves no coordinates".into()));
            }
            if label.fract() != 0.0 || label.abs() > i64::MAX as f64 {
                return Err(parse_err(
                    line,
                    format!("label `{label}` is not an integer"),
                ));
            }
            labels.push(label as i64);
            data.extend_from_slice(coords);
        } else {
            data.extend_from_slice(&values);
        }
    }

    let width = width.ok_or_else(|| parse_err(0, "file contains no points".into()))?;
    let dim = if has_labels { width - 1 } else { width };
    let points = PointSet::new(data, dim).map_err(|e| parse_err(0, e.to_string()))?;
    if has_labels {
        points.with_labels(labels)
    } else {
        Ok(points)
    }
}

/// Write points (and labels, if present, as the last column) with a header.
pub fn write_points_file(path: &Path, points: &PointSet) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let mut header: Vec<String> = (0..points.dim()).map(|j| format!("x{j}")).collect();
    if points.labels().is_some() {
        header.push("label".into());
    }
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (i, x) in points.rows().enumerate() {
        let mut cells: Vec<String> = x.iter().map(f64::to_string).collect();
        if let Some(l) = points.labels() {
            cells.push(l[i].to_string());
        }
        writeln!(out, "{}", cells.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Pretty-printed JSON sidecar (dataset metadata, resolved configs).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("metadata serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
