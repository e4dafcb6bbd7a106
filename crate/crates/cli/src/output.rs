//! CSV, plot-data and manifest files.
//!
//! Every experiment writes `<id>.csv` (one row per algorithm, seed and x),
//! `<id>_summary.csv` (mean and sample std across seeds), `<id>_plot.csv`
//! and `<id>_manifest.json`. Floats use Rust's shortest round-trip
//! formatting, so equal values always produce equal bytes. Cost columns are
//! `NaN` where every averaged episode overloaded a server.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{io_error, HarnessError};
use crate::harness::MetricsRow;
use crate::spec::{Algorithm, ExperimentKind, ExperimentSpec};

pub const ROLLING_WINDOW: usize = 100;

const METRICS: [&str; 6] = ["reward", "cost", "latency", "energy", "utilization", "overload_rate"];

fn metric_values(row: &MetricsRow) -> [f64; 6] {
    [
        row.reward,
        row.cost,
        row.latency,
        row.energy,
        row.utilization,
        row.overload_rate,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub id: String,
    pub kind: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub code_version: String,
    /// Resolved spec; rerunning it reproduces every file below.
    pub spec: String,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub plot: PathBuf,
    pub manifest: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

pub fn metrics_csv(kind: ExperimentKind, rows: &[MetricsRow]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["experiment", "algorithm", "seed", kind.x_label()];
    header.extend(METRICS);
    w.write_record(&header)?;
    for r in rows {
        let mut record = vec![
            r.experiment.clone(),
            r.algorithm.name().to_string(),
            r.seed.to_string(),
            r.x.to_string(),
        ];
        record.extend(metric_values(r).iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    Ok(w.into_inner().map_err(|e| io_error("<csv buffer>")(e.into_error()))?)
}

/// Mean and sample standard deviation of the non-NaN entries.
pub fn mean_std(values: &[f64]) -> (f64, f64, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    let n = finite.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = finite.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub x: f64,
    pub seeds: usize,
    /// `(mean, std)` per metric in `METRICS` order.
    pub stats: [(f64, f64); 6],
}

/// Groups rows by (algorithm, x) in first-seen order and aggregates across
/// seeds.
pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(Algorithm, u64)> = Vec::new();
    let mut groups: BTreeMap<(Algorithm, u64), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.algorithm, r.x.to_bits());
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let mut stats = [(0.0, 0.0); 6];
            for (m, slot) in stats.iter_mut().enumerate() {
                let values: Vec<f64> = members.iter().map(|r| metric_values(r)[m]).collect();
                let (mean, std, _) = mean_std(&values);
                *slot = (mean, std);
            }
            SummaryRow {
                algorithm: key.0,
                x: f64::from_bits(key.1),
                seeds: members.len(),
                stats,
            }
        })
        .collect()
}

pub fn summary_csv(kind: ExperimentKind, rows: &[MetricsRow]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["algorithm".to_string(), kind.x_label().to_string(), "seeds".to_string()];
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    for s in summarize(rows) {
        let mut record = vec![s.algorithm.name().to_string(), s.x.to_string(), s.seeds.to_string()];
        for (mean, std) in s.stats {
            record.push(mean.to_string());
            record.push(std.to_string());
        }
        w.write_record(&record)?;
    }
    Ok(w.into_inner().map_err(|e| io_error("<csv buffer>")(e.into_error()))?)
}

/// Mean of every length-`window` slice; empty when the series is shorter.
pub fn rolling_mean(series: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || series.len() < window {
        return Vec::new();
    }
    series
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

/// Plot-ready series. `convergence` gives the rolling mean reward per
/// (algorithm, seed); `sweep` gives per-(algorithm, x) means and stds.
pub fn emit_plot_data(rows: &[MetricsRow], kind: &str, x_label: &str) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match kind {
        "convergence" => {
            w.write_record(["algorithm", "seed", x_label, "rolling_reward"])?;
            let mut series: Vec<((Algorithm, u64), Vec<(f64, f64)>)> = Vec::new();
            for r in rows {
                match series.iter_mut().find(|(k, _)| *k == (r.algorithm, r.seed)) {
                    Some((_, s)) => s.push((r.x, r.reward)),
                    None => series.push(((r.algorithm, r.seed), vec![(r.x, r.reward)])),
                }
            }
            for ((algorithm, seed), points) in series {
                let rewards: Vec<f64> = points.iter().map(|p| p.1).collect();
                // Search traces are subsampled, so their window is one row.
                let window = if algorithm.agent_kind().is_some() || algorithm == Algorithm::Uniform {
                    ROLLING_WINDOW
                } else {
                    1
                };
                for (i, v) in rolling_mean(&rewards, window).into_iter().enumerate() {
                    let x = points[i + window - 1].0;
                    w.write_record([algorithm.name().to_string(), seed.to_string(), x.to_string(), v.to_string()])?;
                }
            }
        }
        "sweep" => {
            w.write_record([
                "algorithm",
                x_label,
                "cost_mean",
                "cost_std",
                "latency_mean",
                "latency_std",
                "energy_mean",
                "energy_std",
                "utilization_mean",
                "utilization_std",
            ])?;
            for s in summarize(rows) {
                let mut record = vec![s.algorithm.name().to_string(), s.x.to_string()];
                for (mean, std) in &s.stats[1..5] {
                    record.push(mean.to_string());
                    record.push(std.to_string());
                }
                w.write_record(&record)?;
            }
        }
        other => return Err(HarnessError::UnknownPlotKind(other.to_string())),
    }
    Ok(w.into_inner().map_err(|e| io_error("<csv buffer>")(e.into_error()))?)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], entries: &mut Vec<FileEntry>) -> Result<PathBuf, HarnessError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(io_error(&path))?;
    entries.push(FileEntry {
        name: name.to_string(),
        sha256: hex::encode(Sha256::digest(bytes)),
    });
    Ok(path)
}

pub fn write_outputs(
    spec: &ExperimentSpec,
    rows: &[MetricsRow],
    checkpoints: &[PathBuf],
    dir: &Path,
) -> Result<OutputFiles, HarnessError> {
    let e = &spec.experiment;
    let kind = e.kind;
    let mut entries = Vec::new();
    let metrics = write_file(dir, &format!("{}.csv", e.id), &metrics_csv(kind, rows)?, &mut entries)?;
    let summary = write_file(dir, &format!("{}_summary.csv", e.id), &summary_csv(kind, rows)?, &mut entries)?;
    let plot_kind = if kind.is_sweep() { "sweep" } else { "convergence" };
    let plot = write_file(
        dir,
        &format!("{}_plot.csv", e.id),
        &emit_plot_data(rows, plot_kind, kind.x_label())?,
        &mut entries,
    )?;
    for path in checkpoints {
        let bytes = std::fs::read(path).map_err(io_error(path))?;
        let name = path.strip_prefix(dir).unwrap_or(path).to_string_lossy().into_owned();
        entries.push(FileEntry {
            name,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = Manifest {
        id: e.id.clone(),
        kind: kind.name().to_string(),
        config_hash: spec.config_hash(),
        seeds: e.seeds.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        spec: spec.to_toml_string(),
        files: entries,
    };
    let manifest_path = dir.join(format!("{}_manifest.json", e.id));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(io_error(&manifest_path))?;
    Ok(OutputFiles {
        metrics,
        summary,
        plot,
        manifest: manifest_path,
        checkpoints: checkpoints.to_vec(),
    })
}
