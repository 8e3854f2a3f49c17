//! Command implementations behind the `fedsketch` binary: run one
//! experiment, sweep local learning rates, and compare metrics files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fedsketch_core::{run_experiment_with, ExperimentConfig, RoundRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or invalid configuration.
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<fedsketch_core::Error> for CliError {
    fn from(e: fedsketch_core::Error) -> Self {
        match e {
            fedsketch_core::Error::InvalidConfig { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub const CSV_HEADER: [&str; 6] = [
    "round",
    "clients",
    "uplink_payload_bytes_cum",
    "uplink_total_bytes_cum",
    "train_loss",
    "test_accuracy",
];

/// Reads and validates a config; relative paths resolve against its
/// directory, and the CSV defaults to `metrics.csv` next to it.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    if cfg.output.is_none() {
        cfg.output = Some(PathBuf::from("metrics.csv"));
    }
    cfg.resolve_paths(base);
    Ok(cfg)
}

/// One metrics row per evaluation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u32,
    pub clients: usize,
    pub uplink_payload_bytes_cum: u64,
    pub uplink_total_bytes_cum: u64,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

impl MetricsRow {
    pub fn from_record(r: &RoundRecord) -> Option<Self> {
        Some(Self {
            round: r.round,
            clients: r.clients.len(),
            uplink_payload_bytes_cum: r.uplink_cumulative.payload,
            uplink_total_bytes_cum: r.uplink_cumulative.total(),
            train_loss: r.train_loss,
            test_accuracy: r.test_accuracy?,
        })
    }
}

pub fn write_metrics<W: Write>(rows: &[MetricsRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(CSV_HEADER).map_err(fail)?;
    for r in rows {
        w.write_record([
            r.round.to_string(),
            r.clients.to_string(),
            r.uplink_payload_bytes_cum.to_string(),
            r.uplink_total_bytes_cum.to_string(),
            format!("{:.6}", r.train_loss),
            format!("{:.6}", r.test_accuracy),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let header = rdr.headers().map_err(|e| io_err(path, e))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(io_err(path, format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    rdr.deserialize()
        .map(|row| row.map_err(|e| io_err(path, e)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub csv: PathBuf,
    pub model: PathBuf,
    pub rows: Vec<MetricsRow>,
}

fn model_path(cfg: &ExperimentConfig, csv: &Path) -> PathBuf {
    cfg.model_output
        .clone()
        .unwrap_or_else(|| csv.with_extension("model.json"))
}

/// Runs an already loaded config and writes its CSV and final model.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let csv_path = cfg
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("metrics.csv"));
    let result = run_experiment_with(cfg, |r| {
        if let Some(acc) = r.test_accuracy {
            log::info!(
                "round {} accuracy {acc:.4} uplink {} B",
                r.round,
                r.uplink_cumulative.total()
            );
        }
    })?;
    let rows: Vec<MetricsRow> = result.records.iter().filter_map(MetricsRow::from_record).collect();
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let file = fs::File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    write_metrics(&rows, file)?;
    let model = model_path(cfg, &csv_path);
    let json = serde_json::to_string(&result.final_params).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&model, json).map_err(|e| io_err(&model, e))?;
    Ok(RunOutput {
        csv: csv_path,
        model,
        rows,
    })
}

pub fn cmd_run(config: &Path) -> Result<RunOutput, CliError> {
    execute(&load_config(config)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub index: usize,
    pub lr: f32,
    pub csv: PathBuf,
    /// Final-row accuracy, or the error message of a failed run.
    pub outcome: Result<Option<f64>, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub entries: Vec<SweepEntry>,
    /// Index into `entries` of the best final accuracy; ties go to the
    /// earliest index.
    pub best: Option<usize>,
    pub summary_csv: PathBuf,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    path.with_file_name(format!("{stem}{suffix}"))
}

/// One run per learning rate with a shared master seed. A failing run is
/// recorded and the sweep continues.
pub fn cmd_sweep(config: &Path, lrs: &[f32]) -> Result<SweepSummary, CliError> {
    if lrs.is_empty() {
        return Err(CliError::Config("empty learning-rate list".into()));
    }
    let base = load_config(config)?;
    let base_csv = base.output.clone().unwrap_or_else(|| PathBuf::from("metrics.csv"));
    let mut entries = Vec::with_capacity(lrs.len());
    for (index, &lr) in lrs.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.round.local_lr = lr;
        let csv = with_suffix(&base_csv, &format!("_lr{index}.csv"));
        cfg.output = Some(csv.clone());
        cfg.model_output = Some(with_suffix(&base_csv, &format!("_lr{index}.model.json")));
        let outcome = cfg
            .validate()
            .map_err(CliError::from)
            .and_then(|_| execute(&cfg))
            .map(|out| out.rows.last().map(|r| r.test_accuracy))
            .map_err(|e| {
                log::error!("sweep run {index} (lr {lr}) failed: {e}");
                e.to_string()
            });
        entries.push(SweepEntry {
            index,
            lr,
            csv,
            outcome,
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in entries.iter().enumerate() {
        if let Ok(Some(acc)) = e.outcome {
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((i, acc));
            }
        }
    }
    let summary_csv = with_suffix(&base_csv, "_sweep.csv");
    let mut w = csv::Writer::from_path(&summary_csv).map_err(|e| io_err(&summary_csv, e))?;
    let fail = |e: csv::Error| io_err(&summary_csv, e);
    w.write_record(["lr_index", "lr", "final_accuracy", "status", "csv", "best"])
        .map_err(fail)?;
    for (i, e) in entries.iter().enumerate() {
        let (acc, status) = match &e.outcome {
            Ok(Some(a)) => (format!("{a:.6}"), "ok".to_string()),
            Ok(None) => (String::new(), "ok".to_string()),
            Err(msg) => (String::new(), format!("failed: {msg}")),
        };
        let is_best = best.map(|(b, _)| b) == Some(i);
        w.write_record([
            e.index.to_string(),
            e.lr.to_string(),
            acc,
            status,
            e.csv.display().to_string(),
            u8::from(is_best).to_string(),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| io_err(&summary_csv, e))?;
    Ok(SweepSummary {
        entries,
        best: best.map(|(i, _)| i),
        summary_csv,
    })
}

/// First row at or above the target accuracy.
pub fn crossing(rows: &[MetricsRow], target: f64) -> Option<&MetricsRow> {
    rows.iter().find(|r| r.test_accuracy >= target)
}

/// Text table comparing runs: final accuracy and the round and cumulative
/// bytes at which each first reaches `target`.
pub fn cmd_report(paths: &[PathBuf], target: f64) -> Result<String, CliError> {
    if paths.is_empty() {
        return Err(CliError::Config("report needs at least one CSV".into()));
    }
    let mut out = String::new();
    writeln!(
        out,
        "{:<40} {:>8} {:>10} {:>12} {:>16} {:>16}",
        "run", "rounds", "final_acc", "target_round", "payload_bytes", "total_bytes"
    )
    .unwrap();
    for p in paths {
        let rows = read_metrics(p)?;
        let (rounds, final_acc) = rows
            .last()
            .map_or(("-".into(), "-".into()), |r| (r.round.to_string(), format!("{:.4}", r.test_accuracy)));
        let (tr, pb, tb) = match crossing(&rows, target) {
            Some(r) => (
                r.round.to_string(),
                r.uplink_payload_bytes_cum.to_string(),
                r.uplink_total_bytes_cum.to_string(),
            ),
            None => ("never".into(), "never".into(), "never".into()),
        };
        writeln!(
            out,
            "{:<40} {:>8} {:>10} {:>12} {:>16} {:>16}",
            p.display(),
            rounds,
            final_acc,
            tr,
            pb,
            tb
        )
        .unwrap();
    }
    Ok(out)
}
