//! Run records and their JSON-Lines file form.
//!
//! A run file holds `probe` lines (one per step probe), `epoch` lines (one
//! per epoch) and a closing `summary` line; a failed run holds a single
//! `failure` line instead.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::OptimizerKind;
use super::metrics::Metrics;
use crate::dro::DroDiagnostics;
use crate::optim::Lambda;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_top1: f64,
    pub lambda: Lambda,
    /// Normalizer at the end of the epoch (ABSGD only).
    pub s: Option<f64>,
    pub grad_norm_sq: f64,
    #[serde(
        serialize_with = "crate::serde_ext::serialize_f64",
        deserialize_with = "crate::serde_ext::deserialize_f64"
    )]
    pub c0_hat: f64,
    pub c1_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub step: u64,
    pub epoch: usize,
    pub diagnostics: DroDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub steps: u64,
    pub metrics: Metrics,
    pub wall_time_secs: f64,
    pub trace: Vec<TraceRow>,
    pub probes: Vec<ProbeRow>,
}

impl RunRecord {
    /// Equality ignoring wall time.
    pub fn same_result(&self, other: &RunRecord) -> bool {
        let mut a = self.clone();
        a.wall_time_secs = other.wall_time_secs;
        a == *other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub steps: u64,
    pub metrics: Metrics,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunLine {
    Probe(ProbeRow),
    Epoch(TraceRow),
    Summary(RunSummary),
    Failure(RunFailure),
}

/// Outcome of one run as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum RunFile {
    Completed(RunRecord),
    Failed(RunFailure),
}

pub fn run_file_name(name: &str, seed: u64) -> String {
    let safe: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}-seed{seed}.jsonl")
}

fn write_lines(path: &Path, lines: &[RunLine]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for line in lines {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_run(path: impl AsRef<Path>, record: &RunRecord) -> Result<()> {
    let mut lines: Vec<RunLine> = record.probes.iter().cloned().map(RunLine::Probe).collect();
    lines.extend(record.trace.iter().cloned().map(RunLine::Epoch));
    lines.push(RunLine::Summary(RunSummary {
        name: record.name.clone(),
        config_hash: record.config_hash.clone(),
        seed: record.seed,
        optimizer: record.optimizer,
        steps: record.steps,
        metrics: record.metrics.clone(),
        wall_time_secs: record.wall_time_secs,
    }));
    write_lines(path.as_ref(), &lines)
}

pub fn write_failure(path: impl AsRef<Path>, failure: &RunFailure) -> Result<()> {
    write_lines(path.as_ref(), &[RunLine::Failure(failure.clone())])
}

pub fn read_run(path: impl AsRef<Path>) -> Result<RunFile> {
    let reader = BufReader::new(File::open(path)?);
    let (mut probes, mut trace) = (Vec::new(), Vec::new());
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RunLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        match parsed {
            RunLine::Probe(p) => probes.push(p),
            RunLine::Epoch(t) => trace.push(t),
            RunLine::Failure(f) => return Ok(RunFile::Failed(f)),
            RunLine::Summary(s) => {
                return Ok(RunFile::Completed(RunRecord {
                    name: s.name,
                    config_hash: s.config_hash,
                    seed: s.seed,
                    optimizer: s.optimizer,
                    steps: s.steps,
                    metrics: s.metrics,
                    wall_time_secs: s.wall_time_secs,
                    trace,
                    probes,
                }))
            }
        }
    }
    Err(Error::Parse {
        line: 0,
        msg: "run file has no summary or failure line".into(),
    })
}

/// Every `*.jsonl` run file directly under `dir`, sorted by file name.
pub fn read_run_dir(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, RunFile)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| read_run(&p).map(|r| (p, r)))
        .collect()
}
