//! Trial orchestration: evaluate many configurations against an evaluator,
//! persist line-delimited trial records, and resume interrupted studies.
//!
//! Per-trial RNG seeds derive from (study seed, config index), so results do
//! not depend on worker count or scheduling order. Failures become failed
//! records; they never abort a study.

use crate::learners::derive_seed;
use crate::metrics::MetricKind;
use crate::space::{Configuration, ParamValue, SearchSpace, SpaceError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("evaluator rejected the space: {0}")]
    Schema(String),
    #[error("no successful records carry metric `{0}`")]
    NoOkRecords(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool error: {0}")]
    Pool(String),
}

/// Metrics produced by one successful trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub train: BTreeMap<String, f64>,
    pub valid: BTreeMap<String, f64>,
    pub rounds: Option<u64>,
}

/// Anything that can score a configuration. Implementations must be
/// deterministic per (config, seed) unless documented otherwise.
pub trait Evaluator: Sync {
    /// Pre-flight schema check: every parameter name in the space must be
    /// understood. Runs before any trial.
    fn check_space(&self, space: &SearchSpace) -> Result<(), StudyError>;

    /// Evaluate one configuration. An Err becomes a failed record.
    fn evaluate(&self, config: &Configuration, seed: u64) -> Result<TrialMetrics, String>;

    /// Short identifier recorded in study metadata.
    fn id(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed(String),
}

/// One evaluated configuration; the unit of all downstream analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: u64,
    pub config: BTreeMap<String, ParamValue>,
    pub train: BTreeMap<String, f64>,
    pub valid: BTreeMap<String, f64>,
    pub rounds: Option<u64>,
    pub wall_time_s: f64,
    pub status: TrialStatus,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        matches!(self.status, TrialStatus::Ok)
    }

    pub fn valid_metric(&self, kind: MetricKind) -> Option<f64> {
        self.valid.get(kind.name()).copied()
    }

    pub fn train_metric(&self, kind: MetricKind) -> Option<f64> {
        self.train.get(kind.name()).copied()
    }

    pub fn param_f64(&self, name: &str) -> Option<f64> {
        self.config.get(name).and_then(ParamValue::as_f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMeta {
    pub seed: u64,
    pub evaluator_id: String,
    pub dataset_id: String,
    pub created_unix: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    pub space: SearchSpace,
    pub records: Vec<TrialRecord>,
    pub meta: StudyMeta,
}

impl StudyResult {
    pub fn ok_records(&self) -> impl Iterator<Item = &TrialRecord> {
        self.records.iter().filter(|r| r.is_ok())
    }

    pub fn failed_count(&self) -> usize {
        self.records.iter().filter(|r| !r.is_ok()).count()
    }

    /// Persist as `study.json` (space + metadata) plus `results.jsonl`.
    pub fn save(&self, dir: &Path) -> Result<(), StudyError> {
        std::fs::create_dir_all(dir)?;
        let head = serde_json::json!({ "space": self.space, "meta": self.meta });
        std::fs::write(dir.join("study.json"), serde_json::to_string(&head)?)?;
        write_records(&dir.join("results.jsonl"), &self.records)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<StudyResult, StudyError> {
        let head: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("study.json"))?)?;
        let space: SearchSpace = serde_json::from_value(head["space"].clone())?;
        let meta: StudyMeta = serde_json::from_value(head["meta"].clone())?;
        let records = read_records(&dir.join("results.jsonl"))?;
        Ok(StudyResult {
            space,
            records,
            meta,
        })
    }

    /// Rebuild a study from bare records, inferring per-parameter grids from
    /// the observed values. Declared order is alphabetical (records do not
    /// preserve it); indices on the records are kept as-is.
    pub fn from_records(records: Vec<TrialRecord>) -> Result<StudyResult, StudyError> {
        let space = infer_space(&records)?;
        Ok(StudyResult {
            space,
            records,
            meta: StudyMeta {
                seed: 0,
                evaluator_id: "replay".to_string(),
                dataset_id: "unknown".to_string(),
                created_unix: 0,
            },
        })
    }
}

fn infer_space(records: &[TrialRecord]) -> Result<SearchSpace, StudyError> {
    use crate::space::{HyperParam, ParamKind};
    let mut values: BTreeMap<String, Vec<ParamValue>> = BTreeMap::new();
    for r in records {
        for (name, v) in &r.config {
            let entry = values.entry(name.clone()).or_default();
            if !entry.iter().any(|e| crate::space::values_eq(e, v)) {
                entry.push(v.clone());
            }
        }
    }
    let mut params = Vec::new();
    for (name, mut vals) in values {
        let all_int = vals.iter().all(|v| matches!(v, ParamValue::Int(_)));
        let all_num = vals.iter().all(|v| v.as_f64().is_some());
        let kind = if all_int {
            ParamKind::Integer
        } else if all_num {
            ParamKind::Real
        } else {
            ParamKind::Nominal
        };
        if all_num {
            vals.sort_by(|a, b| a.as_f64().unwrap().partial_cmp(&b.as_f64().unwrap()).unwrap());
            if !all_int {
                // normalize mixed Int/Real encodings
                vals = vals
                    .into_iter()
                    .map(|v| ParamValue::Real(v.as_f64().unwrap()))
                    .collect();
            }
        }
        params.push(HyperParam::new(name, kind, vals)?);
    }
    Ok(SearchSpace::new(params)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    All,
    Sample { n: u64, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub selection: Selection,
    pub parallelism: usize,
    pub seed: u64,
    pub dataset_id: String,
}

impl StudyOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            selection: Selection::All,
            parallelism: 1,
            seed,
            dataset_id: "unknown".to_string(),
        }
    }
}

/// Run one trial per selected configuration.
///
/// `existing` records (from an interrupted run) are carried over and their
/// indices skipped; `sink` receives each fresh record as it completes
/// (serialized by an internal lock).
pub fn run_study(
    space: &SearchSpace,
    evaluator: &dyn Evaluator,
    opts: &StudyOptions,
    existing: Vec<TrialRecord>,
    sink: Option<&(dyn Fn(&TrialRecord) + Sync)>,
) -> Result<StudyResult, StudyError> {
    evaluator.check_space(space)?;
    let configs: Vec<Configuration> = match &opts.selection {
        Selection::All => space.enumerate().collect(),
        Selection::Sample { n, seed } => space.sample(*n, *seed)?,
    };
    let done: HashSet<u64> = existing.iter().map(|r| r.index).collect();
    let todo: Vec<&Configuration> = configs.iter().filter(|c| !done.contains(&c.index)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallelism.max(1))
        .build()
        .map_err(|e| StudyError::Pool(e.to_string()))?;
    let study_seed = opts.seed;
    let mut fresh: Vec<TrialRecord> = pool.install(|| {
        use rayon::prelude::*;
        todo.par_iter()
            .map(|config| {
                let record = run_one(evaluator, config, study_seed);
                if let Some(sink) = sink {
                    sink(&record);
                }
                record
            })
            .collect()
    });

    let mut records = existing;
    records.append(&mut fresh);
    records.sort_by_key(|r| r.index);
    Ok(StudyResult {
        space: space.clone(),
        records,
        meta: StudyMeta {
            seed: opts.seed,
            evaluator_id: evaluator.id(),
            dataset_id: opts.dataset_id.clone(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        },
    })
}

fn run_one(evaluator: &dyn Evaluator, config: &Configuration, study_seed: u64) -> TrialRecord {
    let trial_seed = derive_seed(study_seed, config.index);
    let start = Instant::now();
    let outcome = evaluator.evaluate(config, trial_seed);
    let wall_time_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok(m) => TrialRecord {
            index: config.index,
            config: config.to_map(),
            train: m.train,
            valid: m.valid,
            rounds: m.rounds,
            wall_time_s,
            status: TrialStatus::Ok,
        },
        Err(reason) => TrialRecord {
            index: config.index,
            config: config.to_map(),
            train: BTreeMap::new(),
            valid: BTreeMap::new(),
            rounds: None,
            wall_time_s,
            status: TrialStatus::Failed(reason),
        },
    }
}

/// Best successful record by the metric in its native orientation;
/// ties broken by lowest config index.
pub fn best(result: &StudyResult, metric: MetricKind) -> Result<&TrialRecord, StudyError> {
    result
        .ok_records()
        .filter(|r| r.valid_metric(metric).is_some())
        .min_by(|a, b| {
            let va = a.valid_metric(metric).unwrap();
            let vb = b.valid_metric(metric).unwrap();
            if metric.better(va, vb) {
                std::cmp::Ordering::Less
            } else if metric.better(vb, va) {
                std::cmp::Ordering::Greater
            } else {
                a.index.cmp(&b.index)
            }
        })
        .ok_or_else(|| StudyError::NoOkRecords(metric.name().to_string()))
}

// --- line-delimited persistence -------------------------------------------

pub fn record_to_line(record: &TrialRecord) -> Result<String, StudyError> {
    Ok(serde_json::to_string(record)?)
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> Result<(), StudyError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(f, "{}", record_to_line(r)?)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>, StudyError> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// CSV export with flattened columns.
pub fn records_to_csv(result: &StudyResult, path: &Path) -> Result<(), StudyError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| StudyError::Schema(e.to_string()))?;
    let param_names: Vec<String> = result.space.params().iter().map(|p| p.name.clone()).collect();
    let mut metric_names: Vec<String> = Vec::new();
    for r in result.ok_records() {
        for k in r.valid.keys() {
            if !metric_names.contains(k) {
                metric_names.push(k.clone());
            }
        }
    }
    metric_names.sort();
    let mut header = vec!["index".to_string()];
    header.extend(param_names.iter().cloned());
    header.extend(metric_names.iter().map(|m| format!("train_{m}")));
    header.extend(metric_names.iter().map(|m| format!("valid_{m}")));
    header.push("rounds".to_string());
    header.push("wall_time_s".to_string());
    header.push("status".to_string());
    w.write_record(&header)
        .map_err(|e| StudyError::Schema(e.to_string()))?;
    for r in &result.records {
        let mut row = vec![r.index.to_string()];
        for p in &param_names {
            row.push(r.config.get(p).map_or(String::new(), |v| v.to_string()));
        }
        for m in &metric_names {
            row.push(r.train.get(m).map_or(String::new(), |v| v.to_string()));
        }
        for m in &metric_names {
            row.push(r.valid.get(m).map_or(String::new(), |v| v.to_string()));
        }
        row.push(r.rounds.map_or(String::new(), |v| v.to_string()));
        row.push(r.wall_time_s.to_string());
        row.push(match &r.status {
            TrialStatus::Ok => "ok".to_string(),
            TrialStatus::Failed(reason) => format!("failed: {reason}"),
        });
        w.write_record(&row)
            .map_err(|e| StudyError::Schema(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

// --- external evaluator (subprocess line protocol) -------------------------

/// Child-process evaluator. One process per trial: a single request line is
/// written to its stdin and a single response line read from its stdout.
///
/// Request:  {"id": <int>, "seed": <int>, "params": {<name>: <value>, ...}}
/// Response: {"id": <int>, "train": {...}, "valid": {...}, "rounds": <int|null>}
pub struct ExternalEvaluator {
    pub command: Vec<String>,
    pub timeout: Duration,
}

impl ExternalEvaluator {
    pub fn new(command: Vec<String>, timeout: Duration) -> Self {
        Self { command, timeout }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    id: u64,
    seed: u64,
    params: &'a BTreeMap<String, ParamValue>,
}

#[derive(Deserialize)]
struct WireResponse {
    id: u64,
    train: BTreeMap<String, f64>,
    valid: BTreeMap<String, f64>,
    #[serde(default)]
    rounds: Option<u64>,
}

impl Evaluator for ExternalEvaluator {
    fn check_space(&self, _space: &SearchSpace) -> Result<(), StudyError> {
        if self.command.is_empty() {
            return Err(StudyError::Schema("empty external command".to_string()));
        }
        Ok(())
    }

    fn evaluate(&self, config: &Configuration, seed: u64) -> Result<TrialMetrics, String> {
        let params = config.to_map();
        let request = serde_json::to_string(&WireRequest {
            id: config.index,
            seed,
            params: &params,
        })
        .map_err(|e| format!("request encode: {e}"))?;

        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawn: {e}"))?;

        {
            let stdin = child.stdin.as_mut().ok_or("no stdin")?;
            writeln!(stdin, "{request}").map_err(|e| format!("write: {e}"))?;
        }
        drop(child.stdin.take());

        let stdout = child.stdout.take().ok_or("no stdout")?;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut line = String::new();
            let result = BufReader::new(stdout).read_line(&mut line).map(|_| line);
            let _ = tx.send(result);
        });

        let line = match rx.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(format!("read: {e}"));
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err("timeout".to_string());
            }
        };
        let status = child.wait().map_err(|e| format!("wait: {e}"))?;
        if line.trim().is_empty() {
            return Err(format!("no response (exit status {status})"));
        }
        let response: WireResponse =
            serde_json::from_str(line.trim()).map_err(|e| format!("malformed response: {e}"))?;
        if response.id != config.index {
            return Err(format!(
                "protocol error: response id {} does not match request id {}",
                response.id, config.index
            ));
        }
        if !status.success() {
            return Err(format!("nonzero exit: {status}"));
        }
        Ok(TrialMetrics {
            train: response.train,
            valid: response.valid,
            rounds: response.rounds,
        })
    }

    fn id(&self) -> String {
        format!("external:{}", self.command.join(" "))
    }
}
