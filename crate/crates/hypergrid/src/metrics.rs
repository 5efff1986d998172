//! Evaluation metrics and the derived gap/comparison statistics.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

const LOGLOSS_EPS: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {0} true values vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("auc undefined: only one class present")]
    SingleClass,
    #[error("r2 undefined: zero total sum of squares")]
    ZeroSst,
    #[error("binary targets must be 0 or 1")]
    NonBinaryTarget,
    #[error("relative decrease undefined: zero reference metric")]
    ZeroReference,
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mse,
    R2,
    Logloss,
    Auc,
}

impl MetricKind {
    pub fn lower_is_better(self) -> bool {
        matches!(self, MetricKind::Mse | MetricKind::Logloss)
    }

    /// True when `a` is a strictly better value than `b` for this metric.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.lower_is_better() {
            a < b
        } else {
            a > b
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::R2 => "r2",
            MetricKind::Logloss => "logloss",
            MetricKind::Auc => "auc",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, MetricError> {
        match s {
            "mse" => Ok(MetricKind::Mse),
            "r2" => Ok(MetricKind::R2),
            "logloss" => Ok(MetricKind::Logloss),
            "auc" => Ok(MetricKind::Auc),
            other => Err(MetricError::UnknownMetric(other.to_string())),
        }
    }
}

pub fn compute_metric(kind: MetricKind, y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(MetricError::Empty);
    }
    match kind {
        MetricKind::Mse => Ok(mse(y_true, y_pred)),
        MetricKind::R2 => r2(y_true, y_pred),
        MetricKind::Logloss => logloss(y_true, y_pred),
        MetricKind::Auc => auc(y_true, y_pred),
    }
}

fn mse(y_true: &[f64], y_pred: &[f64]) -> f64 {
    let n = y_true.len() as f64;
    y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>()
        / n
}

fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricError> {
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let sst: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    if sst == 0.0 {
        return Err(MetricError::ZeroSst);
    }
    let sse: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    Ok(1.0 - sse / sst)
}

fn logloss(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricError> {
    let mut total = 0.0;
    for (&y, &p) in y_true.iter().zip(y_pred) {
        if y != 0.0 && y != 1.0 {
            return Err(MetricError::NonBinaryTarget);
        }
        let p = p.clamp(LOGLOSS_EPS, 1.0 - LOGLOSS_EPS);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / y_true.len() as f64)
}

/// Mann-Whitney AUC via rank sums; ties get average ranks (0.5 credit).
fn auc(y_true: &[f64], y_pred: &[f64]) -> Result<f64, MetricError> {
    for &y in y_true {
        if y != 0.0 && y != 1.0 {
            return Err(MetricError::NonBinaryTarget);
        }
    }
    let n_pos = y_true.iter().filter(|&&y| y == 1.0).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let ranks = average_ranks(y_pred);
    let rank_sum_pos: f64 = y_true
        .iter()
        .zip(&ranks)
        .filter(|(&y, _)| y == 1.0)
        .map(|(_, &r)| r)
        .sum();
    let n_pos = n_pos as f64;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg as f64))
}

/// 1-based ranks; tied values share the average of their rank range.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Train/valid gap for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReportRow {
    pub metric_train: f64,
    pub metric_valid: f64,
    pub gap: f64,
    /// 100 * gap / metric_valid; absent when metric_valid is 0.
    pub relative_gap_pct: Option<f64>,
}

pub fn gap_stats(metric_train: f64, metric_valid: f64) -> GapReportRow {
    let gap = (metric_train - metric_valid).abs();
    let relative_gap_pct = if metric_valid != 0.0 {
        Some(100.0 * gap / metric_valid)
    } else {
        None
    };
    GapReportRow {
        metric_train,
        metric_valid,
        gap,
        relative_gap_pct,
    }
}

/// 100 * |g_opt - r_opt| / |g_opt|.
pub fn relative_decrease(metric_gopt: f64, metric_ropt: f64) -> Result<f64, MetricError> {
    if metric_gopt == 0.0 {
        return Err(MetricError::ZeroReference);
    }
    Ok(100.0 * (metric_gopt - metric_ropt).abs() / metric_gopt.abs())
}
