//! Post-hoc analyses over study results: balanced-factorial ANOVA with
//! F-share ranking, contour aggregation, top-k rank correlations, gap
//! reports, and AUC-versus-Logloss concordance.
//!
//! The ANOVA model contains all main effects and all pairwise interactions;
//! the residual pools every higher-order term. This requires a complete
//! single-replicate factorial over at least three multi-level factors.

use crate::metrics::{average_ranks, gap_stats, GapReportRow, MetricKind};
use crate::space::{values_eq, ParamValue};
use crate::study::{StudyResult, TrialRecord};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("design error: {0}")]
    Design(String),
    #[error("degenerate design: {0}")]
    Degenerate(String),
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("metric `{0}` missing from records")]
    MissingMetric(String),
}

pub type RecordFilter = dyn Fn(&TrialRecord) -> bool;

#[derive(Debug, Clone, Serialize)]
pub struct EffectRow {
    /// One HP name (main effect) or "a:b" with names sorted (interaction).
    pub effect: String,
    pub ss: f64,
    pub df: usize,
    pub f_stat: f64,
    pub f_share_pct: f64,
    pub cum_f_share_pct: f64,
}

/// A factor with its observed levels and per-record level index.
struct Factor {
    name: String,
    levels: Vec<ParamValue>,
    assignment: Vec<usize>,
}

fn collect_factors(
    records: &[&TrialRecord],
    param_order: &[String],
) -> Result<Vec<Factor>, AnalysisError> {
    let mut factors = Vec::new();
    for name in param_order {
        let mut levels: Vec<ParamValue> = Vec::new();
        let mut assignment = Vec::with_capacity(records.len());
        for r in records {
            let v = r.config.get(name).ok_or_else(|| {
                AnalysisError::Design(format!("record {} lacks parameter `{name}`", r.index))
            })?;
            let idx = match levels.iter().position(|l| values_eq(l, v)) {
                Some(i) => i,
                None => {
                    levels.push(v.clone());
                    levels.len() - 1
                }
            };
            assignment.push(idx);
        }
        if levels.len() >= 2 {
            factors.push(Factor {
                name: name.clone(),
                levels,
                assignment,
            });
        }
    }
    Ok(factors)
}

fn check_complete(factors: &[Factor], n: usize) -> Result<(), AnalysisError> {
    let cells: u128 = factors.iter().map(|f| f.levels.len() as u128).product();
    if cells > 10_000_000 {
        return Err(AnalysisError::Design(format!("design too large: {cells} cells")));
    }
    let cells = cells as usize;
    let mut counts = vec![0usize; cells];
    for i in 0..n {
        let mut id = 0usize;
        for f in factors {
            id = id * f.levels.len() + f.assignment[i];
        }
        counts[id] += 1;
    }
    if counts.iter().all(|&c| c == 1) {
        return Ok(());
    }
    let mut missing = Vec::new();
    for (id, &c) in counts.iter().enumerate() {
        if c != 1 {
            let mut rem = id;
            let mut cell = Vec::new();
            for f in factors.iter().rev() {
                let l = rem % f.levels.len();
                rem /= f.levels.len();
                cell.push(format!("{}={}", f.name, f.levels[l]));
            }
            cell.reverse();
            missing.push(format!("[{}] x{}", cell.join(", "), c));
            if missing.len() >= 5 {
                missing.push("...".to_string());
                break;
            }
        }
    }
    Err(AnalysisError::Design(format!(
        "incomplete or unbalanced design; offending cells (want exactly 1 each): {}",
        missing.join("; ")
    )))
}

/// Sums of squares for all mains and pairwise interactions, plus the
/// residual. Shared core behind `balanced_anova`, also usable directly when
/// the F statistic is undefined.
pub fn anova_ss(
    result: &StudyResult,
    metric: MetricKind,
    filter: Option<&RecordFilter>,
) -> Result<(Vec<(String, f64, usize)>, f64, usize), AnalysisError> {
    let records: Vec<&TrialRecord> = result
        .ok_records()
        .filter(|r| filter.map_or(true, |f| f(r)))
        .collect();
    if records.is_empty() {
        return Err(AnalysisError::Design("no records after filtering".to_string()));
    }
    let y: Vec<f64> = records
        .iter()
        .map(|r| {
            r.valid_metric(metric)
                .ok_or_else(|| AnalysisError::MissingMetric(metric.name().to_string()))
        })
        .collect::<Result<_, _>>()?;
    let param_order: Vec<String> = result.space.params().iter().map(|p| p.name.clone()).collect();
    let factors = collect_factors(&records, &param_order)?;
    if factors.len() < 3 {
        return Err(AnalysisError::Design(format!(
            "need at least 3 varying factors, found {}",
            factors.len()
        )));
    }
    check_complete(&factors, records.len())?;

    let n = y.len();
    let grand = y.iter().sum::<f64>() / n as f64;
    let ss_total: f64 = y.iter().map(|v| (v - grand) * (v - grand)).sum();

    // per-factor level means
    let level_means: Vec<Vec<f64>> = factors
        .iter()
        .map(|f| {
            let mut sums = vec![0.0; f.levels.len()];
            let mut counts = vec![0usize; f.levels.len()];
            for i in 0..n {
                sums[f.assignment[i]] += y[i];
                counts[f.assignment[i]] += 1;
            }
            sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
        })
        .collect();

    let mut terms: Vec<(String, f64, usize)> = Vec::new();
    for (fi, f) in factors.iter().enumerate() {
        let ss: f64 = (0..n)
            .map(|i| {
                let d = level_means[fi][f.assignment[i]] - grand;
                d * d
            })
            .sum();
        terms.push((f.name.clone(), ss, f.levels.len() - 1));
    }
    for a in 0..factors.len() {
        for b in (a + 1)..factors.len() {
            let (fa, fb) = (&factors[a], &factors[b]);
            let la = fa.levels.len();
            let lb = fb.levels.len();
            let mut sums = vec![0.0; la * lb];
            let mut counts = vec![0usize; la * lb];
            for i in 0..n {
                let c = fa.assignment[i] * lb + fb.assignment[i];
                sums[c] += y[i];
                counts[c] += 1;
            }
            let cell_means: Vec<f64> =
                sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
            let ss: f64 = (0..n)
                .map(|i| {
                    let d = cell_means[fa.assignment[i] * lb + fb.assignment[i]]
                        - level_means[a][fa.assignment[i]]
                        - level_means[b][fb.assignment[i]]
                        + grand;
                    d * d
                })
                .sum();
            terms.push((format!("{}:{}", fa.name, fb.name), ss, (la - 1) * (lb - 1)));
        }
    }

    let ss_model: f64 = terms.iter().map(|t| t.1).sum();
    let df_model: usize = terms.iter().map(|t| t.2).sum();
    let ss_res = (ss_total - ss_model).max(0.0);
    let df_res = (n - 1).checked_sub(df_model).ok_or_else(|| {
        AnalysisError::Design("model degrees of freedom exceed observations".to_string())
    })?;
    Ok((terms, ss_res, df_res))
}

/// Balanced factorial ANOVA: F statistic per effect and its percentage share
/// of the F total, sorted descending (ties broken by effect name).
pub fn balanced_anova(
    result: &StudyResult,
    metric: MetricKind,
    filter: Option<&RecordFilter>,
) -> Result<Vec<EffectRow>, AnalysisError> {
    let (terms, ss_res, df_res) = anova_ss(result, metric, filter)?;
    if df_res == 0 {
        return Err(AnalysisError::Degenerate(
            "residual has 0 degrees of freedom; F is undefined, use anova_ss shares instead"
                .to_string(),
        ));
    }
    let ss_total: f64 = terms.iter().map(|t| t.1).sum::<f64>() + ss_res;
    if ss_res <= 1e-12 * ss_total.max(f64::MIN_POSITIVE) {
        return Err(AnalysisError::Degenerate(
            "residual sum of squares is (near) zero; F is undefined, use anova_ss shares instead"
                .to_string(),
        ));
    }
    let mse = ss_res / df_res as f64;
    let mut rows: Vec<EffectRow> = terms
        .into_iter()
        .map(|(effect, ss, df)| EffectRow {
            effect,
            ss,
            df,
            f_stat: (ss / df as f64) / mse,
            f_share_pct: 0.0,
            cum_f_share_pct: 0.0,
        })
        .collect();
    let f_sum: f64 = rows.iter().map(|r| r.f_stat).sum();
    rows.sort_by(|a, b| {
        b.f_stat
            .partial_cmp(&a.f_stat)
            .unwrap()
            .then_with(|| a.effect.cmp(&b.effect))
    });
    let mut cum = 0.0;
    for r in &mut rows {
        r.f_share_pct = 100.0 * r.f_stat / f_sum;
        cum += r.f_share_pct;
        r.cum_f_share_pct = cum;
    }
    Ok(rows)
}

/// First k rows of a sorted effect table.
pub fn top_effects(rows: &[EffectRow], k: usize) -> Result<Vec<EffectRow>, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::BadInput("k must be at least 1".to_string()));
    }
    if k > rows.len() {
        return Err(AnalysisError::BadInput(format!(
            "k = {k} exceeds {} effects",
            rows.len()
        )));
    }
    Ok(rows[..k].to_vec())
}

#[derive(Debug, Clone, Serialize)]
pub struct ContourGrid {
    pub hp_a: String,
    pub hp_b: String,
    pub values_a: Vec<ParamValue>,
    pub values_b: Vec<ParamValue>,
    /// Row-major over (values_a, values_b); empty cells are absent.
    pub cell_means: Vec<Option<f64>>,
    pub cell_counts: Vec<usize>,
}

impl ContourGrid {
    pub fn at(&self, i: usize, j: usize) -> (Option<f64>, usize) {
        let c = i * self.values_b.len() + j;
        (self.cell_means[c], self.cell_counts[c])
    }
}

/// Mean validation metric per (hp_a, hp_b) value pair, averaged over all
/// other hyperparameters.
pub fn contour(
    result: &StudyResult,
    hp_a: &str,
    hp_b: &str,
    metric: MetricKind,
) -> Result<ContourGrid, AnalysisError> {
    let pa = result
        .space
        .param(hp_a)
        .ok_or_else(|| AnalysisError::BadInput(format!("unknown parameter `{hp_a}`")))?;
    let pb = result
        .space
        .param(hp_b)
        .ok_or_else(|| AnalysisError::BadInput(format!("unknown parameter `{hp_b}`")))?;
    let values_a = pa.grid.clone();
    let values_b = pb.grid.clone();
    let cells = values_a.len() * values_b.len();
    let mut sums = vec![0.0; cells];
    let mut counts = vec![0usize; cells];
    for r in result.ok_records() {
        let v = match r.valid_metric(metric) {
            Some(v) => v,
            None => return Err(AnalysisError::MissingMetric(metric.name().to_string())),
        };
        let va = r.config.get(hp_a);
        let vb = r.config.get(hp_b);
        let (va, vb) = match (va, vb) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        let i = values_a.iter().position(|x| values_eq(x, va));
        let j = values_b.iter().position(|x| values_eq(x, vb));
        if let (Some(i), Some(j)) = (i, j) {
            let c = i * values_b.len() + j;
            sums[c] += v;
            counts[c] += 1;
        }
    }
    let cell_means = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { Some(s / c as f64) } else { None })
        .collect();
    Ok(ContourGrid {
        hp_a: hp_a.to_string(),
        hp_b: hp_b.to_string(),
        values_a,
        values_b,
        cell_means,
        cell_counts: counts,
    })
}

/// Spearman rank correlation: Pearson correlation of average ranks.
/// Absent when either vector is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<f64>, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::BadInput(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(AnalysisError::BadInput("need at least 2 observations".to_string()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..rx.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sxy / (sxx * syy).sqrt()))
}

#[derive(Debug, Clone, Serialize)]
pub struct RankCorrMatrix {
    pub names: Vec<String>,
    /// Number of top records actually used.
    pub k: usize,
    /// Symmetric; entry absent when a parameter is constant over the top-k.
    pub rho: Vec<Vec<Option<f64>>>,
}

/// Records sorted best-first by the metric in its native orientation,
/// ties broken by lowest config index.
pub fn rank_records<'a>(result: &'a StudyResult, metric: MetricKind) -> Vec<&'a TrialRecord> {
    let mut records: Vec<&TrialRecord> = result
        .ok_records()
        .filter(|r| r.valid_metric(metric).is_some())
        .collect();
    records.sort_by(|a, b| {
        let va = a.valid_metric(metric).unwrap();
        let vb = b.valid_metric(metric).unwrap();
        if metric.better(va, vb) {
            std::cmp::Ordering::Less
        } else if metric.better(vb, va) {
            std::cmp::Ordering::Greater
        } else {
            a.index.cmp(&b.index)
        }
    });
    records
}

/// Spearman correlation between every pair of hyperparameter values over the
/// k best records.
pub fn top_k_rank_correlations(
    result: &StudyResult,
    metric: MetricKind,
    k: usize,
) -> Result<RankCorrMatrix, AnalysisError> {
    let ranked = rank_records(result, metric);
    if ranked.len() < k {
        return Err(AnalysisError::BadInput(format!(
            "k = {k} exceeds {} usable records",
            ranked.len()
        )));
    }
    if k < 2 {
        return Err(AnalysisError::BadInput(
            "k must be at least 2 for a correlation".to_string(),
        ));
    }
    let top = &ranked[..k];
    let names: Vec<String> = result
        .space
        .params()
        .iter()
        .filter(|p| p.grid.iter().all(|v| v.as_f64().is_some()))
        .map(|p| p.name.clone())
        .collect();
    let columns: Vec<Vec<f64>> = names
        .iter()
        .map(|name| top.iter().map(|r| r.param_f64(name).unwrap_or(f64::NAN)).collect())
        .collect();
    let mut rho = vec![vec![None; names.len()]; names.len()];
    for i in 0..names.len() {
        for j in i..names.len() {
            let r = spearman(&columns[i], &columns[j])?;
            rho[i][j] = r;
            rho[j][i] = r;
        }
    }
    Ok(RankCorrMatrix { names, k, rho })
}

#[derive(Debug, Clone, Serialize)]
pub struct GapRecordRow {
    pub index: u64,
    pub row: GapReportRow,
    pub overfit: bool,
    pub underfit: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub rows: Vec<GapRecordRow>,
    pub best_index: u64,
    pub best_gap: f64,
    pub best_relative_gap_pct: Option<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).saturating_sub(1).min(n - 1);
    sorted[idx]
}

/// Per-record gap rows plus the gap of the globally best model.
///
/// Flags: `overfit` when a record's gap exceeds the `overfit_quantile`
/// quantile of gaps among best-decile-valid records; `underfit` when its
/// valid metric is in the worst decile and its gap is strictly below the
/// overall median gap.
pub fn gap_report(
    result: &StudyResult,
    metric: MetricKind,
    overfit_quantile: f64,
) -> Result<GapReport, AnalysisError> {
    let ranked = rank_records(result, metric);
    if ranked.is_empty() {
        return Err(AnalysisError::BadInput("no usable records".to_string()));
    }
    for r in &ranked {
        if r.train_metric(metric).is_none() {
            return Err(AnalysisError::MissingMetric(format!("train {}", metric.name())));
        }
    }
    let gap_of = |r: &TrialRecord| {
        gap_stats(r.train_metric(metric).unwrap(), r.valid_metric(metric).unwrap())
    };
    let n = ranked.len();
    let decile = n.div_ceil(10);
    let mut best_decile_gaps: Vec<f64> =
        ranked[..decile].iter().map(|r| gap_of(r).gap).collect();
    best_decile_gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let overfit_threshold = quantile(&best_decile_gaps, overfit_quantile);
    let mut all_gaps: Vec<f64> = ranked.iter().map(|r| gap_of(r).gap).collect();
    all_gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_gap = quantile(&all_gaps, 0.5);
    let worst_decile_start = n - decile;

    let mut rows: Vec<GapRecordRow> = ranked
        .iter()
        .enumerate()
        .map(|(rank, r)| {
            let row = gap_of(r);
            GapRecordRow {
                index: r.index,
                overfit: row.gap > overfit_threshold,
                underfit: rank >= worst_decile_start && row.gap < median_gap,
                row,
            }
        })
        .collect();
    let best = gap_of(ranked[0]);
    let best_index = ranked[0].index;
    rows.sort_by_key(|r| r.index);
    Ok(GapReport {
        rows,
        best_index,
        best_gap: best.gap,
        best_relative_gap_pct: best.relative_gap_pct,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlapRow {
    pub k_requested: usize,
    pub k_used: usize,
    /// |top-k by AUC ∩ top-k by Logloss| / k_used.
    pub overlap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Concordance {
    /// (config index, auc, logloss) per usable record.
    pub pairs: Vec<(u64, f64, f64)>,
    /// Spearman between the AUC ordering and the (negated) Logloss ordering;
    /// 1.0 means the metrics rank models identically.
    pub rank_corr: Option<f64>,
    pub overlaps: Vec<OverlapRow>,
    pub warnings: Vec<String>,
}

/// How far AUC and Logloss agree about which models are good.
pub fn concordance(result: &StudyResult, ks: &[usize]) -> Result<Concordance, AnalysisError> {
    let records: Vec<&TrialRecord> = result
        .ok_records()
        .filter(|r| {
            r.valid_metric(MetricKind::Auc).is_some()
                && r.valid_metric(MetricKind::Logloss).is_some()
        })
        .collect();
    if records.is_empty() {
        return Err(AnalysisError::MissingMetric("auc and logloss".to_string()));
    }
    let pairs: Vec<(u64, f64, f64)> = records
        .iter()
        .map(|r| {
            (
                r.index,
                r.valid_metric(MetricKind::Auc).unwrap(),
                r.valid_metric(MetricKind::Logloss).unwrap(),
            )
        })
        .collect();
    let aucs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let neg_logloss: Vec<f64> = pairs.iter().map(|p| -p.2).collect();
    let rank_corr = spearman(&aucs, &neg_logloss)?;

    let by_auc = rank_records(result, MetricKind::Auc);
    let by_logloss = rank_records(result, MetricKind::Logloss);
    let mut warnings = Vec::new();
    let mut overlaps = Vec::new();
    for &k in ks {
        let k_used = k.min(records.len());
        if k_used < k {
            warnings.push(format!(
                "k = {k} capped to {k_used} (only {} records)",
                records.len()
            ));
        }
        if k_used == 0 {
            continue;
        }
        let set_a: std::collections::HashSet<u64> =
            by_auc[..k_used].iter().map(|r| r.index).collect();
        let inter = by_logloss[..k_used]
            .iter()
            .filter(|r| set_a.contains(&r.index))
            .count();
        overlaps.push(OverlapRow {
            k_requested: k,
            k_used,
            overlap: inter as f64 / k_used as f64,
        });
    }
    Ok(Concordance {
        pairs,
        rank_corr,
        overlaps,
        warnings,
    })
}
