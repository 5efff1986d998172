//! Two-stage reduced-search strategies for random forests, boosted trees,
//! and fully connected networks, plus the strategy-versus-full-grid scoring.
//!
//! Each stage is an ordinary study over a stage-specific space: free
//! parameters carry their grids, pinned parameters appear as single-value
//! grids. Stage 2 pins carry forward the stage-1 optimum, so the same
//! evaluator (native, external, or replay of a completed grid) serves every
//! stage.

use crate::metrics::{relative_decrease, MetricError, MetricKind};
use crate::space::{geometric_grid, HyperParam, ParamValue, SearchSpace, SpaceError};
use crate::study::{
    best, run_study, Evaluator, Selection, StudyError, StudyOptions, StudyResult, TrialRecord,
};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("bad input: {0}")]
    BadInput(String),
}

/// How stage 1 explores its grid.
#[derive(Debug, Clone, Serialize)]
pub enum StageMethod {
    FullGrid,
    Random { n: u64, seed: u64 },
}

impl StageMethod {
    fn selection(&self) -> Selection {
        match self {
            StageMethod::FullGrid => Selection::All,
            StageMethod::Random { n, seed } => Selection::Sample { n: *n, seed: *seed },
        }
    }
}

/// How the boosted-tree strategies obtain their round count.
#[derive(Debug, Clone)]
pub enum TreesPolicy {
    /// The evaluator early-stops internally; `trees` never enters the space.
    EarlyStopping,
    /// `trees` is searched over this grid in stage 1 and pinned in stage 2
    /// (needed when replaying a grid that has no early stopping).
    Grid(Vec<ParamValue>),
}

#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub r_opt: TrialRecord,
    pub stage_results: Vec<StudyResult>,
    pub trials_spent: usize,
}

fn run_stage(
    evaluator: &dyn Evaluator,
    params: Vec<HyperParam>,
    selection: Selection,
    seed: u64,
) -> Result<StudyResult, StrategyError> {
    let space = SearchSpace::new(params)?;
    let opts = StudyOptions {
        selection,
        parallelism: 1,
        seed,
        dataset_id: "stage".to_string(),
    };
    Ok(run_study(&space, evaluator, &opts, Vec::new(), None)?)
}

fn pinned(name: &str, record: &TrialRecord) -> Result<HyperParam, StrategyError> {
    let v = record
        .config
        .get(name)
        .ok_or_else(|| StrategyError::BadInput(format!("stage-1 optimum lacks `{name}`")))?;
    Ok(HyperParam::new(
        name,
        match v {
            ParamValue::Int(_) => crate::space::ParamKind::Integer,
            ParamValue::Real(_) => crate::space::ParamKind::Real,
            ParamValue::Nominal(_) => crate::space::ParamKind::Nominal,
        },
        vec![v.clone()],
    )?)
}

fn pick_better<'a>(
    a: &'a TrialRecord,
    b: &'a TrialRecord,
    metric: MetricKind,
) -> &'a TrialRecord {
    match (a.valid_metric(metric), b.valid_metric(metric)) {
        (Some(va), Some(vb)) => {
            if metric.better(vb, va) {
                b
            } else {
                a
            }
        }
        (Some(_), None) => a,
        _ => b,
    }
}

/// Random forest two-stage search.
///
/// Stage 1 pins `max_p` = round(sqrt(p)) and `trees` = 300, searching
/// `depth` over 10..=20 and `msl` over a 10-point geometric grid in
/// [1, sqrt(n)]. Stage 2 pins the stage-1 optimum and searches `max_p`
/// over multiples of floor(sqrt(p)) capped at p.
pub fn rf_two_stage(
    evaluator: &dyn Evaluator,
    n_train: usize,
    p: usize,
    metric: MetricKind,
    stage1_method: &StageMethod,
    seed: u64,
) -> Result<StrategyOutcome, StrategyError> {
    if p < 1 {
        return Err(StrategyError::BadInput("feature count must be positive".to_string()));
    }
    let sqrt_p = (p as f64).sqrt();
    let stage1 = run_stage(
        evaluator,
        vec![
            HyperParam::integer("depth", &(10..=20).collect::<Vec<_>>())?,
            HyperParam::new(
                "msl",
                crate::space::ParamKind::Integer,
                geometric_grid(1.0, (n_train as f64).sqrt(), 10, true)?,
            )?,
            HyperParam::integer("max_p", &[sqrt_p.round() as i64])?,
            HyperParam::integer("trees", &[300])?,
        ],
        stage1_method.selection(),
        seed,
    )?;
    let r1 = best(&stage1, metric)?.clone();

    let step = (sqrt_p.floor() as i64).max(1);
    let mut max_p_grid: Vec<i64> = (1..).map(|m| m * step).take_while(|&v| v <= p as i64).collect();
    if max_p_grid.is_empty() {
        max_p_grid.push(p as i64);
    }
    let stage2 = run_stage(
        evaluator,
        vec![
            pinned("depth", &r1)?,
            pinned("msl", &r1)?,
            HyperParam::integer("max_p", &max_p_grid)?,
            HyperParam::integer("trees", &[300])?,
        ],
        Selection::All,
        seed.wrapping_add(1),
    )?;
    let r2 = best(&stage2, metric).map(|r| r.clone());
    let r_opt = match &r2 {
        Ok(r2) => pick_better(r2, &r1, metric).clone(),
        Err(_) => r1.clone(),
    };
    let trials_spent = stage1.records.len() + stage2.records.len();
    Ok(StrategyOutcome {
        r_opt,
        stage_results: vec![stage1, stage2],
        trials_spent,
    })
}

/// Boosted-tree two-stage search.
///
/// Stage 1: `depth` in {3..7}, `lr_rate` on an 8-point log grid in
/// [0.02, 0.1], `l1` = 0, `l2` = 0.1, rounds by the trees policy. Stage 2
/// pins the stage-1 optimum and searches `l1` and `l2` over a geometric grid
/// in [0.001, 15] plus an explicit 0 candidate. With `freeze_trees` the
/// stage-1 realized round count is pinned as `trees` in stage 2.
pub fn xgb_two_stage(
    evaluator: &dyn Evaluator,
    metric: MetricKind,
    trees_policy: &TreesPolicy,
    freeze_trees: bool,
    stage1_method: &StageMethod,
    seed: u64,
) -> Result<StrategyOutcome, StrategyError> {
    let mut stage1_params = vec![
        HyperParam::integer("depth", &[3, 4, 5, 6, 7])?,
        HyperParam::new(
            "lr_rate",
            crate::space::ParamKind::Real,
            geometric_grid(0.02, 0.1, 8, false)?,
        )?,
        HyperParam::real("l1", &[0.0])?,
        HyperParam::real("l2", &[0.1])?,
    ];
    if let TreesPolicy::Grid(grid) = trees_policy {
        stage1_params.push(HyperParam::new(
            "trees",
            crate::space::ParamKind::Integer,
            grid.clone(),
        )?);
    }
    let stage1 = run_stage(evaluator, stage1_params, stage1_method.selection(), seed)?;
    let r1 = best(&stage1, metric)?.clone();

    let mut penalty_grid = vec![ParamValue::Real(0.0)];
    penalty_grid.extend(geometric_grid(0.001, 15.0, 7, false)?);
    let mut stage2_params = vec![
        pinned("depth", &r1)?,
        pinned("lr_rate", &r1)?,
        HyperParam::new("l1", crate::space::ParamKind::Real, penalty_grid.clone())?,
        HyperParam::new("l2", crate::space::ParamKind::Real, penalty_grid)?,
    ];
    match trees_policy {
        TreesPolicy::Grid(_) => stage2_params.push(pinned("trees", &r1)?),
        TreesPolicy::EarlyStopping => {
            if freeze_trees {
                let rounds = r1.rounds.ok_or_else(|| {
                    StrategyError::BadInput(
                        "freeze_trees requires the stage-1 optimum to report rounds".to_string(),
                    )
                })?;
                stage2_params.push(HyperParam::integer("trees", &[rounds as i64])?);
            }
        }
    }
    let stage2 = run_stage(evaluator, stage2_params, Selection::All, seed.wrapping_add(1))?;
    let r2 = best(&stage2, metric).map(|r| r.clone());
    let r_opt = match &r2 {
        Ok(r2) => pick_better(r2, &r1, metric).clone(),
        Err(_) => r1.clone(),
    };
    let trials_spent = stage1.records.len() + stage2.records.len();
    Ok(StrategyOutcome {
        r_opt,
        stage_results: vec![stage1, stage2],
        trials_spent,
    })
}

/// Fully-connected-network two-stage search.
///
/// Stage 1 fixes `l1` = `l2` = 0 and searches layer widths, learning rate
/// (capped below 0.01), dropout, and batch size in {5, 10, 15, 20}% of n,
/// by default as a 200-trial random sample. Stage 2 pins the stage-1 optimum
/// and grids `l1` and `l2` over small penalty candidates.
pub fn ffnn_two_stage(
    evaluator: &dyn Evaluator,
    n_train: usize,
    metric: MetricKind,
    stage1_method: &StageMethod,
    seed: u64,
) -> Result<StrategyOutcome, StrategyError> {
    let batch_sizes: Vec<i64> = [0.05, 0.10, 0.15, 0.20]
        .iter()
        .map(|pct| ((pct * n_train as f64).round() as i64).max(1))
        .collect();
    let stage1 = run_stage(
        evaluator,
        vec![
            HyperParam::integer("layer1", &[16, 32, 64, 128])?,
            HyperParam::integer("layer2", &[0, 16, 32, 64])?,
            HyperParam::new(
                "lr_rate",
                crate::space::ParamKind::Real,
                geometric_grid(1e-4, 9e-3, 8, false)?,
            )?,
            HyperParam::real("dropout", &[0.0, 0.1, 0.2, 0.4])?,
            HyperParam::integer("batch_size", &batch_sizes)?,
            HyperParam::real("l1", &[0.0])?,
            HyperParam::real("l2", &[0.0])?,
        ],
        stage1_method.selection(),
        seed,
    )?;
    let r1 = best(&stage1, metric)?.clone();

    let stage2 = run_stage(
        evaluator,
        vec![
            pinned("layer1", &r1)?,
            pinned("layer2", &r1)?,
            pinned("lr_rate", &r1)?,
            pinned("dropout", &r1)?,
            pinned("batch_size", &r1)?,
            HyperParam::real("l1", &[0.0, 5e-4, 1e-3, 5e-3])?,
            HyperParam::real("l2", &[0.0, 5e-3, 1e-2])?,
        ],
        Selection::All,
        seed.wrapping_add(1),
    )?;
    let r2 = best(&stage2, metric).map(|r| r.clone());
    let r_opt = match &r2 {
        Ok(r2) => pick_better(r2, &r1, metric).clone(),
        Err(_) => r1.clone(),
    };
    let trials_spent = stage1.records.len() + stage2.records.len();
    Ok(StrategyOutcome {
        r_opt,
        stage_results: vec![stage1, stage2],
        trials_spent,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyScore {
    /// Full-grid records strictly better than the strategy optimum.
    pub better_count: usize,
    pub total: usize,
    pub pct_better: f64,
    /// 100·|g_opt − r_opt|/|g_opt| against the full-grid best metric.
    pub rel_decrease_pct: f64,
}

/// Score a strategy outcome against an exhaustive grid study.
pub fn evaluate_strategy(
    full_grid: &StudyResult,
    outcome: &StrategyOutcome,
    metric: MetricKind,
) -> Result<StrategyScore, StrategyError> {
    let r_val = outcome
        .r_opt
        .valid_metric(metric)
        .ok_or_else(|| StrategyError::BadInput(format!("r_opt lacks metric {}", metric.name())))?;
    let values: Vec<f64> = full_grid
        .ok_records()
        .filter_map(|r| r.valid_metric(metric))
        .collect();
    if values.is_empty() {
        return Err(StrategyError::BadInput("empty full grid".to_string()));
    }
    let better_count = values.iter().filter(|&&v| metric.better(v, r_val)).count();
    let g_val = best(full_grid, metric)?.valid_metric(metric).unwrap();
    Ok(StrategyScore {
        better_count,
        total: values.len(),
        pct_better: 100.0 * better_count as f64 / values.len() as f64,
        rel_decrease_pct: relative_decrease(g_val, r_val)?,
    })
}
