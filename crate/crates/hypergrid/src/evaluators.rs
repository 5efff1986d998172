//! Concrete evaluators: native learners, closed-form synthetic surfaces,
//! and replay of previously recorded studies.
//!
//! Native evaluators read hyperparameters from the trial configuration first
//! and fall back to a `fixed` map for values held constant across the study.

use crate::data::{Dataset, Task};
use crate::learners::{
    fit_forest, fit_gbt, fit_mlp, ForestParams, GbtParams, MlpParams, TreeParams,
};
use crate::metrics::{compute_metric, MetricKind};
use crate::space::{Configuration, ParamValue, SearchSpace};
use crate::study::{Evaluator, StudyError, TrialMetrics, TrialRecord};
use std::collections::{BTreeMap, HashMap};

fn task_metrics(task: Task, y_true: &[f64], y_pred: &[f64]) -> Result<BTreeMap<String, f64>, String> {
    let kinds: &[MetricKind] = match task {
        Task::Continuous => &[MetricKind::Mse, MetricKind::R2],
        Task::Binary => &[MetricKind::Auc, MetricKind::Logloss],
    };
    let mut out = BTreeMap::new();
    for &k in kinds {
        let v = compute_metric(k, y_true, y_pred).map_err(|e| e.to_string())?;
        out.insert(k.name().to_string(), v);
    }
    Ok(out)
}

fn model_metrics(
    train: &Dataset,
    valid: &Dataset,
    predict: impl Fn(&Dataset) -> Vec<f64>,
) -> Result<(BTreeMap<String, f64>, BTreeMap<String, f64>), String> {
    let tm = task_metrics(train.task, &train.target, &predict(train))?;
    let vm = task_metrics(valid.task, &valid.target, &predict(valid))?;
    Ok((tm, vm))
}

struct ParamView<'a> {
    config: &'a Configuration,
    fixed: &'a BTreeMap<String, f64>,
}

impl ParamView<'_> {
    fn get(&self, name: &str) -> Option<f64> {
        self.config.get_f64(name).or_else(|| self.fixed.get(name).copied())
    }

    fn req(&self, name: &str) -> Result<f64, String> {
        self.get(name).ok_or_else(|| format!("missing parameter `{name}`"))
    }

    fn get_or(&self, name: &str, default: f64) -> f64 {
        self.get(name).unwrap_or(default)
    }

    fn req_usize(&self, name: &str) -> Result<usize, String> {
        let v = self.req(name)?;
        if v < 0.5 || v.fract() != 0.0 {
            return Err(format!("parameter `{name}` must be a positive integer, got {v}"));
        }
        Ok(v as usize)
    }
}

fn check_names(space: &SearchSpace, accepted: &[&str], who: &str) -> Result<(), StudyError> {
    for p in space.params() {
        if !accepted.contains(&p.name.as_str()) {
            return Err(StudyError::Schema(format!(
                "{who} does not accept parameter `{}`",
                p.name
            )));
        }
    }
    Ok(())
}

/// Random forest over the native tree learner.
///
/// Parameters: `trees`, `depth`, `msl`, `max_p`, optional `row_sample_ratio`.
pub struct NativeRf {
    pub train: Dataset,
    pub valid: Dataset,
    pub fixed: BTreeMap<String, f64>,
}

impl NativeRf {
    pub fn new(train: Dataset, valid: Dataset) -> Self {
        Self {
            train,
            valid,
            fixed: BTreeMap::new(),
        }
    }
}

impl Evaluator for NativeRf {
    fn check_space(&self, space: &SearchSpace) -> Result<(), StudyError> {
        check_names(
            space,
            &["trees", "depth", "msl", "max_p", "row_sample_ratio"],
            "random forest",
        )
    }

    fn evaluate(&self, config: &Configuration, seed: u64) -> Result<TrialMetrics, String> {
        let p = ParamView {
            config,
            fixed: &self.fixed,
        };
        let tree = TreeParams {
            depth: p.req_usize("depth")?,
            msl: p.req_usize("msl")?,
            max_p: p.req_usize("max_p")?,
        };
        let mut fp = ForestParams::new(tree, p.req_usize("trees")?, seed);
        fp.row_sample_ratio = p.get_or("row_sample_ratio", 1.0);
        let model = fit_forest(&self.train, &fp).map_err(|e| e.to_string())?;
        let (train, valid) = model_metrics(&self.train, &self.valid, |d| {
            (0..d.n_rows).map(|i| model.predict_row(d.row(i))).collect()
        })?;
        Ok(TrialMetrics {
            train,
            valid,
            rounds: None,
        })
    }

    fn id(&self) -> String {
        "native:rf".to_string()
    }
}

/// Gradient boosted trees over the native second-order booster.
///
/// Parameters: `depth`, `trees`, `lr_rate`, `l1`, `l2`, `min_child_weight`,
/// `colsample_bytree`. With `early_stopping_rounds` set, `trees` defaults to
/// `trees_cap` and acts as the round budget.
pub struct NativeGbt {
    pub train: Dataset,
    pub valid: Dataset,
    pub fixed: BTreeMap<String, f64>,
    pub early_stopping_rounds: Option<usize>,
    pub trees_cap: usize,
}

impl NativeGbt {
    pub fn new(train: Dataset, valid: Dataset) -> Self {
        Self {
            train,
            valid,
            fixed: BTreeMap::new(),
            early_stopping_rounds: Some(20),
            trees_cap: 500,
        }
    }
}

impl Evaluator for NativeGbt {
    fn check_space(&self, space: &SearchSpace) -> Result<(), StudyError> {
        check_names(
            space,
            &[
                "depth",
                "trees",
                "lr_rate",
                "l1",
                "l2",
                "min_child_weight",
                "colsample_bytree",
            ],
            "boosted trees",
        )
    }

    fn evaluate(&self, config: &Configuration, seed: u64) -> Result<TrialMetrics, String> {
        let p = ParamView {
            config,
            fixed: &self.fixed,
        };
        let trees = match p.get("trees") {
            Some(v) if v >= 1.0 && v.fract() == 0.0 => v as usize,
            Some(v) => return Err(format!("parameter `trees` must be a positive integer, got {v}")),
            None if self.early_stopping_rounds.is_some() => self.trees_cap,
            None => return Err("missing parameter `trees`".to_string()),
        };
        let params = GbtParams {
            depth: p.req_usize("depth")?,
            trees,
            lr_rate: p.req("lr_rate")?,
            alpha: p.get_or("l1", 0.0),
            lambda: p.get_or("l2", 0.0),
            min_child_weight: p.get_or("min_child_weight", 0.0),
            colsample_bytree: p.get_or("colsample_bytree", 1.0),
            early_stopping_rounds: self.early_stopping_rounds,
            seed,
        };
        let model = fit_gbt(&self.train, Some(&self.valid), &params).map_err(|e| e.to_string())?;
        let (train, valid) = model_metrics(&self.train, &self.valid, |d| {
            (0..d.n_rows).map(|i| model.predict_row(d.row(i))).collect()
        })?;
        Ok(TrialMetrics {
            train,
            valid,
            rounds: Some(model.trees.len() as u64),
        })
    }

    fn id(&self) -> String {
        "native:gbt".to_string()
    }
}

/// Fully connected network over the native trainer.
///
/// Parameters: `layer1`, `layer2` (0 means absent), `lr_rate`, `batch_size`,
/// `l1`, `l2`, `dropout`.
pub struct NativeMlp {
    pub train: Dataset,
    pub valid: Dataset,
    pub fixed: BTreeMap<String, f64>,
    pub max_epochs: usize,
    pub patience: usize,
}

impl NativeMlp {
    pub fn new(train: Dataset, valid: Dataset) -> Self {
        Self {
            train,
            valid,
            fixed: BTreeMap::new(),
            max_epochs: 1000,
            patience: 20,
        }
    }
}

impl Evaluator for NativeMlp {
    fn check_space(&self, space: &SearchSpace) -> Result<(), StudyError> {
        check_names(
            space,
            &["layer1", "layer2", "lr_rate", "batch_size", "l1", "l2", "dropout"],
            "neural network",
        )
    }

    fn evaluate(&self, config: &Configuration, seed: u64) -> Result<TrialMetrics, String> {
        let p = ParamView {
            config,
            fixed: &self.fixed,
        };
        let layer2 = p.get_or("layer2", 0.0);
        if layer2 < 0.0 || layer2.fract() != 0.0 {
            return Err(format!("parameter `layer2` must be a nonnegative integer, got {layer2}"));
        }
        let mut params = MlpParams::new(
            p.req_usize("layer1")?,
            layer2 as usize,
            p.req("lr_rate")?,
            p.req_usize("batch_size")?,
            seed,
        );
        params.l1 = p.get_or("l1", 0.0);
        params.l2 = p.get_or("l2", 0.0);
        params.dropout = p.get_or("dropout", 0.0);
        params.max_epochs = self.max_epochs;
        params.patience = self.patience;
        let model = fit_mlp(&self.train, &self.valid, &params).map_err(|e| e.to_string())?;
        let (train, valid) = model_metrics(&self.train, &self.valid, |d| {
            (0..d.n_rows).map(|i| model.predict_row(d.row(i))).collect()
        })?;
        Ok(TrialMetrics {
            train,
            valid,
            rounds: Some(model.epochs_used as u64),
        })
    }

    fn id(&self) -> String {
        "native:mlp".to_string()
    }
}

type SurfaceFn = dyn Fn(&Configuration) -> f64 + Sync + Send;

/// Closed-form response surface; instant and exactly reproducible. Useful
/// for testing search strategies against a known optimum.
pub struct SyntheticSurface {
    metric: MetricKind,
    valid_fn: Box<SurfaceFn>,
    train_fn: Option<Box<SurfaceFn>>,
}

impl SyntheticSurface {
    pub fn new(
        metric: MetricKind,
        valid_fn: impl Fn(&Configuration) -> f64 + Sync + Send + 'static,
    ) -> Self {
        Self {
            metric,
            valid_fn: Box::new(valid_fn),
            train_fn: None,
        }
    }

    pub fn with_train_fn(
        mut self,
        train_fn: impl Fn(&Configuration) -> f64 + Sync + Send + 'static,
    ) -> Self {
        self.train_fn = Some(Box::new(train_fn));
        self
    }
}

impl Evaluator for SyntheticSurface {
    fn check_space(&self, _space: &SearchSpace) -> Result<(), StudyError> {
        Ok(())
    }

    fn evaluate(&self, config: &Configuration, _seed: u64) -> Result<TrialMetrics, String> {
        let v = (self.valid_fn)(config);
        let t = self.train_fn.as_ref().map_or(v, |f| f(config));
        let name = self.metric.name().to_string();
        Ok(TrialMetrics {
            train: [(name.clone(), t)].into_iter().collect(),
            valid: [(name, v)].into_iter().collect(),
            rounds: None,
        })
    }

    fn id(&self) -> String {
        format!("synthetic:{}", self.metric.name())
    }
}

/// Replays recorded trials instead of refitting. Requested values snap to
/// the nearest recorded grid value per parameter, so a coarser follow-up
/// search can reuse an exhaustive study's results.
pub struct ReplayEvaluator {
    space: SearchSpace,
    by_key: HashMap<String, TrialRecord>,
}

impl ReplayEvaluator {
    pub fn from_records(space: SearchSpace, records: &[TrialRecord]) -> Self {
        let mut by_key = HashMap::new();
        for r in records {
            if r.is_ok() {
                by_key.insert(Self::key_of(&r.config), r.clone());
            }
        }
        Self { space, by_key }
    }

    fn key_of(assignment: &BTreeMap<String, ParamValue>) -> String {
        assignment
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    /// Nearest recorded grid value by absolute distance; nominal values must
    /// match exactly.
    fn snap(&self, name: &str, value: &ParamValue) -> Result<ParamValue, String> {
        let param = self
            .space
            .param(name)
            .ok_or_else(|| format!("replay source has no parameter `{name}`"))?;
        if let Some(x) = value.as_f64() {
            param
                .grid
                .iter()
                .filter_map(|g| g.as_f64().map(|gx| (g, (gx - x).abs())))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .map(|(g, _)| g.clone())
                .ok_or_else(|| format!("parameter `{name}` has no numeric grid to snap to"))
        } else {
            param
                .grid
                .iter()
                .find(|g| crate::space::values_eq(g, value))
                .cloned()
                .ok_or_else(|| format!("value {value} not recorded for `{name}`"))
        }
    }
}

impl Evaluator for ReplayEvaluator {
    fn check_space(&self, space: &SearchSpace) -> Result<(), StudyError> {
        for p in space.params() {
            if self.space.param(&p.name).is_none() {
                return Err(StudyError::Schema(format!(
                    "replay source has no parameter `{}`",
                    p.name
                )));
            }
        }
        Ok(())
    }

    fn evaluate(&self, config: &Configuration, _seed: u64) -> Result<TrialMetrics, String> {
        let mut snapped = BTreeMap::new();
        for (name, value) in &config.assignment {
            snapped.insert(name.clone(), self.snap(name, value)?);
        }
        // parameters recorded but not searched stay at their recorded value
        // only if every record shares it; otherwise the lookup misses.
        let record = self
            .by_key
            .get(&Self::key_of(&snapped))
            .ok_or_else(|| format!("no recorded trial for {}", Self::key_of(&snapped)))?;
        Ok(TrialMetrics {
            train: record.train.clone(),
            valid: record.valid.clone(),
            rounds: record.rounds,
        })
    }

    fn id(&self) -> String {
        "replay".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_sim, SimSpec};
    use crate::space::HyperParam;
    use crate::study::{run_study, StudyOptions};

    fn sim_small() -> (Dataset, Dataset) {
        gen_sim(&SimSpec::new(200, 0.5, 11)).unwrap()
    }

    #[test]
    fn rf_study_is_deterministic_and_sane() {
        let (train, valid) = sim_small();
        let space = SearchSpace::new(vec![
            HyperParam::integer("depth", &[2, 4]).unwrap(),
            HyperParam::integer("msl", &[1, 5]).unwrap(),
        ])
        .unwrap();
        let mut ev = NativeRf::new(train, valid);
        ev.fixed.insert("trees".to_string(), 10.0);
        ev.fixed.insert("max_p".to_string(), 4.0);
        let a = run_study(&space, &ev, &StudyOptions::new(5), Vec::new(), None).unwrap();
        let b = run_study(&space, &ev, &StudyOptions::new(5), Vec::new(), None).unwrap();
        let strip_time = |records: &[crate::study::TrialRecord]| {
            records
                .iter()
                .cloned()
                .map(|mut r| {
                    r.wall_time_s = 0.0;
                    r
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip_time(&a.records), strip_time(&b.records));
        for r in &a.records {
            assert!(r.is_ok());
            assert!(r.valid["mse"].is_finite());
            assert!(r.train["r2"] <= 1.0);
        }
    }

    #[test]
    fn rf_rejects_unknown_parameter() {
        let (train, valid) = sim_small();
        let space =
            SearchSpace::new(vec![HyperParam::integer("bogus", &[1, 2]).unwrap()]).unwrap();
        let ev = NativeRf::new(train, valid);
        assert!(matches!(ev.check_space(&space), Err(StudyError::Schema(_))));
    }

    #[test]
    fn gbt_early_stopping_reports_rounds() {
        let (train, valid) = sim_small();
        let space = SearchSpace::new(vec![
            HyperParam::real("lr_rate", &[0.1, 0.3]).unwrap(),
        ])
        .unwrap();
        let mut ev = NativeGbt::new(train, valid);
        ev.fixed.insert("depth".to_string(), 3.0);
        ev.trees_cap = 60;
        let result = run_study(&space, &ev, &StudyOptions::new(2), Vec::new(), None).unwrap();
        for r in &result.records {
            assert!(r.is_ok(), "failed: {:?}", r.status);
            let rounds = r.rounds.unwrap();
            assert!(rounds >= 1 && rounds <= 60);
        }
    }

    #[test]
    fn mlp_evaluator_runs() {
        let (train, valid) = sim_small();
        let space = SearchSpace::new(vec![
            HyperParam::integer("layer1", &[4]).unwrap(),
        ])
        .unwrap();
        let mut ev = NativeMlp::new(train, valid);
        ev.fixed.insert("lr_rate".to_string(), 0.01);
        ev.fixed.insert("batch_size".to_string(), 32.0);
        ev.max_epochs = 30;
        let result = run_study(&space, &ev, &StudyOptions::new(4), Vec::new(), None).unwrap();
        assert!(result.records[0].is_ok(), "failed: {:?}", result.records[0].status);
        assert!(result.records[0].valid["mse"].is_finite());
    }

    #[test]
    fn replay_snaps_to_nearest_grid_value() {
        let space = SearchSpace::new(vec![
            HyperParam::real("lr_rate", &[0.01, 0.1, 1.0]).unwrap(),
        ])
        .unwrap();
        let surface = SyntheticSurface::new(MetricKind::Mse, |c| c.get_f64("lr_rate").unwrap());
        let full = run_study(&space, &surface, &StudyOptions::new(0), Vec::new(), None).unwrap();
        let replay = ReplayEvaluator::from_records(space, &full.records);

        let coarse = SearchSpace::new(vec![
            HyperParam::real("lr_rate", &[0.012, 0.9]).unwrap(),
        ])
        .unwrap();
        let result = run_study(&coarse, &replay, &StudyOptions::new(0), Vec::new(), None).unwrap();
        assert_eq!(result.records[0].valid["mse"], 0.01);
        assert_eq!(result.records[1].valid["mse"], 1.0);
    }

    #[test]
    fn replay_misses_become_failed_records() {
        let space = SearchSpace::new(vec![
            HyperParam::integer("depth", &[1, 2]).unwrap(),
        ])
        .unwrap();
        let replay = ReplayEvaluator::from_records(space.clone(), &[]);
        let result = run_study(&space, &replay, &StudyOptions::new(0), Vec::new(), None).unwrap();
        assert_eq!(result.failed_count(), 2);
    }
}
