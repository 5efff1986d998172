//! Declarative study configuration: dataset, evaluator, search space, run
//! options, and analysis requests, serialized as a single JSON document.

use crate::data::{gen_sim, load_bikeshare, Dataset, SimSpec};
use crate::evaluators::{NativeGbt, NativeMlp, NativeRf};
use crate::space::{geometric_grid, linear_grid, HyperParam, ParamKind, ParamValue, SearchSpace};
use crate::study::{Evaluator, ExternalEvaluator, Selection, TrialRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Space(#[from] crate::space::SpaceError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Sim {
        n: usize,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_noise")]
        noise_sd: f64,
        seed: u64,
    },
    Bikeshare {
        path: PathBuf,
        seed: u64,
    },
    /// No dataset: synthetic or external evaluators that need none.
    None,
}

fn default_rho() -> f64 {
    0.5
}

fn default_noise() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum EvaluatorConfig {
    Rf {
        #[serde(default)]
        fixed: BTreeMap<String, f64>,
    },
    Gbt {
        #[serde(default)]
        fixed: BTreeMap<String, f64>,
        #[serde(default = "default_es_rounds")]
        early_stopping_rounds: Option<usize>,
        #[serde(default = "default_trees_cap")]
        trees_cap: usize,
    },
    Mlp {
        #[serde(default)]
        fixed: BTreeMap<String, f64>,
        #[serde(default = "default_max_epochs")]
        max_epochs: usize,
        #[serde(default = "default_patience")]
        patience: usize,
    },
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout_s")]
        timeout_s: f64,
    },
}

fn default_es_rounds() -> Option<usize> {
    Some(20)
}

fn default_trees_cap() -> usize {
    500
}

fn default_max_epochs() -> usize {
    1000
}

fn default_patience() -> usize {
    20
}

fn default_timeout_s() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridConfig {
    Explicit(Vec<ParamValue>),
    Linear {
        lo: f64,
        hi: f64,
        m: usize,
    },
    Geometric {
        lo: f64,
        hi: f64,
        m: usize,
        #[serde(default)]
        integerize: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamConfig {
    pub name: String,
    pub kind: ParamKind,
    pub grid: GridConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_selection")]
    pub selection: Selection,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub seed: u64,
}

fn default_selection() -> Selection {
    Selection::All
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub reports: Vec<String>,
    pub metric: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub filter: Option<String>,
    /// Hyperparameter pairs for contour reports.
    #[serde(default)]
    pub contours: Vec<(String, String)>,
}

fn default_k() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub dataset: DatasetConfig,
    pub evaluator: EvaluatorConfig,
    pub space: Vec<ParamConfig>,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisConfig>,
    pub output: OutputConfig,
}

impl StudyConfig {
    pub fn from_str(text: &str) -> Result<StudyConfig, ConfigError> {
        serde_json::from_str(text).map_err(|e| {
            ConfigError::Parse(format!("line {}, column {}: {}", e.line(), e.column(), e))
        })
    }

    pub fn load(path: &Path) -> Result<StudyConfig, ConfigError> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn build_space(&self) -> Result<SearchSpace, ConfigError> {
        let mut params = Vec::new();
        for p in &self.space {
            let grid = match &p.grid {
                GridConfig::Explicit(values) => values.clone(),
                GridConfig::Linear { lo, hi, m } => linear_grid(*lo, *hi, *m)?,
                GridConfig::Geometric { lo, hi, m, integerize } => {
                    geometric_grid(*lo, *hi, *m, *integerize)?
                }
            };
            params.push(HyperParam::new(p.name.clone(), p.kind, grid)?);
        }
        Ok(SearchSpace::new(params)?)
    }

    pub fn build_dataset(&self) -> Result<Option<(Dataset, Dataset)>, ConfigError> {
        match &self.dataset {
            DatasetConfig::Sim { n, rho, noise_sd, seed } => {
                let mut spec = SimSpec::new(*n, *rho, *seed);
                spec.noise_sd = *noise_sd;
                Ok(Some(gen_sim(&spec)?))
            }
            DatasetConfig::Bikeshare { path, seed } => Ok(Some(load_bikeshare(path, *seed)?)),
            DatasetConfig::None => Ok(None),
        }
    }

    pub fn build_evaluator(
        &self,
        data: Option<(Dataset, Dataset)>,
    ) -> Result<Box<dyn Evaluator>, ConfigError> {
        let need_data = || {
            data.clone().ok_or_else(|| {
                ConfigError::Invalid("this evaluator family requires a dataset".to_string())
            })
        };
        match &self.evaluator {
            EvaluatorConfig::Rf { fixed } => {
                let (train, valid) = need_data()?;
                let mut ev = NativeRf::new(train, valid);
                ev.fixed = fixed.clone();
                Ok(Box::new(ev))
            }
            EvaluatorConfig::Gbt {
                fixed,
                early_stopping_rounds,
                trees_cap,
            } => {
                let (train, valid) = need_data()?;
                let mut ev = NativeGbt::new(train, valid);
                ev.fixed = fixed.clone();
                ev.early_stopping_rounds = *early_stopping_rounds;
                ev.trees_cap = *trees_cap;
                Ok(Box::new(ev))
            }
            EvaluatorConfig::Mlp {
                fixed,
                max_epochs,
                patience,
            } => {
                let (train, valid) = need_data()?;
                let mut ev = NativeMlp::new(train, valid);
                ev.fixed = fixed.clone();
                ev.max_epochs = *max_epochs;
                ev.patience = *patience;
                Ok(Box::new(ev))
            }
            EvaluatorConfig::External { command, timeout_s } => {
                if command.is_empty() {
                    return Err(ConfigError::Invalid("external command is empty".to_string()));
                }
                Ok(Box::new(ExternalEvaluator::new(
                    command.clone(),
                    Duration::from_secs_f64(*timeout_s),
                )))
            }
        }
    }

    pub fn dataset_id(&self) -> String {
        match &self.dataset {
            DatasetConfig::Sim { n, rho, seed, .. } => format!("sim(n={n},rho={rho},seed={seed})"),
            DatasetConfig::Bikeshare { path, .. } => format!("bikeshare({})", path.display()),
            DatasetConfig::None => "none".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

/// A numeric comparison on one hyperparameter, e.g. `lr_rate > 0.01`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterExpr {
    pub name: String,
    pub op: FilterOp,
    pub value: f64,
}

impl FilterExpr {
    pub fn parse(text: &str) -> Result<FilterExpr, ConfigError> {
        let ops = [
            ("<=", FilterOp::Le),
            (">=", FilterOp::Ge),
            ("==", FilterOp::Eq),
            ("!=", FilterOp::Ne),
            ("<", FilterOp::Lt),
            (">", FilterOp::Gt),
        ];
        for (sym, op) in ops {
            if let Some(pos) = text.find(sym) {
                let name = text[..pos].trim();
                let rhs = text[pos + sym.len()..].trim();
                if name.is_empty() {
                    return Err(ConfigError::Invalid(format!(
                        "filter `{text}` has no parameter name"
                    )));
                }
                let value: f64 = rhs.parse().map_err(|_| {
                    ConfigError::Invalid(format!("filter `{text}`: `{rhs}` is not a number"))
                })?;
                return Ok(FilterExpr {
                    name: name.to_string(),
                    op,
                    value,
                });
            }
        }
        Err(ConfigError::Invalid(format!(
            "filter `{text}` has no comparison operator"
        )))
    }

    pub fn matches(&self, record: &TrialRecord) -> bool {
        match record.param_f64(&self.name) {
            Some(v) => match self.op {
                FilterOp::Lt => v < self.value,
                FilterOp::Le => v <= self.value,
                FilterOp::Gt => v > self.value,
                FilterOp::Ge => v >= self.value,
                FilterOp::Eq => v == self.value,
                FilterOp::Ne => v != self.value,
            },
            None => false,
        }
    }

    /// Error when the parameter is unknown to the space.
    pub fn check_against(&self, space: &SearchSpace) -> Result<(), ConfigError> {
        if space.param(&self.name).is_none() {
            return Err(ConfigError::Invalid(format!(
                "filter references unknown parameter `{}`",
                self.name
            )));
        }
        Ok(())
    }
}
