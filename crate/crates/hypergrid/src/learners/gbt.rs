//! Second-order gradient boosting with soft-threshold (L1/L2) regularized
//! split gain and leaf weights.
//!
//! Loss is squared error for continuous targets (g = margin - y, h = 1) and
//! logistic for binary ones (g = sigma - y, h = sigma * (1 - sigma)). Each
//! round fits one depth-limited tree on a per-tree uniform column subsample.

use super::{derive_seed, LearnerError};
use crate::data::{Dataset, Task};
use crate::metrics::{compute_metric, MetricKind};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtParams {
    pub depth: usize,
    /// Maximum boosting rounds.
    pub trees: usize,
    pub lr_rate: f64,
    /// L1 penalty on leaf weights.
    pub alpha: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum hessian sum required in each child for a split to be legal.
    pub min_child_weight: f64,
    /// Fraction of columns sampled per tree, in (0, 1].
    pub colsample_bytree: f64,
    pub early_stopping_rounds: Option<usize>,
    pub seed: u64,
}

impl GbtParams {
    pub fn new(depth: usize, trees: usize, lr_rate: f64, seed: u64) -> Self {
        Self {
            depth,
            trees,
            lr_rate,
            alpha: 0.0,
            lambda: 0.0,
            min_child_weight: 0.0,
            colsample_bytree: 1.0,
            early_stopping_rounds: None,
            seed,
        }
    }
}

/// Optimal leaf weight for G*w + 0.5*(H + lambda)*w^2 + alpha*|w|:
/// the soft-thresholded Newton step.
pub fn gbt_leaf_weight(g: f64, h: f64, alpha: f64, lambda: f64) -> Result<f64, LearnerError> {
    let denom = h + lambda;
    if denom <= 0.0 {
        return Err(LearnerError::NonPositiveHessian(denom));
    }
    Ok(-g.signum() * (g.abs() - alpha).max(0.0) / denom)
}

/// Regularized score S(G, H) = max(|G| - alpha, 0)^2 / (H + lambda).
fn score(g: f64, h: f64, alpha: f64, lambda: f64) -> f64 {
    let t = (g.abs() - alpha).max(0.0);
    t * t / (h + lambda)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtTree {
    nodes: Vec<Node>,
}

impl GbtTree {
    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(w) => return *w,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub trees: Vec<GbtTree>,
    pub task: Task,
    /// Validation metric at the kept round, when early stopping ran.
    pub best_valid_metric: Option<f64>,
}

impl GbtModel {
    pub fn margin_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let margin = self.margin_row(row);
        match self.task {
            Task::Continuous => margin,
            Task::Binary => sigmoid(margin),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn fit_gbt(
    train: &Dataset,
    valid: Option<&Dataset>,
    params: &GbtParams,
) -> Result<GbtModel, LearnerError> {
    if train.n_rows == 0 {
        return Err(LearnerError::EmptyData);
    }
    if params.early_stopping_rounds.is_some() && valid.is_none() {
        return Err(LearnerError::EarlyStoppingNeedsValid);
    }
    if !(0.0..=1.0).contains(&params.lr_rate) || params.lr_rate == 0.0 {
        return Err(LearnerError::BadParam("lr_rate must be in (0, 1]".to_string()));
    }
    if params.alpha < 0.0 || params.lambda < 0.0 || params.min_child_weight < 0.0 {
        return Err(LearnerError::BadParam("penalties must be nonnegative".to_string()));
    }
    if !(0.0..=1.0).contains(&params.colsample_bytree) || params.colsample_bytree == 0.0 {
        return Err(LearnerError::BadParam(
            "colsample_bytree must be in (0, 1]".to_string(),
        ));
    }

    let mean_y = train.target.iter().sum::<f64>() / train.n_rows as f64;
    let base_score = match train.task {
        Task::Continuous => mean_y,
        Task::Binary => {
            let p = mean_y.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    };
    let es_metric = match train.task {
        Task::Continuous => MetricKind::Mse,
        Task::Binary => MetricKind::Logloss,
    };
    let n_sub = ((params.colsample_bytree * train.n_cols as f64).ceil() as usize)
        .clamp(1, train.n_cols);

    let mut train_margin = vec![base_score; train.n_rows];
    let mut valid_margin: Vec<f64> = valid.map_or(Vec::new(), |v| vec![base_score; v.n_rows]);
    let mut trees: Vec<GbtTree> = Vec::new();
    let mut best_round = 0usize;
    let mut best_metric: Option<f64> = None;

    for round in 0..params.trees {
        let mut g = vec![0.0; train.n_rows];
        let mut h = vec![0.0; train.n_rows];
        match train.task {
            Task::Continuous => {
                for i in 0..train.n_rows {
                    g[i] = train_margin[i] - train.target[i];
                    h[i] = 1.0;
                }
            }
            Task::Binary => {
                for i in 0..train.n_rows {
                    let p = sigmoid(train_margin[i]);
                    g[i] = p - train.target[i];
                    h[i] = p * (1.0 - p);
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, round as u64));
        let mut cols: Vec<usize> = (0..train.n_cols).collect();
        cols.shuffle(&mut rng);
        cols.truncate(n_sub);

        let tree = grow_tree(train, &g, &h, &cols, params)?;
        for i in 0..train.n_rows {
            train_margin[i] += tree.predict_row(train.row(i));
        }
        if let Some(v) = valid {
            for i in 0..v.n_rows {
                valid_margin[i] += tree.predict_row(v.row(i));
            }
        }
        trees.push(tree);

        if let (Some(es), Some(v)) = (params.early_stopping_rounds, valid) {
            let preds: Vec<f64> = match train.task {
                Task::Continuous => valid_margin.clone(),
                Task::Binary => valid_margin.iter().map(|&m| sigmoid(m)).collect(),
            };
            let metric = compute_metric(es_metric, &v.target, &preds)?;
            if best_metric.map_or(true, |b| es_metric.better(metric, b)) {
                best_metric = Some(metric);
                best_round = round + 1;
            } else if round + 1 - best_round >= es {
                break;
            }
        }
    }

    if params.early_stopping_rounds.is_some() {
        trees.truncate(best_round);
    }
    Ok(GbtModel {
        base_score,
        trees,
        task: train.task,
        best_valid_metric: best_metric,
    })
}

fn grow_tree(
    train: &Dataset,
    g: &[f64],
    h: &[f64],
    cols: &[usize],
    params: &GbtParams,
) -> Result<GbtTree, LearnerError> {
    let mut builder = GbtBuilder {
        train,
        g,
        h,
        cols,
        params,
        nodes: Vec::new(),
    };
    let rows: Vec<usize> = (0..train.n_rows).collect();
    builder.grow(rows, 0)?;
    Ok(GbtTree {
        nodes: builder.nodes,
    })
}

struct GbtBuilder<'a> {
    train: &'a Dataset,
    g: &'a [f64],
    h: &'a [f64],
    cols: &'a [usize],
    params: &'a GbtParams,
    nodes: Vec<Node>,
}

impl GbtBuilder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> Result<usize, LearnerError> {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0)); // placeholder
        let g_sum: f64 = rows.iter().map(|&r| self.g[r]).sum();
        let h_sum: f64 = rows.iter().map(|&r| self.h[r]).sum();
        if depth < self.params.depth && rows.len() >= 2 {
            if let Some((feature, threshold)) = self.best_split(&rows, g_sum, h_sum) {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&r| self.train.row(r)[feature] <= threshold);
                let left = self.grow(left_rows, depth + 1)?;
                let right = self.grow(right_rows, depth + 1)?;
                self.nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                return Ok(id);
            }
        }
        let w = self.params.lr_rate
            * gbt_leaf_weight(g_sum, h_sum, self.params.alpha, self.params.lambda)?;
        self.nodes[id] = Node::Leaf(w);
        Ok(id)
    }

    fn best_split(&self, rows: &[usize], g_sum: f64, h_sum: f64) -> Option<(usize, f64)> {
        let (alpha, lambda) = (self.params.alpha, self.params.lambda);
        if h_sum + lambda <= 0.0 {
            return None;
        }
        let parent_score = score(g_sum, h_sum, alpha, lambda);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted: Vec<(f64, f64, f64)> = Vec::with_capacity(rows.len());
        for &feature in self.cols {
            sorted.clear();
            sorted.extend(
                rows.iter()
                    .map(|&r| (self.train.row(r)[feature], self.g[r], self.h[r])),
            );
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

            let mut gl = 0.0;
            let mut hl = 0.0;
            for i in 0..sorted.len() - 1 {
                let (x, gi, hi) = sorted[i];
                gl += gi;
                hl += hi;
                if x == sorted[i + 1].0 {
                    continue;
                }
                let gr = g_sum - gl;
                let hr = h_sum - hl;
                if hl < self.params.min_child_weight || hr < self.params.min_child_weight {
                    continue;
                }
                if hl + lambda <= 0.0 || hr + lambda <= 0.0 {
                    continue;
                }
                let gain = 0.5
                    * (score(gl, hl, alpha, lambda) + score(gr, hr, alpha, lambda)
                        - parent_score);
                if gain > 0.0 && best.map_or(true, |(_, _, b)| gain > b) {
                    best = Some((feature, 0.5 * (x + sorted[i + 1].0), gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }
}
