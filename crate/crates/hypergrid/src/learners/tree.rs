//! Greedy binary decision tree with per-split feature subsampling.
//!
//! Split criterion is variance reduction for continuous targets and Gini
//! impurity reduction for binary ones. Numeric candidates are midpoints
//! between consecutive distinct sorted values (exact scan).

use super::LearnerError;
use crate::data::{Dataset, Task};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const PROB_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TreeParams {
    /// Maximum depth; a root-only tree has depth 0.
    pub depth: usize,
    /// Minimum samples per leaf.
    pub msl: usize,
    /// Features considered per split.
    pub max_p: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return *v,
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

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

pub fn fit_tree(
    data: &Dataset,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionTree, LearnerError> {
    if data.n_rows == 0 {
        return Err(LearnerError::EmptyData);
    }
    if params.msl == 0 || params.depth == 0 {
        return Err(LearnerError::BadParam(
            "depth and msl must be at least 1".to_string(),
        ));
    }
    if params.msl > data.n_rows {
        return Err(LearnerError::MslTooLarge {
            msl: params.msl,
            n: data.n_rows,
        });
    }
    let max_p = params.max_p.clamp(1, data.n_cols);
    let mut builder = Builder {
        data,
        msl: params.msl,
        max_depth: params.depth,
        max_p,
        nodes: Vec::new(),
        rng,
    };
    let rows: Vec<usize> = (0..data.n_rows).collect();
    builder.grow(rows, 0);
    Ok(DecisionTree {
        nodes: builder.nodes,
    })
}

struct Builder<'a> {
    data: &'a Dataset,
    msl: usize,
    max_depth: usize,
    max_p: usize,
    nodes: Vec<Node>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0)); // placeholder
        if depth < self.max_depth && rows.len() >= 2 * self.msl {
            if let Some((feature, threshold)) = self.best_split(&rows) {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&r| self.data.row(r)[feature] <= threshold);
                let left = self.grow(left_rows, depth + 1);
                let right = self.grow(right_rows, depth + 1);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                return id;
            }
        }
        self.nodes[id] = Node::Leaf(self.leaf_value(&rows));
        id
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let mean =
            rows.iter().map(|&r| self.data.target[r]).sum::<f64>() / rows.len() as f64;
        match self.data.task {
            Task::Continuous => mean,
            Task::Binary => mean.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP),
        }
    }

    /// Scan a random feature subset for the impurity-minimizing threshold.
    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let mut feats: Vec<usize> = (0..self.data.n_cols).collect();
        feats.shuffle(self.rng);
        feats.truncate(self.max_p);

        let n = rows.len() as f64;
        let total_sum: f64 = rows.iter().map(|&r| self.data.target[r]).sum();
        let total_sq: f64 = rows
            .iter()
            .map(|&r| self.data.target[r] * self.data.target[r])
            .sum();
        let parent_impurity = self.impurity(total_sum, total_sq, n);

        let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, gain)
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
        for &feature in &feats {
            sorted.clear();
            sorted.extend(
                rows.iter()
                    .map(|&r| (self.data.row(r)[feature], self.data.target[r])),
            );
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for i in 0..sorted.len() - 1 {
                let (x, y) = sorted[i];
                left_sum += y;
                left_sq += y * y;
                if x == sorted[i + 1].0 {
                    continue;
                }
                let nl = (i + 1) as f64;
                let nr = n - nl;
                if (nl as usize) < self.msl || (nr as usize) < self.msl {
                    continue;
                }
                let li = self.impurity(left_sum, left_sq, nl);
                let ri = self.impurity(total_sum - left_sum, total_sq - left_sq, nr);
                let gain = parent_impurity - (nl * li + nr * ri) / n;
                if gain > 0.0 && best.map_or(true, |(_, _, g)| gain > g) {
                    best = Some((feature, 0.5 * (x + sorted[i + 1].0), gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn impurity(&self, sum: f64, sq: f64, n: f64) -> f64 {
        match self.data.task {
            // variance
            Task::Continuous => (sq - sum * sum / n) / n,
            // Gini = 2 p (1 - p) for binary
            Task::Binary => {
                let p = sum / n;
                2.0 * p * (1.0 - p)
            }
        }
    }
}
