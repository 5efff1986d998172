//! Bagged forest of decision trees.

use super::tree::{fit_tree, DecisionTree, TreeParams};
use super::{derive_seed, LearnerError};
use crate::data::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestParams {
    pub tree: TreeParams,
    pub trees: usize,
    pub row_sample_ratio: f64,
    pub seed: u64,
    /// Test hook: with bootstrapping off every tree sees the full sample.
    pub bootstrap: bool,
}

impl ForestParams {
    pub fn new(tree: TreeParams, trees: usize, seed: u64) -> Self {
        Self {
            tree,
            trees,
            row_sample_ratio: 1.0,
            seed,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<DecisionTree>,
}

impl Forest {
    /// Arithmetic mean of the member trees' predictions.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }
}

pub fn fit_forest(train: &Dataset, params: &ForestParams) -> Result<Forest, LearnerError> {
    if params.trees == 0 {
        return Err(LearnerError::BadParam("trees must be at least 1".to_string()));
    }
    if !(0.0..=1.0).contains(&params.row_sample_ratio) || params.row_sample_ratio == 0.0 {
        return Err(LearnerError::BadParam(
            "row_sample_ratio must be in (0, 1]".to_string(),
        ));
    }
    let sample_size =
        ((train.n_rows as f64 * params.row_sample_ratio).round() as usize).max(1);
    let mut trees = Vec::with_capacity(params.trees);
    for t in 0..params.trees {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
        let tree = if params.bootstrap {
            let rows: Vec<usize> = (0..sample_size)
                .map(|_| rng.gen_range(0..train.n_rows))
                .collect();
            let resample = train.select_rows(&rows);
            fit_tree(&resample, &params.tree, &mut rng)?
        } else {
            fit_tree(train, &params.tree, &mut rng)?
        };
        trees.push(tree);
    }
    Ok(Forest { trees })
}
