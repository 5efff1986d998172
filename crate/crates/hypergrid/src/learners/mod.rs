//! Native desk-scale learners: single trees, bagged forests, second-order
//! boosted trees, and a small fully connected network. All fits are
//! deterministic for a fixed seed.

pub mod forest;
pub mod gbt;
pub mod mlp;
pub mod tree;

pub use forest::{fit_forest, Forest, ForestParams};
pub use gbt::{fit_gbt, gbt_leaf_weight, GbtModel, GbtParams};
pub use mlp::{fit_mlp, Mlp, MlpParams};
pub use tree::{fit_tree, DecisionTree, TreeParams};

use crate::data::Dataset;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("empty dataset")]
    EmptyData,
    #[error("min samples per leaf {msl} exceeds sample count {n}")]
    MslTooLarge { msl: usize, n: usize },
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("leaf weight requires H + lambda > 0, got {0}")]
    NonPositiveHessian(f64),
    #[error("early stopping requires a validation set")]
    EarlyStoppingNeedsValid,
    #[error("batch size {batch} exceeds sample count {n}")]
    BatchTooLarge { batch: usize, n: usize },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
}

/// A trained model of any family.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Tree(DecisionTree),
    Forest(Forest),
    Gbt(GbtModel),
    Mlp(Mlp),
}

impl FittedModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            FittedModel::Tree(m) => m.predict_row(row),
            FittedModel::Forest(m) => m.predict_row(row),
            FittedModel::Gbt(m) => m.predict_row(row),
            FittedModel::Mlp(m) => m.predict_row(row),
        }
    }

    pub fn predict(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n_rows).map(|i| self.predict_row(data.row(i))).collect()
    }

    /// Boosting rounds or training epochs actually used; tree count for
    /// forests, 1 for single trees.
    pub fn rounds_used(&self) -> usize {
        match self {
            FittedModel::Tree(_) => 1,
            FittedModel::Forest(m) => m.trees.len(),
            FittedModel::Gbt(m) => m.trees.len(),
            FittedModel::Mlp(m) => m.epochs_used,
        }
    }
}

/// splitmix64; used to derive independent child seeds from (seed, index).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
