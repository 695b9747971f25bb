use super::features::FeatureMatrix;
use super::tree::{tree_fit_rows, TreeNode, TreeOptions};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use rand::Rng;
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForestOptions {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features drawn per split; `None` means ⌈F/3⌉.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestOptions {
    fn default() -> Self {
        Self {
            n_trees: 150,
            max_depth: 20,
            min_leaf: 1,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<TreeNode>,
}

impl RandomForest {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }
}

/// Bagged CART trees. Tree `i` draws its bootstrap sample and split
/// features from its own stream `(seed, i)`, so the fit does not depend on
/// thread scheduling.
pub fn forest_fit(x: &FeatureMatrix, y: &[f64], opts: &ForestOptions, seed: u64) -> Result<RandomForest> {
    if opts.n_trees == 0 {
        return Err(Error::Argument("forest needs at least one tree".into()));
    }
    if x.rows() < 2 {
        return Err(Error::Argument("forest needs at least two samples".into()));
    }
    let n = x.rows();
    let tree_opts = TreeOptions {
        max_depth: opts.max_depth,
        min_leaf: opts.min_leaf,
        max_features: Some(opts.max_features.unwrap_or(x.cols().div_ceil(3)).clamp(1, x.cols())),
    };
    let trees = (0..opts.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, &[i as u64]);
            let rows: Vec<usize> = if opts.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            tree_fit_rows(x, y, rows, &tree_opts, Some(&mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RandomForest { trees })
}
