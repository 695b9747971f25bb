//! Comparison models over flattened histogram cubes: ridge, lasso, CART,
//! random forest and a batch-normalized feed-forward network.

mod dfnn;
mod features;
mod forest;
mod format;
pub(crate) mod linalg;
mod linear;
mod tree;

pub use dfnn::{dfnn_build, dfnn_build_with, dfnn_train, Dfnn, DfnnConfig, DfnnTrainConfig};
pub use features::{flatten_features, unflatten_features, FeatureMatrix, Standardizer};
pub use forest::{forest_fit, ForestOptions, RandomForest};
pub use format::BaselineModel;
pub use linear::{linear_fit, linear_fit_with, LassoOptions, LinearModel, Penalty};
pub use tree::{tree_fit, TreeNode, TreeOptions};
