use super::features::FeatureMatrix;
use crate::error::{Error, Result};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

/// CART regression tree. Rows with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
        samples: usize,
        depth: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
        depth: usize,
    },
}

impl TreeNode {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if row[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }

    /// Depth of the deepest leaf (a lone leaf has depth 0).
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { depth, .. } => *depth,
            TreeNode::Split { left, right, .. } => left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeOptions {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features drawn per split; `None` examines all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            max_depth: 12,
            min_leaf: 1,
            max_features: None,
        }
    }
}

pub fn tree_fit(x: &FeatureMatrix, y: &[f64], max_depth: usize, min_leaf: usize) -> Result<TreeNode> {
    let opts = TreeOptions {
        max_depth,
        min_leaf,
        max_features: None,
    };
    tree_fit_rows(x, y, (0..x.rows()).collect(), &opts, None)
}

/// Fits on the given row indices (repeats allowed, as in a bootstrap).
pub(crate) fn tree_fit_rows(
    x: &FeatureMatrix,
    y: &[f64],
    rows: Vec<usize>,
    opts: &TreeOptions,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<TreeNode> {
    if y.len() != x.rows() {
        return Err(Error::Dimension(format!("{} rows but {} targets", x.rows(), y.len())));
    }
    if opts.min_leaf == 0 {
        return Err(Error::Argument("min_leaf must be at least 1".into()));
    }
    if rows.len() < opts.min_leaf {
        return Err(Error::Argument(format!(
            "{} samples cannot fill a leaf of {}",
            rows.len(),
            opts.min_leaf
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite target".into()));
    }
    let mut grower = Grower {
        x,
        y,
        opts,
        rng,
        buf: Vec::with_capacity(rows.len()),
    };
    Ok(grower.grow(rows, 0))
}

struct Grower<'a, 'r> {
    x: &'a FeatureMatrix,
    y: &'a [f64],
    opts: &'a TreeOptions,
    rng: Option<&'r mut ChaCha8Rng>,
    buf: Vec<(f64, f64)>,
}

struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_, '_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> TreeNode {
        let mean = rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64;
        let pure = rows.iter().all(|&i| self.y[i] == self.y[rows[0]]);
        let leaf = TreeNode::Leaf {
            value: mean,
            samples: rows.len(),
            depth,
        };
        if pure || depth >= self.opts.max_depth || rows.len() < 2 * self.opts.min_leaf {
            return leaf;
        }
        let Some(best) = self.best_split(&rows) else {
            return leaf;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| self.x.row(i)[best.feature] <= best.threshold);
        TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: Box::new(self.grow(left, depth + 1)),
            right: Box::new(self.grow(right, depth + 1)),
            depth,
        }
    }

    fn features(&mut self) -> Vec<usize> {
        let f = self.x.cols();
        match (self.opts.max_features, self.rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < f => {
                let mut v = sample(rng, f, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..f).collect(),
        }
    }

    /// Maximizes `sl²/nl + sr²/nr`, which minimizes the children's summed
    /// squared error. Only strictly better candidates replace the current
    /// best, so ties keep the lowest feature and then the lowest threshold.
    fn best_split(&mut self, rows: &[usize]) -> Option<Candidate> {
        let n = rows.len();
        let min_leaf = self.opts.min_leaf;
        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let mut best: Option<Candidate> = None;
        for feature in self.features() {
            self.buf.clear();
            self.buf
                .extend(rows.iter().map(|&i| (self.x.row(i)[feature], self.y[i])));
            self.buf.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += self.buf[k - 1].1;
                let (lo, hi) = (self.buf[k - 1].0, self.buf[k].0);
                if lo == hi || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(Candidate {
                        score,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best
    }
}
