use super::features::{FeatureMatrix, Standardizer};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tensor::{LayerSpec, Mode, ModelGraph, ParamBlock, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DfnnConfig {
    pub features: usize,
    pub hidden: Vec<usize>,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl DfnnConfig {
    /// Nine hidden blocks of 50 units.
    pub fn new(features: usize) -> Self {
        Self {
            features,
            hidden: vec![50; 9],
            bn_epsilon: 1e-5,
            bn_momentum: 0.99,
        }
    }

    /// Each hidden block is dense, batchnorm, ReLU; the output is one
    /// linear unit.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::with_capacity(3 * self.hidden.len() + 1);
        for &units in &self.hidden {
            layers.push(LayerSpec::dense(units));
            layers.push(LayerSpec::Batchnorm {
                epsilon: self.bn_epsilon,
                momentum: self.bn_momentum,
            });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::dense(1));
        layers
    }
}

pub fn dfnn_build(features: usize, seed: u64) -> Result<ModelGraph> {
    dfnn_build_with(&DfnnConfig::new(features), seed)
}

pub fn dfnn_build_with(config: &DfnnConfig, seed: u64) -> Result<ModelGraph> {
    if config.features == 0 {
        return Err(Error::Argument("DFNN needs at least one feature".into()));
    }
    ModelGraph::build(&[config.features], &[], &[("dfnn".to_string(), config.layers())], seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DfnnTrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Reset batchnorm running statistics to the average batch statistics
    /// over one pass of the training rows after the last step.
    pub refresh_batchnorm: bool,
}

impl Default for DfnnTrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 32,
            iterations: 2000,
            seed: 0,
            refresh_batchnorm: true,
        }
    }
}

/// A trained DFNN together with the feature standardization it expects.
#[derive(Clone, Debug)]
pub struct Dfnn {
    pub config: DfnnConfig,
    pub seed: u64,
    pub standardizer: Standardizer,
    pub graph: ModelGraph,
}

impl Dfnn {
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.cols() != self.config.features {
            return Err(Error::Dimension(format!(
                "model expects {} features, got {}",
                self.config.features,
                x.cols()
            )));
        }
        let z = Tensor::new(vec![x.rows(), x.cols()], self.standardizer.transform(x))?;
        Ok(self.graph.predict(0, &z)?.into_data())
    }

    pub fn parameter_count(&self) -> usize {
        self.graph.count_trainable()
    }
}

/// Mean-squared-error training with Adam over shuffled mini-batches.
/// The output bias starts at the target mean. Returns the per-iteration
/// loss history.
pub fn dfnn_train(
    x: &FeatureMatrix,
    y: &[f64],
    config: &DfnnConfig,
    train: &DfnnTrainConfig,
) -> Result<(Dfnn, Vec<f64>)> {
    if y.len() != x.rows() || config.features != x.cols() {
        return Err(Error::Dimension(format!(
            "{}x{} features, {} targets, model expects {} features",
            x.rows(),
            x.cols(),
            y.len(),
            config.features
        )));
    }
    if train.batch_size < 2 || x.rows() < 2 {
        return Err(Error::Argument("batchnorm training needs batches of at least two rows".into()));
    }
    let standardizer = Standardizer::fit(x);
    let z = standardizer.transform(x);
    let mut graph = dfnn_build_with(config, train.seed)?;
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    if let Some(ParamBlock::Affine { bias, .. }) = graph.params_mut().last_mut() {
        bias.data_mut()[0] = y_mean;
    }
    graph.init_adam(train.lr);
    let f = x.cols();
    let batch = train.batch_size.min(x.rows());
    let mut rng = rng_for(train.seed, &[1]);
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(train.iterations);
    for iteration in 0..train.iterations {
        if order.len() < batch {
            let mut epoch: Vec<usize> = (0..x.rows()).collect();
            epoch.shuffle(&mut rng);
            order.extend(epoch);
        }
        let idx: Vec<usize> = order.drain(..batch).collect();
        let mut data = Vec::with_capacity(batch * f);
        for &i in &idx {
            data.extend_from_slice(&z[i * f..(i + 1) * f]);
        }
        let pred = graph
            .forward(0, &Tensor::new(vec![batch, f], data)?, Mode::Train)
            .map_err(|e| crate::train::diverged(e, iteration))?;
        let n = batch as f64;
        let mut loss = 0.0;
        let grad: Vec<f64> = pred
            .data()
            .iter()
            .zip(&idx)
            .map(|(p, &i)| {
                let e = p - y[i];
                loss += e * e / n;
                2.0 * e / n
            })
            .collect();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        history.push(loss);
        let mut grads = graph.zero_grads();
        graph.backward(0, &Tensor::new(vec![batch, 1], grad)?, &mut grads, false)?;
        graph.adam_update(&grads)?;
    }
    if train.refresh_batchnorm && train.iterations > 0 {
        let chunks: Vec<Tensor> = (0..x.rows())
            .step_by(batch)
            .filter(|&start| x.rows() - start >= 2)
            .map(|start| {
                let end = (start + batch).min(x.rows());
                Tensor::new(vec![end - start, f], z[start * f..end * f].to_vec())
            })
            .collect::<Result<_>>()?;
        graph.reestimate_batchnorm(chunks.iter().map(|t| vec![(0, t)]))?;
    }
    Ok((
        Dfnn {
            config: config.clone(),
            seed: train.seed,
            standardizer,
            graph,
        },
        history,
    ))
}
