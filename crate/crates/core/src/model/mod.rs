//! YieldNet: a five-layer convolutional backbone shared by a corn head
//! and a soybean head, plus the single-head ablation variants.

mod checkpoint;
mod loss;

pub use checkpoint::{load_yieldnet, read_yieldnet, save_yieldnet, write_yieldnet, AdamHeader};
pub(crate) use checkpoint::{adam_header, block_sizes, decode_header, read_graph_payload, write_graph_payload};
pub use loss::{normalized_term, yieldnet_loss, CropTerm, JointLoss, LossContext};

use crate::crop::{Crop, PerCrop};
use crate::error::{Error, Result};
use crate::raster::HistogramCube;
use crate::tensor::{LayerSpec, Mode, ModelGraph, Padding, ParamGrad, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filter_height: usize,
    pub filter_width: usize,
    pub stride: usize,
    pub padding: Padding,
    pub filters: usize,
}

impl ConvSpec {
    pub const fn square(filter: usize, stride: usize, padding: Padding, filters: usize) -> Self {
        Self {
            filter_height: filter,
            filter_width: filter,
            stride,
            padding,
            filters,
        }
    }

    fn layer(&self) -> LayerSpec {
        LayerSpec::Conv2d {
            filter_height: self.filter_height,
            filter_width: self.filter_width,
            stride: self.stride,
            padding: self.padding,
            out_channels: self.filters,
        }
    }
}

/// Network layout. Every conv is followed by batchnorm and ReLU; every
/// hidden dense layer by ReLU; the output is a single linear unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YieldNetConfig {
    pub time: usize,
    pub bins: usize,
    pub bands: usize,
    pub backbone: Vec<ConvSpec>,
    pub head_convs: Vec<ConvSpec>,
    pub head_dense: Vec<usize>,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for YieldNetConfig {
    fn default() -> Self {
        use Padding::{Same, Valid};
        Self {
            time: 30,
            bins: 32,
            bands: 9,
            backbone: vec![
                ConvSpec::square(7, 2, Valid, 48),
                ConvSpec::square(5, 2, Valid, 64),
                ConvSpec::square(5, 2, Same, 96),
                ConvSpec::square(3, 1, Same, 128),
                ConvSpec::square(3, 1, Same, 128),
            ],
            head_convs: vec![ConvSpec::square(3, 1, Same, 148), ConvSpec::square(3, 1, Same, 148)],
            head_dense: vec![100, 50],
            bn_epsilon: 1e-5,
            bn_momentum: 0.99,
        }
    }
}

impl YieldNetConfig {
    /// A few-hundred-parameter layout on a 4 × 5 × 2 input for gradient
    /// checks.
    pub fn tiny() -> Self {
        use Padding::{Same, Valid};
        Self {
            time: 4,
            bins: 5,
            bands: 2,
            backbone: vec![ConvSpec::square(2, 1, Valid, 3), ConvSpec::square(3, 2, Same, 3)],
            head_convs: vec![ConvSpec::square(2, 1, Same, 2)],
            head_dense: vec![4, 3],
            bn_epsilon: 1e-5,
            bn_momentum: 0.99,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.time, self.bins, self.bands]
    }

    fn conv_block(&self, c: &ConvSpec) -> [LayerSpec; 3] {
        [
            c.layer(),
            LayerSpec::Batchnorm {
                epsilon: self.bn_epsilon,
                momentum: self.bn_momentum,
            },
            LayerSpec::Relu,
        ]
    }

    pub fn backbone_layers(&self) -> Vec<LayerSpec> {
        self.backbone.iter().flat_map(|c| self.conv_block(c)).collect()
    }

    pub fn head_layers(&self) -> Vec<LayerSpec> {
        let mut layers: Vec<LayerSpec> = self.head_convs.iter().flat_map(|c| self.conv_block(c)).collect();
        layers.push(LayerSpec::Flatten);
        for &units in &self.head_dense {
            layers.push(LayerSpec::dense(units));
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::dense(1));
        layers
    }
}

/// Which heads a model carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Joint,
    Single(Crop),
}

impl Variant {
    pub fn crops(self) -> Vec<Crop> {
        match self {
            Variant::Joint => Crop::ALL.to_vec(),
            Variant::Single(c) => vec![c],
        }
    }
}

/// Yield labels for a batch; `mask[i]` is false for unlabeled samples.
#[derive(Clone, Debug, PartialEq)]
pub struct CropLabels {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl CropLabels {
    pub fn new(labels: Vec<Option<f64>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        if let Some(bad) = labels.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite label {bad}")));
        }
        Ok(Self {
            values: labels.iter().map(|l| l.unwrap_or(0.0)).collect(),
            mask: labels.iter().map(Option::is_some).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn labeled(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// N cubes of one crop stacked as an `[N, T, b, d]` tensor, with labels.
#[derive(Clone, Debug, PartialEq)]
pub struct CropBatch {
    pub inputs: Tensor,
    pub labels: CropLabels,
}

impl CropBatch {
    pub fn new(inputs: Tensor, labels: Vec<Option<f64>>) -> Result<Self> {
        let labels = CropLabels::new(labels)?;
        if inputs.batch() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} labels",
                inputs.batch(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn from_cubes(cubes: &[&HistogramCube], labels: Vec<Option<f64>>) -> Result<Self> {
        Self::new(stack_cubes(cubes)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Stacks cubes into `[N, T, b, d]`; time and bin become the conv plane,
/// bands the channels.
pub fn stack_cubes(cubes: &[&HistogramCube]) -> Result<Tensor> {
    let first = cubes.first().ok_or_else(|| Error::Argument("no cubes to stack".into()))?;
    let (t, b, d) = first.shape();
    let mut data = Vec::with_capacity(cubes.len() * t * b * d);
    for c in cubes {
        if c.shape() != (t, b, d) {
            return Err(Error::Dimension(format!(
                "cube {}/{} has shape {:?}, expected {:?}",
                c.location_id,
                c.year,
                c.shape(),
                (t, b, d)
            )));
        }
        data.extend_from_slice(&c.values);
    }
    Tensor::new(vec![cubes.len(), t, b, d], data)
}

/// Outcome of one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLoss {
    pub value: f64,
    pub terms: PerCrop<Option<f64>>,
    /// Crop whose term set the joint loss (joint models only).
    pub achieved_by: Option<Crop>,
}

/// Trainable count for one parameter block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BlockCount {
    pub name: String,
    pub shared: bool,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct YieldNet {
    config: YieldNetConfig,
    variant: Variant,
    seed: u64,
    graph: ModelGraph,
}

/// Full two-head network.
pub fn build_yieldnet(config: &YieldNetConfig, seed: u64) -> Result<YieldNet> {
    YieldNet::build(config, Variant::Joint, seed)
}

/// Same backbone with only `crop`'s head.
pub fn build_single_head(config: &YieldNetConfig, crop: Crop, seed: u64) -> Result<YieldNet> {
    YieldNet::build(config, Variant::Single(crop), seed)
}

pub fn count_parameters(model: &YieldNet) -> usize {
    model.count_parameters()
}

impl YieldNet {
    pub fn build(config: &YieldNetConfig, variant: Variant, seed: u64) -> Result<Self> {
        let heads: Vec<(String, Vec<LayerSpec>)> = variant
            .crops()
            .into_iter()
            .map(|c| (format!("{c}_head"), config.head_layers()))
            .collect();
        let graph = ModelGraph::build(&config.input_shape(), &config.backbone_layers(), &heads, seed)?;
        Ok(Self {
            config: config.clone(),
            variant,
            seed,
            graph,
        })
    }

    pub fn config(&self) -> &YieldNetConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn crops(&self) -> Vec<Crop> {
        self.variant.crops()
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut ModelGraph {
        &mut self.graph
    }

    pub fn head_index(&self, crop: Crop) -> Option<usize> {
        self.crops().iter().position(|&c| c == crop)
    }

    fn head(&self, crop: Crop) -> Result<usize> {
        self.head_index(crop)
            .ok_or_else(|| Error::Argument(format!("model has no {crop} head")))
    }

    pub fn count_parameters(&self) -> usize {
        self.graph.count_trainable()
    }

    pub fn parameter_breakdown(&self) -> Vec<BlockCount> {
        let shared = self.graph.trunk_blocks();
        self.graph
            .block_names()
            .iter()
            .zip(self.graph.params())
            .enumerate()
            .map(|(i, (name, p))| BlockCount {
                name: name.clone(),
                shared: shared.contains(&i),
                count: p.trainable_count(),
            })
            .collect()
    }

    /// Inference-mode predictions for `crop` on `[N, T, b, d]` inputs.
    pub fn predict(&self, crop: Crop, inputs: &Tensor) -> Result<Vec<f64>> {
        Ok(self.graph.predict(self.head(crop)?, inputs)?.into_data())
    }

    /// Forward pass for whichever crop batches are given, recording the
    /// caches needed by a following backward pass.
    pub fn forward(
        &mut self,
        corn: Option<&CropBatch>,
        soy: Option<&CropBatch>,
        mode: Mode,
    ) -> Result<PerCrop<Option<Vec<f64>>>> {
        let mut inputs = Vec::with_capacity(2);
        let mut crops = Vec::with_capacity(2);
        for (crop, batch) in [(Crop::Corn, corn), (Crop::Soybean, soy)] {
            if let Some(batch) = batch {
                inputs.push((self.head(crop)?, &batch.inputs));
                crops.push(crop);
            }
        }
        if inputs.is_empty() {
            return Err(Error::Loss("no crop batch to evaluate".into()));
        }
        let outputs = self.graph.forward_joint(&inputs, mode)?;
        let mut out = PerCrop::new(None, None);
        for (crop, y) in crops.into_iter().zip(outputs) {
            *out.get_mut(crop) = Some(y.into_data());
        }
        Ok(out)
    }

    /// Loss and parameter gradients for one batch. A joint model given
    /// both crops uses the max-normalized joint loss; otherwise the single
    /// given crop's normalized term is the loss.
    pub fn loss_and_grads(
        &mut self,
        corn: Option<&CropBatch>,
        soy: Option<&CropBatch>,
        ctx: &LossContext,
        mode: Mode,
    ) -> Result<(StepLoss, Vec<ParamGrad>)> {
        let preds = self.forward(corn, soy, mode)?;
        let (loss, grads_out) = match (&preds.corn, &preds.soybean, corn, soy) {
            (Some(pc), Some(ps), Some(bc), Some(bs)) => {
                let joint = yieldnet_loss(pc, ps, &bc.labels, &bs.labels, ctx)?;
                let step = StepLoss {
                    value: joint.value,
                    terms: PerCrop::new(Some(joint.terms.corn.value), Some(joint.terms.soybean.value)),
                    achieved_by: Some(joint.achieved_by),
                };
                let grads = joint.terms.map(|c, t| (c == joint.achieved_by).then_some(t.grad));
                (step, grads)
            }
            (Some(pc), None, Some(bc), None) => {
                let t = normalized_term(pc, &bc.labels, ctx.mean_corn)?;
                let step = StepLoss {
                    value: t.value,
                    terms: PerCrop::new(Some(t.value), None),
                    achieved_by: None,
                };
                (step, PerCrop::new(Some(t.grad), None))
            }
            (None, Some(ps), None, Some(bs)) => {
                let t = normalized_term(ps, &bs.labels, ctx.mean_soy)?;
                let step = StepLoss {
                    value: t.value,
                    terms: PerCrop::new(None, Some(t.value)),
                    achieved_by: None,
                };
                (step, PerCrop::new(None, Some(t.grad)))
            }
            _ => return Err(Error::Loss("no crop batch to evaluate".into())),
        };
        let mut grads = self.graph.zero_grads();
        let mut grads_tensors = Vec::with_capacity(2);
        for crop in Crop::ALL {
            if let Some(g) = grads_out.get(crop) {
                grads_tensors.push((self.head(crop)?, Tensor::new(vec![g.len(), 1], g.clone())?));
            }
        }
        let refs: Vec<_> = grads_tensors.iter().map(|(h, g)| (*h, Some(g))).collect();
        self.graph.backward_joint(&refs, &mut grads, false)?;
        Ok((loss, grads))
    }

    /// Sets batchnorm running statistics to the average train-mode batch
    /// statistics over `batches` (corn, soybean pairs as in
    /// [`YieldNet::forward`]).
    pub fn reestimate_batchnorm(&mut self, batches: &[(Option<CropBatch>, Option<CropBatch>)]) -> Result<()> {
        let mut inputs = Vec::with_capacity(batches.len());
        for (corn, soy) in batches {
            let mut pair = Vec::with_capacity(2);
            for (crop, batch) in [(Crop::Corn, corn), (Crop::Soybean, soy)] {
                if let Some(b) = batch {
                    pair.push((self.head(crop)?, &b.inputs));
                }
            }
            if !pair.is_empty() {
                inputs.push(pair);
            }
        }
        self.graph.reestimate_batchnorm(inputs)
    }

    /// One Adam step on the given batches (train-mode batchnorm).
    pub fn train_step(
        &mut self,
        corn: Option<&CropBatch>,
        soy: Option<&CropBatch>,
        ctx: &LossContext,
    ) -> Result<StepLoss> {
        let (loss, grads) = self.loss_and_grads(corn, soy, ctx, Mode::Train)?;
        if !loss.value.is_finite() {
            let iteration = self.graph.adam.as_ref().map_or(0, |a| a.step as usize);
            return Err(Error::NonFiniteLoss { iteration });
        }
        self.graph.adam_update(&grads)?;
        Ok(loss)
    }
}
