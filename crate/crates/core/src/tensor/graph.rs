use super::{
    adam_step, batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, conv_output_extent,
    dense_backward, dense_forward, relu, relu_backward, xavier_init, AdamState, BatchNormCache, ConvCache,
    DenseCache, LayerSpec, Mode, ParamBlock, ParamGrad, Tensor,
};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// A layer and the parameter block it reads, if any. Several layers in
/// different paths may reference the same block.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub block: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub name: String,
    pub layers: Vec<Layer>,
}

enum LayerCache {
    Conv(ConvCache),
    Norm(BatchNormCache),
    Relu(Tensor),
    Dense(DenseCache),
    Flatten(Vec<usize>),
}

/// Record of one forward pass: trunk caches over the stacked batch, then
/// each head's caches and the rows it owns.
struct Tape {
    trunk: Vec<LayerCache>,
    trunk_out_shape: Vec<usize>,
    heads: Vec<HeadTape>,
}

struct HeadTape {
    head: usize,
    rows: std::ops::Range<usize>,
    caches: Vec<LayerCache>,
}

/// A shared trunk feeding one or more heads. Parameters live in one
/// arena so a shared block is stored (and counted) once.
pub struct ModelGraph {
    input_shape: Vec<usize>,
    params: Vec<ParamBlock>,
    block_names: Vec<String>,
    trunk: Vec<Layer>,
    heads: Vec<Head>,
    tape: Option<Tape>,
    /// Per-block sums of batch statistics while re-estimating batchnorm.
    bn_sums: Option<Vec<Option<StatSum>>>,
    pub adam: Option<AdamState>,
}

#[derive(Clone, Debug, Default)]
struct StatSum {
    batches: usize,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl Clone for ModelGraph {
    /// Clones parameters and optimizer state; forward caches are dropped.
    fn clone(&self) -> Self {
        Self {
            input_shape: self.input_shape.clone(),
            params: self.params.clone(),
            block_names: self.block_names.clone(),
            trunk: self.trunk.clone(),
            heads: self.heads.clone(),
            tape: None,
            bn_sums: None,
            adam: self.adam.clone(),
        }
    }
}

impl std::fmt::Debug for ModelGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelGraph")
            .field("input_shape", &self.input_shape)
            .field("blocks", &self.block_names)
            .field("heads", &self.heads.iter().map(|h| &h.name).collect::<Vec<_>>())
            .finish()
    }
}

/// Per-sample shape after applying `spec`, allocating its parameters.
fn infer_layer(
    spec: &LayerSpec,
    shape: &[usize],
    seed: u64,
    block_index: usize,
) -> std::result::Result<(Vec<usize>, Option<ParamBlock>), String> {
    match *spec {
        LayerSpec::Conv2d {
            filter_height,
            filter_width,
            stride,
            padding,
            out_channels,
        } => {
            let &[h, w, c] = shape else {
                return Err(format!("conv2d needs an [H, W, C] input, got {shape:?}"));
            };
            if out_channels == 0 {
                return Err("conv2d needs at least one filter".into());
            }
            let (oh, _, _) = conv_output_extent(h, filter_height, stride, padding).map_err(|e| e.to_string())?;
            let (ow, _, _) = conv_output_extent(w, filter_width, stride, padding).map_err(|e| e.to_string())?;
            let area = filter_height * filter_width;
            let weights = xavier_init(
                area * c,
                area * out_channels,
                vec![filter_height, filter_width, c, out_channels],
                derive_seed(seed, &[block_index as u64]),
            )
            .map_err(|e| e.to_string())?;
            let block = ParamBlock::Affine {
                weights,
                bias: Tensor::zeros(vec![out_channels]),
            };
            Ok((vec![oh, ow, out_channels], Some(block)))
        }
        LayerSpec::Batchnorm { epsilon, momentum } => {
            if !(epsilon >= 0.0) || !(momentum > 0.0 && momentum < 1.0) {
                return Err(format!("batchnorm epsilon {epsilon} / momentum {momentum} out of range"));
            }
            let c = *shape.last().expect("non-empty shape");
            Ok((shape.to_vec(), Some(ParamBlock::norm(c))))
        }
        LayerSpec::Relu => Ok((shape.to_vec(), None)),
        LayerSpec::Flatten => Ok((vec![shape.iter().product()], None)),
        LayerSpec::Dense { out_units } => {
            let &[f] = shape else {
                return Err(format!("dense needs a flat input, got {shape:?}"));
            };
            if out_units == 0 {
                return Err("dense needs at least one unit".into());
            }
            let weights = xavier_init(f, out_units, vec![f, out_units], derive_seed(seed, &[block_index as u64]))
                .map_err(|e| e.to_string())?;
            let block = ParamBlock::Affine {
                weights,
                bias: Tensor::zeros(vec![out_units]),
            };
            Ok((vec![out_units], Some(block)))
        }
    }
}

impl ModelGraph {
    /// Builds a trunk shared by every head. `input_shape` is per sample
    /// (`[H, W, C]` for conv stacks, `[F]` for dense stacks).
    pub fn build(
        input_shape: &[usize],
        trunk: &[LayerSpec],
        heads: &[(String, Vec<LayerSpec>)],
        seed: u64,
    ) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Argument(format!("bad input shape {input_shape:?}")));
        }
        let mut params = Vec::new();
        let mut block_names = Vec::new();
        let mut alloc = |prefix: &str, specs: &[LayerSpec], mut shape: Vec<usize>| -> Result<(Vec<Layer>, Vec<usize>)> {
            let mut layers = Vec::with_capacity(specs.len());
            for (i, spec) in specs.iter().enumerate() {
                let label = format!("{prefix}[{i}] {}", spec.name());
                let (next, block) = infer_layer(spec, &shape, seed, params.len())
                    .map_err(|message| Error::Build { layer: label.clone(), message })?;
                let block = block.map(|b| {
                    params.push(b);
                    block_names.push(label);
                    params.len() - 1
                });
                layers.push(Layer {
                    spec: spec.clone(),
                    block,
                });
                shape = next;
            }
            Ok((layers, shape))
        };
        let (trunk_layers, trunk_out) = alloc("trunk", trunk, input_shape.to_vec())?;
        let mut built_heads = Vec::with_capacity(heads.len());
        for (name, specs) in heads {
            let (layers, _) = alloc(name, specs, trunk_out.clone())?;
            built_heads.push(Head {
                name: name.clone(),
                layers,
            });
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            params,
            block_names,
            trunk: trunk_layers,
            heads: built_heads,
            tape: None,
            bn_sums: None,
            adam: None,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn params(&self) -> &[ParamBlock] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.params
    }

    pub fn block_names(&self) -> &[String] {
        &self.block_names
    }

    pub fn trunk(&self) -> &[Layer] {
        &self.trunk
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    /// Blocks referenced by the trunk.
    pub fn trunk_blocks(&self) -> Vec<usize> {
        self.trunk.iter().filter_map(|l| l.block).collect()
    }

    pub fn head_blocks(&self, head: usize) -> Vec<usize> {
        self.heads[head].layers.iter().filter_map(|l| l.block).collect()
    }

    /// Trainable element count; shared blocks are counted once.
    pub fn count_trainable(&self) -> usize {
        self.params.iter().map(ParamBlock::trainable_count).sum()
    }

    pub fn zero_grads(&self) -> Vec<ParamGrad> {
        self.params.iter().map(ParamBlock::zero_grad).collect()
    }

    fn check_input(&self, head: usize, input: &Tensor) -> Result<()> {
        if head >= self.heads.len() {
            return Err(Error::Argument(format!("no head {head}")));
        }
        if input.shape().len() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            return Err(Error::Dimension(format!(
                "input {:?} does not match [N, {:?}]",
                input.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    fn path(&self, head: usize) -> impl Iterator<Item = &Layer> {
        self.trunk.iter().chain(self.heads[head].layers.iter())
    }

    fn apply(spec: &LayerSpec, block: Option<&ParamBlock>, x: Tensor, mode: Mode) -> Result<(Tensor, LayerCache)> {
        let block = || block.ok_or_else(|| Error::State("layer is missing its parameter block".into()));
        Ok(match *spec {
            LayerSpec::Conv2d { stride, padding, .. } => {
                let (y, c) = conv2d_forward(&x, block()?, stride, padding)?;
                (y, LayerCache::Conv(c))
            }
            LayerSpec::Batchnorm { epsilon, .. } => {
                let (y, c) = batchnorm_forward(&x, block()?, epsilon, mode)?;
                (y, LayerCache::Norm(c))
            }
            LayerSpec::Relu => {
                let y = relu(&x);
                (y.clone(), LayerCache::Relu(y))
            }
            LayerSpec::Dense { .. } => {
                let (y, c) = dense_forward(&x, block()?)?;
                (y, LayerCache::Dense(c))
            }
            LayerSpec::Flatten => {
                let shape = x.shape().to_vec();
                let n = shape[0];
                let f = x.len() / n;
                (x.reshape(vec![n, f])?, LayerCache::Flatten(shape))
            }
        })
    }

    /// Inference-mode prediction for one head; touches no state.
    pub fn predict(&self, head: usize, input: &Tensor) -> Result<Tensor> {
        self.check_input(head, input)?;
        let mut x = input.clone();
        for layer in self.path(head) {
            let block = layer.block.map(|b| &self.params[b]);
            x = Self::apply(&layer.spec, block, x, Mode::Infer)?.0;
        }
        x.check_finite("forward pass")?;
        Ok(x)
    }

    fn run(
        &mut self,
        layers: &[Layer],
        mut x: Tensor,
        mode: Mode,
    ) -> Result<(Tensor, Vec<LayerCache>)> {
        let mut caches = Vec::with_capacity(layers.len());
        for layer in layers {
            let block = layer.block.map(|b| &self.params[b]);
            let (y, cache) = Self::apply(&layer.spec, block, x, mode)?;
            if let (LayerCache::Norm(c), LayerSpec::Batchnorm { momentum, .. }, Some(b)) =
                (&cache, &layer.spec, layer.block)
            {
                if let Some(stats) = &c.stats {
                    match &mut self.bn_sums {
                        Some(sums) => {
                            let sum = sums[b].get_or_insert_with(StatSum::default);
                            if sum.batches == 0 {
                                sum.mean = vec![0.0; stats.mean.len()];
                                sum.var = vec![0.0; stats.var.len()];
                            }
                            sum.batches += 1;
                            sum.mean.iter_mut().zip(&stats.mean).for_each(|(a, v)| *a += v);
                            sum.var.iter_mut().zip(&stats.var).for_each(|(a, v)| *a += v);
                        }
                        None => stats.update_running(&mut self.params[b], *momentum)?,
                    }
                }
            }
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Forward pass recording the caches [`ModelGraph::backward`] needs.
    /// In train mode batchnorm uses batch statistics and folds them into
    /// the running statistics.
    pub fn forward(&mut self, head: usize, input: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.forward_joint(&[(head, input)], mode)?.remove(0))
    }

    /// Forward pass of several heads at once: the inputs are stacked into
    /// one trunk batch (so train-mode batchnorm in the trunk sees every
    /// row), then each head runs on its own rows.
    pub fn forward_joint(&mut self, inputs: &[(usize, &Tensor)], mode: Mode) -> Result<Vec<Tensor>> {
        self.tape = None;
        if inputs.is_empty() {
            return Err(Error::Argument("forward needs at least one input".into()));
        }
        for (i, &(head, x)) in inputs.iter().enumerate() {
            self.check_input(head, x)?;
            if inputs[..i].iter().any(|(h, _)| *h == head) {
                return Err(Error::Argument(format!("head {head} given twice")));
            }
        }
        let stacked = concat_rows(&inputs.iter().map(|(_, x)| *x).collect::<Vec<_>>())?;
        let trunk_layers = self.trunk.clone();
        let (features, trunk) = self.run(&trunk_layers, stacked, mode)?;
        let trunk_out_shape = features.shape().to_vec();
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut heads = Vec::with_capacity(inputs.len());
        let mut start = 0;
        for &(head, x) in inputs {
            let rows = start..start + x.batch();
            start = rows.end;
            let part = slice_rows(&features, rows.clone())?;
            let layers = self.heads[head].layers.clone();
            let (y, caches) = self.run(&layers, part, mode)?;
            y.check_finite("forward pass")?;
            outputs.push(y);
            heads.push(HeadTape { head, rows, caches });
        }
        self.tape = Some(Tape {
            trunk,
            trunk_out_shape,
            heads,
        });
        Ok(outputs)
    }

    fn back(
        &self,
        layers: &[Layer],
        caches: &[LayerCache],
        mut g: Tensor,
        grads: &mut [ParamGrad],
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
            let want_dx = i > 0 || need_input_grad;
            let block = layer.block;
            match cache {
                LayerCache::Conv(c) => {
                    let b = block.expect("conv block");
                    let (dx, dw, db) = conv2d_backward(c, &self.params[b], &g, want_dx)?;
                    accumulate(&mut grads[b], &dw, &db);
                    match dx {
                        Some(dx) => g = dx,
                        None => return Ok(None),
                    }
                }
                LayerCache::Norm(c) => {
                    let b = block.expect("batchnorm block");
                    let (dx, dgamma, dbeta) = batchnorm_backward(c, &self.params[b], &g)?;
                    accumulate(&mut grads[b], &dgamma, &dbeta);
                    g = dx;
                }
                LayerCache::Relu(y) => g = relu_backward(y, &g),
                LayerCache::Dense(c) => {
                    let b = block.expect("dense block");
                    let (dx, dw, db) = dense_backward(c, &self.params[b], &g, want_dx)?;
                    accumulate(&mut grads[b], &dw, &db);
                    match dx {
                        Some(dx) => g = dx,
                        None => return Ok(None),
                    }
                }
                LayerCache::Flatten(shape) => g = g.reshape(shape.clone())?,
            }
        }
        Ok(need_input_grad.then_some(g))
    }

    /// Reverse pass for a single-head forward.
    pub fn backward(
        &mut self,
        head: usize,
        grad_out: &Tensor,
        grads: &mut [ParamGrad],
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        self.backward_joint(&[(head, Some(grad_out))], grads, need_input_grad)
    }

    /// Reverse pass after [`ModelGraph::forward_joint`], adding parameter
    /// gradients into `grads` and consuming the forward cache. Heads given
    /// `None` (or left out) contribute a zero output gradient and their
    /// own layers are skipped; the trunk still runs over every row. Returns
    /// the gradient of the stacked input when requested.
    pub fn backward_joint(
        &mut self,
        grads_out: &[(usize, Option<&Tensor>)],
        grads: &mut [ParamGrad],
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        if grads.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "{} gradient slots for {} parameter blocks",
                grads.len(),
                self.params.len()
            )));
        }
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("no forward cache; run forward first".into()))?;
        for (head, _) in grads_out {
            if !tape.heads.iter().any(|h| h.head == *head) {
                let name = self.heads.get(*head).map_or("?", |h| h.name.as_str());
                return Err(Error::State(format!("no forward cache for head '{name}'")));
            }
        }
        let total = tape.trunk_out_shape[0];
        let per_row: usize = tape.trunk_out_shape[1..].iter().product();
        let mut trunk_grad = vec![0.0; total * per_row];
        let mut any = false;
        for ht in &tape.heads {
            let Some(g) = grads_out.iter().find(|(h, _)| *h == ht.head).and_then(|(_, g)| *g) else {
                continue;
            };
            if g.batch() != ht.rows.len() {
                return Err(Error::Dimension(format!(
                    "gradient for {} rows, head produced {}",
                    g.batch(),
                    ht.rows.len()
                )));
            }
            any = true;
            let layers = self.heads[ht.head].layers.clone();
            let dx = self
                .back(&layers, &ht.caches, g.clone(), grads, true)?
                .expect("input gradient requested");
            trunk_grad[ht.rows.start * per_row..ht.rows.end * per_row].copy_from_slice(dx.data());
        }
        if !any {
            return Ok(None);
        }
        let g = Tensor::new(tape.trunk_out_shape.clone(), trunk_grad)?;
        let trunk_layers = self.trunk.clone();
        if trunk_layers.is_empty() {
            return Ok(need_input_grad.then_some(g));
        }
        self.back(&trunk_layers, &tape.trunk, g, grads, need_input_grad)
    }

    /// Replaces every batchnorm running statistic with the average of the
    /// train-mode batch statistics over `batches`. Each batch is a
    /// [`ModelGraph::forward_joint`] input list; parameters are untouched.
    pub fn reestimate_batchnorm<'a, I>(&mut self, batches: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<(usize, &'a Tensor)>>,
    {
        self.bn_sums = Some(vec![None; self.params.len()]);
        let run = || -> Result<()> {
            for batch in batches {
                self.forward_joint(&batch, Mode::Train)?;
            }
            Ok(())
        };
        let outcome = run();
        self.tape = None;
        let sums = self.bn_sums.take().expect("set above");
        outcome?;
        for (block, sum) in self.params.iter_mut().zip(sums) {
            let (Some(sum), ParamBlock::Norm { running_mean, running_var, .. }) = (sum, block) else {
                continue;
            };
            let n = sum.batches as f64;
            running_mean.iter_mut().zip(&sum.mean).for_each(|(r, s)| *r = s / n);
            running_var.iter_mut().zip(&sum.var).for_each(|(r, s)| *r = s / n);
        }
        Ok(())
    }

    pub fn init_adam(&mut self, lr: f64) {
        self.adam = Some(AdamState::new(&self.params, lr));
    }

    pub fn adam_update(&mut self, grads: &[ParamGrad]) -> Result<()> {
        let state = self
            .adam
            .as_mut()
            .ok_or_else(|| Error::State("optimizer not initialized".into()))?;
        adam_step(&mut self.params, grads, state)
    }
}

fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.len() == 1 {
        return Ok(parts[0].clone());
    }
    let mut shape = parts[0].shape().to_vec();
    shape[0] = parts.iter().map(|t| t.batch()).sum();
    let mut data = Vec::with_capacity(parts.iter().map(|t| t.len()).sum());
    for t in parts {
        data.extend_from_slice(t.data());
    }
    Tensor::new(shape, data)
}

fn slice_rows(t: &Tensor, rows: std::ops::Range<usize>) -> Result<Tensor> {
    if rows.start == 0 && rows.end == t.batch() {
        return Ok(t.clone());
    }
    let per = t.len() / t.batch();
    let mut shape = t.shape().to_vec();
    shape[0] = rows.len();
    Tensor::new(shape, t.data()[rows.start * per..rows.end * per].to_vec())
}

fn accumulate(slot: &mut ParamGrad, dw: &[f64], db: &[f64]) {
    for (a, b) in slot.weights.iter_mut().zip(dw) {
        *a += b;
    }
    for (a, b) in slot.bias.iter_mut().zip(db) {
        *a += b;
    }
}
