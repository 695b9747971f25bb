use super::dataset::{Dataset, Sample};
use crate::crop::{Crop, PerCrop};
use crate::error::{Error, Result};
use crate::model::{stack_cubes, CropBatch, LossContext, StepLoss, YieldNet};
use crate::raster::{apply_cutoff, Cutoff, HistogramCube};
use crate::seed::rng_for;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::borrow::Cow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Give every sample a random cutoff (or none) each epoch.
    pub augment_cutoffs: bool,
    /// After the last step, reset batchnorm running statistics to the
    /// average batch statistics over one more epoch of batches.
    pub refresh_batchnorm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            batch_size: 32,
            iterations: 4000,
            seed: 0,
            augment_cutoffs: true,
            refresh_batchnorm: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Argument(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Argument("batch size must be at least 2".into()));
        }
        Ok(())
    }

    /// Labeled samples each crop is guaranteed per batch.
    pub fn min_labeled(&self) -> usize {
        (self.batch_size / 4).max(1)
    }
}

/// A non-finite activation during training means the run diverged.
pub(crate) fn diverged(e: Error, iteration: usize) -> Error {
    match e {
        Error::Numeric(_) => Error::NonFiniteLoss { iteration },
        e => e,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepLoss>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }

    pub fn initial(&self) -> Option<f64> {
        self.steps.first().map(|s| s.value)
    }

    /// Mean loss over the last `window` iterations.
    pub fn final_mean(&self, window: usize) -> Option<f64> {
        let n = self.steps.len();
        let w = window.clamp(1, n.max(1));
        (n > 0).then(|| self.steps[n - w..].iter().map(|s| s.value).sum::<f64>() / w as f64)
    }
}

/// Shuffled epochs of sample indices, topped up so each batch carries
/// enough labeled samples of every trained crop.
struct Batcher {
    rng: ChaCha8Rng,
    crops: Vec<Crop>,
    n: usize,
    batch: usize,
    min_labeled: PerCrop<usize>,
    labeled_pool: PerCrop<Vec<usize>>,
    labeled: PerCrop<Vec<bool>>,
    queue: Vec<usize>,
    cutoffs: Vec<Option<Cutoff>>,
    augment: bool,
}

impl Batcher {
    fn new(ds: &Dataset, crops: &[Crop], cfg: &TrainConfig) -> Result<Self> {
        let labeled = PerCrop::from_fn(|c| ds.samples().iter().map(|s| s.label(c).is_some()).collect::<Vec<_>>());
        let labeled_pool = labeled.clone().map(|_, flags| {
            flags
                .iter()
                .enumerate()
                .filter_map(|(i, f)| f.then_some(i))
                .collect::<Vec<_>>()
        });
        for &c in crops {
            if labeled_pool.get(c).is_empty() {
                return Err(Error::Argument(format!("training set has no labeled {c} samples")));
            }
        }
        let batch = cfg.batch_size.min(ds.len());
        let min_labeled = labeled_pool
            .clone()
            .map(|_, pool| cfg.min_labeled().min(pool.len()).min(batch));
        Ok(Self {
            rng: rng_for(cfg.seed, &[0x7472_6169_6e]),
            crops: crops.to_vec(),
            n: ds.len(),
            batch,
            min_labeled,
            labeled_pool,
            labeled,
            queue: Vec::new(),
            cutoffs: vec![None; ds.len()],
            augment: cfg.augment_cutoffs,
        })
    }

    fn new_epoch(&mut self) {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut self.rng);
        // Consumed from the back.
        order.reverse();
        self.queue = order;
        if self.augment {
            for c in self.cutoffs.iter_mut() {
                let pick = self.rng.random_range(0..=Cutoff::ALL.len());
                *c = Cutoff::ALL.get(pick).copied();
            }
        }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.queue.len() < self.batch {
            self.new_epoch();
        }
        let mut idx: Vec<usize> = (0..self.batch).map(|_| self.queue.pop().expect("queue refilled")).collect();
        for ci in 0..self.crops.len() {
            let crop = self.crops[ci];
            let flags = self.labeled.get(crop);
            let mut have = idx.iter().filter(|&&i| flags[i]).count();
            let need = *self.min_labeled.get(crop);
            let mut slot = idx.len();
            while have < need && slot > 0 {
                slot -= 1;
                let i = idx[slot];
                if flags[i] || self.crops[..ci].iter().any(|&c| self.labeled.get(c)[i]) {
                    continue;
                }
                let pool = self.labeled_pool.get(crop);
                let pick = pool[self.rng.random_range(0..pool.len())];
                if idx.contains(&pick) {
                    slot += 1;
                    continue;
                }
                idx[slot] = pick;
                have += 1;
            }
        }
        idx
    }
}

fn batch_for<'a>(
    samples: &'a [Sample],
    idx: &[usize],
    cutoffs: &[Option<Cutoff>],
    crop: Crop,
) -> Result<Option<CropBatch>> {
    let mut cubes: Vec<Cow<'a, HistogramCube>> = Vec::new();
    let mut labels = Vec::new();
    for &i in idx {
        if let Some(obs) = samples[i].observation(crop) {
            cubes.push(match cutoffs[i] {
                Some(c) => Cow::Owned(apply_cutoff(&obs.cube, c)),
                None => Cow::Borrowed(&obs.cube),
            });
            labels.push(obs.yield_value);
        }
    }
    if cubes.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&HistogramCube> = cubes.iter().map(|c| c.as_ref()).collect();
    Ok(Some(CropBatch::new(stack_cubes(&refs)?, labels)?))
}

/// Runs `cfg.iterations` Adam steps. The loss context comes from the
/// training set. Aborts with the iteration index on a non-finite loss.
pub fn train(model: &mut YieldNet, train_set: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    let ctx = train_set.loss_context()?;
    train_with_context(model, train_set, cfg, &ctx)
}

pub fn train_with_context(
    model: &mut YieldNet,
    train_set: &Dataset,
    cfg: &TrainConfig,
    ctx: &LossContext,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let crops = model.crops();
    let mut batcher = Batcher::new(train_set, &crops, cfg)?;
    if model.graph().adam.is_none() {
        model.graph_mut().init_adam(cfg.lr);
    }
    let mut history = TrainHistory {
        steps: Vec::with_capacity(cfg.iterations),
    };
    let next_batches = |batcher: &mut Batcher| -> Result<(Option<CropBatch>, Option<CropBatch>)> {
        let idx = batcher.next();
        let batches = PerCrop::from_fn(|c| {
            if crops.contains(&c) {
                batch_for(train_set.samples(), &idx, &batcher.cutoffs, c)
            } else {
                Ok(None)
            }
        });
        Ok((batches.corn?, batches.soybean?))
    };
    for iteration in 0..cfg.iterations {
        let (corn, soy) = next_batches(&mut batcher)?;
        let (step, grads) = model
            .loss_and_grads(corn.as_ref(), soy.as_ref(), ctx, crate::tensor::Mode::Train)
            .map_err(|e| diverged(e, iteration))?;
        if !step.value.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        model.graph_mut().adam_update(&grads)?;
        history.steps.push(step);
    }
    if cfg.refresh_batchnorm && cfg.iterations > 0 {
        let epoch = train_set.len().div_ceil(batcher.batch);
        let batches = (0..epoch).map(|_| next_batches(&mut batcher)).collect::<Result<Vec<_>>>()?;
        model.reestimate_batchnorm(&batches)?;
    }
    Ok(history)
}
