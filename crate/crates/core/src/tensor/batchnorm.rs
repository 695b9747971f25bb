use super::{Mode, ParamBlock, Tensor};
use crate::error::{Error, Result};

/// Per-channel batch mean and population variance from a train-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchStats {
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn update_running(&self, params: &mut ParamBlock, momentum: f64) -> Result<()> {
        let ParamBlock::Norm {
            running_mean,
            running_var,
            ..
        } = params
        else {
            return Err(Error::Argument("batchnorm needs gamma/beta parameters".into()));
        };
        for (r, b) in running_mean.iter_mut().zip(&self.mean) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        for (r, b) in running_var.iter_mut().zip(&self.var) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    mode: Mode,
    /// Present in train mode only.
    pub stats: Option<BatchStats>,
}

fn norm_parts(params: &ParamBlock) -> Result<(&[f64], &[f64], &[f64], &[f64])> {
    match params {
        ParamBlock::Norm {
            gamma,
            beta,
            running_mean,
            running_var,
        } => Ok((gamma, beta, running_mean, running_var)),
        ParamBlock::Affine { .. } => Err(Error::Argument(
            "batchnorm needs gamma/beta parameters, got weight/bias parameters".into(),
        )),
    }
}

/// Normalizes each channel (trailing axis) and applies the affine
/// transform. Running statistics are not touched; train mode returns the
/// batch statistics in the cache.
pub fn batchnorm_forward(
    input: &Tensor,
    params: &ParamBlock,
    epsilon: f64,
    mode: Mode,
) -> Result<(Tensor, BatchNormCache)> {
    let (gamma, beta, running_mean, running_var) = norm_parts(params)?;
    let c = input.channels();
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Dimension(format!(
            "batchnorm has {} channels of parameters for an input with {c} channels",
            gamma.len()
        )));
    }
    let x = input.data();
    let m = x.len() / c;

    let (mean, var, stats) = match mode {
        Mode::Train => {
            if m < 2 {
                return Err(Error::Dimension(format!(
                    "train-mode batchnorm needs at least 2 values per channel, got {m}"
                )));
            }
            let mut mean = vec![0.0; c];
            for row in x.chunks_exact(c) {
                for (s, v) in mean.iter_mut().zip(row) {
                    *s += v;
                }
            }
            mean.iter_mut().for_each(|s| *s /= m as f64);
            let mut var = vec![0.0; c];
            for row in x.chunks_exact(c) {
                for ((s, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - mu) * (v - mu);
                }
            }
            var.iter_mut().for_each(|s| *s /= m as f64);
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
            };
            (mean, var, Some(stats))
        }
        Mode::Infer => (running_mean.to_vec(), running_var.to_vec(), None),
    };

    let mut inv_std = Vec::with_capacity(c);
    for (ch, v) in var.iter().enumerate() {
        let denom = v + epsilon;
        if denom <= 0.0 {
            return Err(Error::Numeric(format!(
                "batchnorm channel {ch} has zero variance and epsilon {epsilon}"
            )));
        }
        inv_std.push(1.0 / denom.sqrt());
    }

    let mut xhat = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(c) {
        for ch in 0..c {
            let h = (row[ch] - mean[ch]) * inv_std[ch];
            xhat.push(h);
            out.push(gamma[ch] * h + beta[ch]);
        }
    }
    let out = Tensor::new(input.shape().to_vec(), out)?;
    Ok((
        out,
        BatchNormCache {
            xhat,
            inv_std,
            shape: input.shape().to_vec(),
            mode,
            stats,
        },
    ))
}

/// Forward pass that also folds train-mode batch statistics into the
/// running statistics.
pub fn batchnorm(
    input: &Tensor,
    params: &mut ParamBlock,
    epsilon: f64,
    momentum: f64,
    mode: Mode,
) -> Result<Tensor> {
    let (out, cache) = batchnorm_forward(input, params, epsilon, mode)?;
    if let Some(stats) = &cache.stats {
        stats.update_running(params, momentum)?;
    }
    Ok(out)
}

/// Returns (input gradient, gamma gradient, beta gradient).
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    params: &ParamBlock,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let (gamma, ..) = norm_parts(params)?;
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::Dimension(format!(
            "batchnorm output gradient {:?} does not match forward shape {:?}",
            grad_out.shape(),
            cache.shape
        )));
    }
    let c = gamma.len();
    let dy = grad_out.data();
    let m = dy.len() / c;

    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (row, hrow) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
        for ch in 0..c {
            dbeta[ch] += row[ch];
            dgamma[ch] += row[ch] * hrow[ch];
        }
    }

    let mut dx = Vec::with_capacity(dy.len());
    match cache.mode {
        Mode::Train => {
            let mf = m as f64;
            for (row, hrow) in dy.chunks_exact(c).zip(cache.xhat.chunks_exact(c)) {
                for ch in 0..c {
                    let scale = gamma[ch] * cache.inv_std[ch] / mf;
                    dx.push(scale * (mf * row[ch] - dbeta[ch] - hrow[ch] * dgamma[ch]));
                }
            }
        }
        Mode::Infer => {
            for row in dy.chunks_exact(c) {
                for ch in 0..c {
                    dx.push(row[ch] * gamma[ch] * cache.inv_std[ch]);
                }
            }
        }
    }
    Ok((Tensor::new(cache.shape.clone(), dx)?, dgamma, dbeta))
}
