//! Finite-difference gradient checking and naive nested-loop references
//! shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use yieldnet::model::{CropBatch, LossContext, YieldNet};
use yieldnet::tensor::{LayerSpec, Mode, ModelGraph, Padding, ParamBlock, Tensor};

pub const FD_STEP: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Relative error with a floor so that tiny gradients compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Gives every trainable value (and batchnorm running statistics) a
/// random, well-conditioned value.
pub fn randomize_params(graph: &mut ModelGraph, rng: &mut ChaCha8Rng) {
    for block in graph.params_mut() {
        match block {
            ParamBlock::Affine { weights, bias } => {
                weights.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
                bias.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
            ParamBlock::Norm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                gamma.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
                beta.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
                running_mean.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
                running_var.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
            }
        }
    }
}

/// `sum(c * y) + 0.5 * sum(y^2)` and its gradient.
fn probe_loss(y: &Tensor, coef: &[f64]) -> (f64, Tensor) {
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(y.len());
    for (v, c) in y.data().iter().zip(coef) {
        value += c * v + 0.5 * v * v;
        grad.push(c + v);
    }
    (value, Tensor::new(y.shape().to_vec(), grad).unwrap())
}

/// Builds a head-only graph from `specs` and returns the worst relative error over every trainable value
/// and every input element.
pub fn layer_grad_error(input_shape: &[usize], batch: usize, specs: Vec<LayerSpec>, mode: Mode, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut graph = ModelGraph::build(input_shape, &[], &[("probe".into(), specs)], seed).unwrap();
    randomize_params(&mut graph, &mut r);
    let mut shape = vec![batch];
    shape.extend_from_slice(input_shape);
    let x = random_tensor(&mut r, shape);
    let y = graph.forward(0, &x, mode).unwrap();
    let coef: Vec<f64> = (0..y.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let (_, g) = probe_loss(&y, &coef);
    let mut grads = graph.zero_grads();
    let dx = graph.backward(0, &g, &mut grads, true).unwrap().unwrap();

    let eval = |graph: &mut ModelGraph, x: &Tensor| probe_loss(&graph.forward(0, x, mode).unwrap(), &coef).0;
    let mut worst: f64 = 0.0;
    for b in 0..graph.params().len() {
        for part in 0..2 {
            let n = {
                let (w, bias) = graph.params()[b].trainable();
                if part == 0 { w.len() } else { bias.len() }
            };
            for i in 0..n {
                let analytic = if part == 0 { grads[b].weights[i] } else { grads[b].bias[i] };
                let orig = {
                    let (w, bias) = graph.params()[b].trainable();
                    if part == 0 { w[i] } else { bias[i] }
                };
                let numeric = derivative(|d| {
                    let (w, bias) = graph.params_mut()[b].trainable_mut();
                    if part == 0 { w[i] = orig + d } else { bias[i] = orig + d }
                    eval(&mut graph, &x)
                });
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
    }
    for i in 0..x.len() {
        let numeric = derivative(|d| {
            let mut xp = x.clone();
            xp.data_mut()[i] += d;
            eval(&mut graph, &xp)
        });
        worst = worst.max(rel_err(dx.data()[i], numeric));
    }
    worst
}

/// Fourth-order central difference of `f` at zero offset.
pub fn derivative(mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = FD_STEP;
    let v = (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
    f(0.0);
    v
}

/// Worst relative error of the model's analytic loss gradient against
/// central differences over every trainable value. `corn`/`soy` select
/// which batches feed the loss.
pub fn model_grad_error(
    model: &mut YieldNet,
    corn: Option<&CropBatch>,
    soy: Option<&CropBatch>,
    ctx: &LossContext,
    mode: Mode,
) -> f64 {
    let (_, grads) = model.loss_and_grads(corn, soy, ctx, mode).unwrap();
    let eval = |m: &mut YieldNet| m.loss_and_grads(corn, soy, ctx, mode).unwrap().0.value;
    let mut worst: f64 = 0.0;
    for b in 0..model.graph().params().len() {
        for part in 0..2 {
            let n = {
                let (w, bias) = model.graph().params()[b].trainable();
                if part == 0 { w.len() } else { bias.len() }
            };
            for i in 0..n {
                let analytic = if part == 0 { grads[b].weights[i] } else { grads[b].bias[i] };
                let orig = {
                    let (w, bias) = model.graph().params()[b].trainable();
                    if part == 0 { w[i] } else { bias[i] }
                };
                let numeric = derivative(|d| {
                    let (w, bias) = model.graph_mut().params_mut()[b].trainable_mut();
                    if part == 0 { w[i] = orig + d } else { bias[i] = orig + d }
                    eval(model)
                });
                worst = worst.max(rel_err(analytic, numeric));
            }
        }
    }
    worst
}

/// Output extent and leading pad computed from first principles.
pub fn naive_extent(input: usize, filter: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => (input >= filter).then(|| ((input - filter) / stride + 1, 0)),
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + filter).saturating_sub(input);
            Some((out, total / 2))
        }
    }
}

/// Direct convolution over NHWC input with `[kh, kw, cin, cout]` weights.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, padding: Padding) -> Option<Tensor> {
    let &[n, h, wd, cin] = x.shape() else { panic!("NHWC input") };
    let &[kh, kw, _, cout] = w.shape() else { panic!("4-D weights") };
    let (oh, top) = naive_extent(h, kh, stride, padding)?;
    let (ow, left) = naive_extent(wd, kw, stride, padding)?;
    let xi = |a: usize, i: usize, j: usize, c: usize| x.data()[((a * h + i) * wd + j) * cin + c];
    let wi = |i: usize, j: usize, c: usize, o: usize| w.data()[((i * kw + j) * cin + c) * cout + o];
    let mut out = Vec::with_capacity(n * oh * ow * cout);
    for a in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for o in 0..cout {
                    let mut acc = b[o];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - top as isize;
                            let ix = (ox * stride + kx) as isize - left as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            for c in 0..cin {
                                acc += xi(a, iy as usize, ix as usize, c) * wi(ky, kx, c, o);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Some(Tensor::new(vec![n, oh, ow, cout], out).unwrap())
}

/// Per-channel normalization over every leading position. Train mode
/// uses the population variance of the batch.
pub fn naive_batchnorm(x: &Tensor, block: &ParamBlock, eps: f64, mode: Mode) -> Tensor {
    let ParamBlock::Norm {
        gamma,
        beta,
        running_mean,
        running_var,
    } = block
    else {
        panic!("norm block")
    };
    let c = x.channels();
    let m = x.len() / c;
    let mut out = x.data().to_vec();
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = (0..m).map(|i| x.data()[i * c + ch]).sum::<f64>() / m as f64;
                let var = (0..m).map(|i| (x.data()[i * c + ch] - mean).powi(2)).sum::<f64>() / m as f64;
                (mean, var)
            }
            Mode::Infer => (running_mean[ch], running_var[ch]),
        };
        for i in 0..m {
            let v = &mut out[i * c + ch];
            *v = gamma[ch] * (*v - mean) / (var + eps).sqrt() + beta[ch];
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

pub fn naive_dense(x: &Tensor, w: &Tensor, b: &[f64]) -> Tensor {
    let &[n, f] = x.shape() else { panic!("[N, F] input") };
    let u = b.len();
    let mut out = vec![0.0; n * u];
    for i in 0..n {
        for j in 0..u {
            let mut acc = b[j];
            for k in 0..f {
                acc += x.data()[i * f + k] * w.data()[k * u + j];
            }
            out[i * u + j] = acc;
        }
    }
    Tensor::new(vec![n, u], out).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solves `a x = b` (row-major `n × n`) by Gaussian elimination with
/// partial pivoting.
pub fn gauss_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x
}

/// Ridge on column-standardized features via the normal equations,
/// mapped back to raw units: returns (weights, intercept).
pub fn naive_ridge(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let n = rows.len();
    let f = rows[0].len();
    let mean: Vec<f64> = (0..f).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let scale: Vec<f64> = (0..f)
        .map(|j| {
            let s = (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64).sqrt();
            if s > 1e-12 { s } else { 1.0 }
        })
        .collect();
    let z: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| (0..f).map(|j| (r[j] - mean[j]) / scale[j]).collect())
        .collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut a = vec![0.0; f * f];
    let mut rhs = vec![0.0; f];
    for (zi, yi) in z.iter().zip(y) {
        for j in 0..f {
            rhs[j] += zi[j] * (yi - y_mean);
            for k in 0..f {
                a[j * f + k] += zi[j] * zi[k];
            }
        }
    }
    for j in 0..f {
        a[j * f + j] += lambda;
    }
    let w = gauss_solve(a, rhs, f);
    let weights: Vec<f64> = w.iter().zip(&scale).map(|(w, s)| w / s).collect();
    let intercept = y_mean - weights.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
    (weights, intercept)
}

/// Random corn and soybean batches for `YieldNetConfig::tiny()`, one soy
/// sample unlabeled, and a loss context near the label scale.
pub fn tiny_batches(seed: u64) -> (CropBatch, CropBatch, LossContext) {
    let mut r = rng(seed);
    let mut batch = |n: usize, base: f64, unlabeled: Option<usize>| {
        let x = random_tensor(&mut r, vec![n, 4, 5, 2]);
        let labels = (0..n)
            .map(|i| (Some(i) != unlabeled).then(|| base * r.random_range(0.5..1.5)))
            .collect();
        CropBatch::new(x, labels).unwrap()
    };
    let corn = batch(4, 1.5, None);
    let soy = batch(3, 0.5, Some(1));
    (corn, soy, LossContext::new(1.5, 0.5).unwrap())
}
