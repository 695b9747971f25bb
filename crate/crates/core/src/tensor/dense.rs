use super::{gemm, ParamBlock, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Tensor,
}

fn parts<'a>(input: &Tensor, params: &'a ParamBlock) -> Result<(&'a Tensor, &'a Tensor, usize, usize, usize)> {
    let ParamBlock::Affine { weights, bias } = params else {
        return Err(Error::Argument("dense needs weight/bias parameters".into()));
    };
    let &[n, f] = input.shape() else {
        return Err(Error::Dimension(format!(
            "dense input must be [N, F], got {:?}",
            input.shape()
        )));
    };
    let &[wf, u] = weights.shape() else {
        return Err(Error::Dimension(format!(
            "dense weights must be [F, U], got {:?}",
            weights.shape()
        )));
    };
    if wf != f {
        return Err(Error::Dimension(format!(
            "dense input has {f} features but weights expect {wf}"
        )));
    }
    if bias.len() != u {
        return Err(Error::Dimension(format!(
            "dense bias has {} entries for {u} units",
            bias.len()
        )));
    }
    Ok((weights, bias, n, f, u))
}

/// `x · W + b` for `x: [N, F]`, `W: [F, U]`.
pub fn dense_forward(input: &Tensor, params: &ParamBlock) -> Result<(Tensor, DenseCache)> {
    let (weights, bias, n, f, u) = parts(input, params)?;
    let mut out = Vec::with_capacity(n * u);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(n, f, u, input.data(), false, weights.data(), false, &mut out, true);
    Ok((
        Tensor::new(vec![n, u], out)?,
        DenseCache {
            input: input.clone(),
        },
    ))
}

pub fn dense(input: &Tensor, params: &ParamBlock) -> Result<Tensor> {
    dense_forward(input, params).map(|(out, _)| out)
}

/// Returns (input gradient if requested, weight gradient, bias gradient).
pub fn dense_backward(
    cache: &DenseCache,
    params: &ParamBlock,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<(Option<Tensor>, Vec<f64>, Vec<f64>)> {
    let (weights, _, n, f, u) = parts(&cache.input, params)?;
    if grad_out.shape() != [n, u] {
        return Err(Error::Dimension(format!(
            "dense output gradient {:?} does not match [{n}, {u}]",
            grad_out.shape()
        )));
    }
    let dy = grad_out.data();
    let mut dw = vec![0.0; f * u];
    gemm(f, n, u, cache.input.data(), true, dy, false, &mut dw, false);
    let mut db = vec![0.0; u];
    for row in dy.chunks_exact(u) {
        for (b, v) in db.iter_mut().zip(row) {
            *b += v;
        }
    }
    let dx = if need_input_grad {
        let mut dx = vec![0.0; n * f];
        gemm(n, u, f, dy, false, weights.data(), true, &mut dx, false);
        Some(Tensor::new(vec![n, f], dx)?)
    } else {
        None
    };
    Ok((dx, dw, db))
}
