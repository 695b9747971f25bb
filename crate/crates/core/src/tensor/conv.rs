use super::{gemm, ParamBlock, Tensor};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    Same,
}

/// Output extent and (before, after) zero padding along one spatial axis.
///
/// `Same` pads symmetrically; an odd total puts the extra pixel after
/// (bottom/right).
pub fn conv_output_extent(
    input: usize,
    filter: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, usize)> {
    if stride == 0 {
        return Err(Error::Argument("stride must be positive".into()));
    }
    if filter == 0 {
        return Err(Error::Argument("filter extent must be positive".into()));
    }
    match padding {
        Padding::Valid => {
            if input < filter {
                return Err(Error::Dimension(format!(
                    "filter extent {filter} exceeds input extent {input} under valid padding"
                )));
            }
            Ok(((input - filter) / stride + 1, 0, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + filter).saturating_sub(input);
            Ok((out, total / 2, total - total / 2))
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    in_h: usize,
    in_w: usize,
    cin: usize,
    out_h: usize,
    out_w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Input row/col for an output coordinate and filter tap, or `None`
    /// when the tap falls in the zero padding.
    #[inline]
    fn source(&self, out: usize, tap: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + tap).checked_sub(pad)?;
        (pos < extent).then_some(pos)
    }
}

/// Saved state for [`conv2d_backward`]: the unfolded input patches.
#[derive(Clone, Debug)]
pub struct ConvCache {
    cols: Vec<f64>,
    geometry: Geometry,
}

fn affine_parts(params: &ParamBlock) -> Result<(&Tensor, &Tensor)> {
    match params {
        ParamBlock::Affine { weights, bias } => Ok((weights, bias)),
        ParamBlock::Norm { .. } => Err(Error::Argument(
            "conv2d needs weight/bias parameters, got batchnorm parameters".into(),
        )),
    }
}

fn geometry(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize, padding: Padding) -> Result<Geometry> {
    if stride == 0 {
        return Err(Error::Argument("stride must be positive".into()));
    }
    let &[batch, in_h, in_w, cin] = input.shape() else {
        return Err(Error::Dimension(format!(
            "conv2d input must be [N, H, W, C], got {:?}",
            input.shape()
        )));
    };
    let &[kh, kw, wcin, cout] = weights.shape() else {
        return Err(Error::Dimension(format!(
            "conv2d weights must be [kh, kw, cin, cout], got {:?}",
            weights.shape()
        )));
    };
    if wcin != cin {
        return Err(Error::Dimension(format!(
            "conv2d input has {cin} channels but weights expect {wcin}"
        )));
    }
    if bias.len() != cout {
        return Err(Error::Dimension(format!(
            "conv2d bias has {} entries for {cout} filters",
            bias.len()
        )));
    }
    let (out_h, pad_top, _) = conv_output_extent(in_h, kh, stride, padding)?;
    let (out_w, pad_left, _) = conv_output_extent(in_w, kw, stride, padding)?;
    Ok(Geometry {
        batch,
        in_h,
        in_w,
        cin,
        out_h,
        out_w,
        cout,
        kh,
        kw,
        stride,
        pad_top,
        pad_left,
    })
}

fn im2col(input: &[f64], g: &Geometry) -> Vec<f64> {
    let patch = g.patch();
    let mut cols = vec![0.0; g.rows() * patch];
    let mut row = 0;
    for n in 0..g.batch {
        let image = &input[n * g.in_h * g.in_w * g.cin..(n + 1) * g.in_h * g.in_w * g.cin];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) else {
                            continue;
                        };
                        let src = (iy * g.in_w + ix) * g.cin;
                        let off = (ky * g.kw + kx) * g.cin;
                        dst[off..off + g.cin].copy_from_slice(&image[src..src + g.cin]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], g: &Geometry) -> Vec<f64> {
    let patch = g.patch();
    let mut out = vec![0.0; g.batch * g.in_h * g.in_w * g.cin];
    let mut row = 0;
    for n in 0..g.batch {
        let image = &mut out[n * g.in_h * g.in_w * g.cin..(n + 1) * g.in_h * g.in_w * g.cin];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let src = &dcols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) else {
                            continue;
                        };
                        let dst = (iy * g.in_w + ix) * g.cin;
                        let off = (ky * g.kw + kx) * g.cin;
                        for (d, s) in image[dst..dst + g.cin].iter_mut().zip(&src[off..off + g.cin]) {
                            *d += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// 2-D convolution over an NHWC tensor, returning the cache needed for
/// the backward pass.
pub fn conv2d_forward(
    input: &Tensor,
    params: &ParamBlock,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor, ConvCache)> {
    let (weights, bias) = affine_parts(params)?;
    let g = geometry(input, weights, bias, stride, padding)?;
    let cols = im2col(input.data(), &g);
    let rows = g.rows();
    let mut out = Vec::with_capacity(rows * g.cout);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    gemm(rows, g.patch(), g.cout, &cols, false, weights.data(), false, &mut out, true);
    let out = Tensor::new(vec![g.batch, g.out_h, g.out_w, g.cout], out)?;
    Ok((out, ConvCache { cols, geometry: g }))
}

pub fn conv2d(input: &Tensor, params: &ParamBlock, stride: usize, padding: Padding) -> Result<Tensor> {
    conv2d_forward(input, params, stride, padding).map(|(out, _)| out)
}

/// Returns (input gradient if requested, weight gradient, bias gradient).
pub fn conv2d_backward(
    cache: &ConvCache,
    params: &ParamBlock,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<(Option<Tensor>, Vec<f64>, Vec<f64>)> {
    let (weights, _) = affine_parts(params)?;
    let g = &cache.geometry;
    let expected = [g.batch, g.out_h, g.out_w, g.cout];
    if grad_out.shape() != expected {
        return Err(Error::Dimension(format!(
            "conv2d output gradient {:?} does not match forward output {expected:?}",
            grad_out.shape()
        )));
    }
    let rows = g.rows();
    let patch = g.patch();
    let dy = grad_out.data();

    let mut dw = vec![0.0; patch * g.cout];
    gemm(patch, rows, g.cout, &cache.cols, true, dy, false, &mut dw, false);

    let mut db = vec![0.0; g.cout];
    for r in dy.chunks_exact(g.cout) {
        for (b, v) in db.iter_mut().zip(r) {
            *b += v;
        }
    }

    let dx = if need_input_grad {
        let mut dcols = vec![0.0; rows * patch];
        gemm(rows, g.cout, patch, dy, false, weights.data(), true, &mut dcols, false);
        Some(Tensor::new(vec![g.batch, g.in_h, g.in_w, g.cin], col2im(&dcols, g))?)
    } else {
        None
    };
    Ok((dx, dw, db))
}
