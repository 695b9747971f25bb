//! Dense 64-bit tensors, the layer kernels YieldNet and the DFNN need,
//! Xavier initialization, Adam, and a small layered graph with
//! reverse-mode gradients.

mod adam;
mod batchnorm;
mod conv;
mod dense;
mod gemm;
mod graph;
mod init;
mod params;
mod relu;

pub use adam::{adam_step, AdamState};
pub use batchnorm::{batchnorm, batchnorm_backward, batchnorm_forward, BatchNormCache, BatchStats};
pub use conv::{conv2d, conv2d_backward, conv2d_forward, conv_output_extent, ConvCache, Padding};
pub use dense::{dense, dense_backward, dense_forward, DenseCache};
pub use gemm::gemm;
pub use graph::{Head, Layer, ModelGraph};
pub use init::xavier_init;
pub use params::{LayerSpec, ParamBlock, ParamGrad};
pub use relu::{relu, relu_backward};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Whether batchnorm uses batch statistics (and updates running ones) or
/// the frozen running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer,
}

/// Row-major dense tensor of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} must have 1 to 4 positive extents"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Size of the trailing (channel / feature) axis.
    pub fn channels(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Returns an error naming `what` if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what} produced a non-finite value")))
        }
    }
}
