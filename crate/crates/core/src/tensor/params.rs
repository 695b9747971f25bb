use super::{Padding, Tensor};
use serde::{Deserialize, Serialize};

pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;

/// One layer of a network description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filter_height: usize,
        filter_width: usize,
        stride: usize,
        padding: Padding,
        out_channels: usize,
    },
    Batchnorm {
        epsilon: f64,
        momentum: f64,
    },
    Relu,
    Dense {
        out_units: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn conv(filter: usize, stride: usize, padding: Padding, out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            filter_height: filter,
            filter_width: filter,
            stride,
            padding,
            out_channels,
        }
    }

    pub fn batchnorm() -> Self {
        LayerSpec::Batchnorm {
            epsilon: DEFAULT_BN_EPSILON,
            momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    pub fn dense(out_units: usize) -> Self {
        LayerSpec::Dense { out_units }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d { .. } | LayerSpec::Batchnorm { .. } | LayerSpec::Dense { .. }
        )
    }

    pub fn name(&self) -> String {
        match self {
            LayerSpec::Conv2d {
                filter_height,
                filter_width,
                stride,
                padding,
                out_channels,
            } => format!(
                "conv{filter_height}x{filter_width}/s{stride}/{}-{out_channels}",
                match padding {
                    Padding::Valid => "valid",
                    Padding::Same => "same",
                }
            ),
            LayerSpec::Batchnorm { .. } => "batchnorm".into(),
            LayerSpec::Relu => "relu".into(),
            LayerSpec::Dense { out_units } => format!("fc-{out_units}"),
            LayerSpec::Flatten => "flatten".into(),
        }
    }
}

/// Parameters of one conv, dense or batchnorm layer.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamBlock {
    /// Conv weights are laid out `[kh, kw, cin, cout]`, dense `[in, out]`.
    Affine { weights: Tensor, bias: Tensor },
    Norm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
}

impl ParamBlock {
    pub fn norm(channels: usize) -> Self {
        ParamBlock::Norm {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    /// Weight + bias (or gamma + beta) element count. Running statistics
    /// are not trainable.
    pub fn trainable_count(&self) -> usize {
        let (a, b) = self.trainable();
        a.len() + b.len()
    }

    pub fn trainable(&self) -> (&[f64], &[f64]) {
        match self {
            ParamBlock::Affine { weights, bias } => (weights.data(), bias.data()),
            ParamBlock::Norm { gamma, beta, .. } => (gamma, beta),
        }
    }

    pub fn trainable_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        match self {
            ParamBlock::Affine { weights, bias } => (weights.data_mut(), bias.data_mut()),
            ParamBlock::Norm { gamma, beta, .. } => (gamma, beta),
        }
    }

    /// Every stored value in declaration order, running statistics
    /// included.
    pub fn all_values(&self) -> Vec<&[f64]> {
        match self {
            ParamBlock::Affine { weights, bias } => vec![weights.data(), bias.data()],
            ParamBlock::Norm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => vec![gamma, beta, running_mean, running_var],
        }
    }

    pub fn all_values_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            ParamBlock::Affine { weights, bias } => vec![weights.data_mut(), bias.data_mut()],
            ParamBlock::Norm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => vec![gamma, beta, running_mean, running_var],
        }
    }

    pub fn zero_grad(&self) -> ParamGrad {
        let (a, b) = self.trainable();
        ParamGrad {
            weights: vec![0.0; a.len()],
            bias: vec![0.0; b.len()],
        }
    }
}

/// Gradient (or Adam moment) for one [`ParamBlock`]. For batchnorm blocks
/// `weights` holds gamma and `bias` holds beta.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrad {
    pub fn add_assign(&mut self, other: &ParamGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.weights.iter_mut().for_each(|v| *v = value);
        self.bias.iter_mut().for_each(|v| *v = value);
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }
}
