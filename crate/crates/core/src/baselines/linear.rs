use super::features::{FeatureMatrix, Standardizer};
use super::linalg::{cholesky, cholesky_solve};
use crate::error::{Error, Result};
use crate::tensor::gemm;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    L1,
    L2,
}

/// Coordinate-descent stopping rule for the L1 fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LassoOptions {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_sweeps: 10_000,
        }
    }
}

/// Penalized linear regression. Coefficients are stored in the original
/// feature units; the penalty applied to standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub penalty: Penalty,
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Coordinate-descent sweeps used (0 for the closed-form L2 fit).
    pub sweeps: usize,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + 1
    }
}

/// L2: `(ZᵀZ + λI) w = Zᵀ(y − ȳ)` on standardized `Z`, solved exactly
/// (through the `n × n` dual system when features outnumber rows).
/// L1: `(1/2n)‖y − ȳ − Zw‖² + λ‖w‖₁` by cyclic coordinate descent.
pub fn linear_fit(x: &FeatureMatrix, y: &[f64], penalty: Penalty, lambda: f64) -> Result<LinearModel> {
    linear_fit_with(x, y, penalty, lambda, LassoOptions::default())
}

pub fn linear_fit_with(
    x: &FeatureMatrix,
    y: &[f64],
    penalty: Penalty,
    lambda: f64,
    opts: LassoOptions,
) -> Result<LinearModel> {
    if y.len() != x.rows() {
        return Err(Error::Dimension(format!("{} rows but {} targets", x.rows(), y.len())));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Argument(format!("penalty must be finite and non-negative, got {lambda}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite target".into()));
    }
    let std = Standardizer::fit(x);
    let z = std.transform(x);
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let (w, sweeps) = match penalty {
        Penalty::L2 => (ridge_standardized(&z, x.rows(), x.cols(), &yc, lambda)?, 0),
        Penalty::L1 => lasso_standardized(&z, x.rows(), x.cols(), &yc, lambda, opts)?,
    };
    let weights: Vec<f64> = w.iter().zip(&std.scale).map(|(w, s)| w / s).collect();
    let intercept = y_mean - weights.iter().zip(&std.mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(LinearModel {
        penalty,
        lambda,
        weights,
        intercept,
        sweeps,
    })
}

fn ridge_standardized(z: &[f64], n: usize, f: usize, yc: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if f <= n {
        let mut gram = vec![0.0; f * f];
        gemm(f, n, f, z, true, z, false, &mut gram, false);
        for i in 0..f {
            gram[i * f + i] += lambda;
        }
        let mut rhs = vec![0.0; f];
        gemm(f, n, 1, z, true, yc, false, &mut rhs, false);
        cholesky(&mut gram, f)?;
        Ok(cholesky_solve(&gram, f, &rhs))
    } else {
        // w = Zᵀ (ZZᵀ + λI)⁻¹ y
        let mut gram = vec![0.0; n * n];
        gemm(n, f, n, z, false, z, true, &mut gram, false);
        for i in 0..n {
            gram[i * n + i] += lambda;
        }
        cholesky(&mut gram, n)?;
        let alpha = cholesky_solve(&gram, n, yc);
        let mut w = vec![0.0; f];
        gemm(f, n, 1, z, true, &alpha, false, &mut w, false);
        Ok(w)
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn lasso_standardized(
    z: &[f64],
    n: usize,
    f: usize,
    yc: &[f64],
    lambda: f64,
    opts: LassoOptions,
) -> Result<(Vec<f64>, usize)> {
    // Column-major copy so each coordinate touches contiguous memory.
    let mut cols = vec![0.0; n * f];
    for i in 0..n {
        for j in 0..f {
            cols[j * n + i] = z[i * f + j];
        }
    }
    let nf = n as f64;
    let norms: Vec<f64> = cols.chunks(n).map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();
    let mut w = vec![0.0; f];
    let mut r = yc.to_vec();
    let mut last_change = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        let mut max_change = 0.0f64;
        for j in 0..f {
            if norms[j] == 0.0 {
                continue;
            }
            let col = &cols[j * n..(j + 1) * n];
            let rho = col.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / nf + norms[j] * w[j];
            let new = soft_threshold(rho, lambda) / norms[j];
            let delta = new - w[j];
            if delta != 0.0 {
                for (ri, c) in r.iter_mut().zip(col) {
                    *ri -= c * delta;
                }
                w[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        last_change = max_change;
        if max_change < opts.tolerance {
            return Ok((w, sweep));
        }
    }
    Err(Error::Convergence {
        sweeps: opts.max_sweeps,
        residual: last_change,
    })
}
