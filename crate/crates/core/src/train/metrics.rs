use crate::error::{Error, Result};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// Pearson correlation; `None` when either side has zero variance or
    /// fewer than two pairs.
    pub r: Option<f64>,
    pub n: usize,
}

pub fn compute_metrics(y: &[f64], y_hat: &[f64]) -> Result<Metrics> {
    if y.len() != y_hat.len() {
        return Err(Error::Dimension(format!("{} labels but {} predictions", y.len(), y_hat.len())));
    }
    if y.is_empty() {
        return Err(Error::Argument("metrics need at least one pair".into()));
    }
    let n = y.len() as f64;
    let sq = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let abs = y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(Metrics {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        r: pearson(y, y_hat),
        n: y.len(),
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 || a.len() != b.len() {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// `|y − ŷ| / y · 100`.
pub fn error_percentage(y: f64, y_hat: f64) -> f64 {
    (y - y_hat).abs() / y * 100.0
}
