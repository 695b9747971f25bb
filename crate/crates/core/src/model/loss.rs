//! The max of per-crop mean squared errors, each normalized by that
//! crop's average yield.

use super::CropLabels;
use crate::crop::{Crop, PerCrop};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Training-split average yields used to put both crops on one scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossContext {
    pub mean_corn: f64,
    pub mean_soy: f64,
}

impl LossContext {
    pub fn new(mean_corn: f64, mean_soy: f64) -> Result<Self> {
        if !(mean_corn > 0.0 && mean_soy > 0.0) || !mean_corn.is_finite() || !mean_soy.is_finite() {
            return Err(Error::Argument(format!(
                "average yields must be positive, got {mean_corn} and {mean_soy}"
            )));
        }
        Ok(Self { mean_corn, mean_soy })
    }

    pub fn mean(&self, crop: Crop) -> f64 {
        match crop {
            Crop::Corn => self.mean_corn,
            Crop::Soybean => self.mean_soy,
        }
    }
}

/// One crop's normalized mean squared error and its gradient with respect
/// to every prediction (zero for unlabeled samples).
#[derive(Clone, Debug, PartialEq)]
pub struct CropTerm {
    pub value: f64,
    pub grad: Vec<f64>,
    pub labeled: usize,
}

/// `mean over labeled i of ((y_i - ŷ_i) / mean)^2`.
pub fn normalized_term(pred: &[f64], batch: &CropLabels, mean: f64) -> Result<CropTerm> {
    if pred.len() != batch.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for a batch of {}",
            pred.len(),
            batch.len()
        )));
    }
    let labeled = batch.labeled();
    if labeled == 0 {
        return Err(Error::Loss("batch has no labeled samples".into()));
    }
    let n = labeled as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; pred.len()];
    for (i, (&p, (&y, &m))) in pred.iter().zip(batch.values.iter().zip(&batch.mask)).enumerate() {
        if m {
            let r = (y - p) / mean;
            value += r * r;
            grad[i] = -2.0 * r / (mean * n);
        }
    }
    Ok(CropTerm {
        value: value / n,
        grad,
        labeled,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointLoss {
    pub value: f64,
    /// Per-crop terms; the gradient of the non-achieving crop is zeroed.
    pub terms: PerCrop<CropTerm>,
    pub achieved_by: Crop,
}

/// Joint loss: the larger of the two normalized terms. On an exact tie the
/// corn term carries the gradient.
pub fn yieldnet_loss(
    pred_corn: &[f64],
    pred_soy: &[f64],
    corn: &CropLabels,
    soy: &CropLabels,
    ctx: &LossContext,
) -> Result<JointLoss> {
    let mut c = normalized_term(pred_corn, corn, ctx.mean_corn)
        .map_err(|e| Error::Loss(format!("corn: {e}")))?;
    let mut s = normalized_term(pred_soy, soy, ctx.mean_soy).map_err(|e| Error::Loss(format!("soybean: {e}")))?;
    let achieved_by = if c.value >= s.value { Crop::Corn } else { Crop::Soybean };
    let value = c.value.max(s.value);
    match achieved_by {
        Crop::Corn => s.grad.iter_mut().for_each(|g| *g = 0.0),
        Crop::Soybean => c.grad.iter_mut().for_each(|g| *g = 0.0),
    }
    Ok(JointLoss {
        value,
        terms: PerCrop::new(c, s),
        achieved_by,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(labels: &[f64]) -> CropLabels {
        CropLabels::new(labels.iter().map(|&y| Some(y)).collect()).unwrap()
    }

    #[test]
    fn hand_value() {
        let ctx = LossContext::new(150.0, 50.0).unwrap();
        let l = yieldnet_loss(&[135.0, 165.0], &[55.0], &batch(&[150.0, 150.0]), &batch(&[50.0]), &ctx).unwrap();
        assert!((l.terms.corn.value - 0.01).abs() < 1e-15);
        assert!((l.terms.soybean.value - 0.01).abs() < 1e-15);
        assert!((l.value - 0.01).abs() < 1e-15);
    }

    #[test]
    fn perfect_is_zero() {
        let ctx = LossContext::new(150.0, 50.0).unwrap();
        let l = yieldnet_loss(&[140.0], &[48.0], &batch(&[140.0]), &batch(&[48.0]), &ctx).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn max_zeroes_other_gradient() {
        let ctx = LossContext::new(100.0, 100.0).unwrap();
        // corn residual 20% -> 0.04, soy residual 10% -> 0.01
        let l = yieldnet_loss(&[80.0], &[90.0], &batch(&[100.0]), &batch(&[100.0]), &ctx).unwrap();
        assert!((l.value - 0.04).abs() < 1e-15);
        assert_eq!(l.achieved_by, Crop::Corn);
        assert!(l.terms.soybean.grad.iter().all(|&g| g == 0.0));
        assert!(l.terms.corn.grad[0] < 0.0);
    }

    #[test]
    fn unlabeled_contribute_nothing() {
        let ctx = LossContext::new(100.0, 100.0).unwrap();
        let corn = CropLabels::new(vec![Some(100.0), None]).unwrap();
        let l = yieldnet_loss(&[90.0, -1e6], &[100.0], &corn, &batch(&[100.0]), &ctx).unwrap();
        assert!((l.value - 0.01).abs() < 1e-15);
        assert_eq!(l.terms.corn.grad[1], 0.0);
    }

    #[test]
    fn missing_labels_error() {
        let ctx = LossContext::new(100.0, 100.0).unwrap();
        let corn = CropLabels::new(vec![None]).unwrap();
        assert!(matches!(
            yieldnet_loss(&[1.0], &[1.0], &corn, &batch(&[1.0]), &ctx),
            Err(Error::Loss(_))
        ));
    }
}
