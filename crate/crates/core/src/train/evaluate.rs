use super::dataset::Dataset;
use super::metrics::{compute_metrics, error_percentage, Metrics};
use crate::baselines::{BaselineModel, FeatureMatrix};
use crate::crop::{Crop, PerCrop};
use crate::error::Result;
use crate::model::{stack_cubes, YieldNet};
use crate::raster::{apply_cutoff, Cutoff, HistogramCube};
use rayon::prelude::*;

/// Anything that maps cubes of a crop to yield predictions.
pub trait Predictor: Sync {
    fn crops(&self) -> Vec<Crop>;
    fn predict(&self, crop: Crop, cubes: &[&HistogramCube]) -> Result<Vec<f64>>;
}

const PREDICT_CHUNK: usize = 64;

impl Predictor for YieldNet {
    fn crops(&self) -> Vec<Crop> {
        YieldNet::crops(self)
    }

    fn predict(&self, crop: Crop, cubes: &[&HistogramCube]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(cubes.len());
        for chunk in cubes.chunks(PREDICT_CHUNK) {
            out.extend(YieldNet::predict(self, crop, &stack_cubes(chunk)?)?);
        }
        Ok(out)
    }
}

/// One baseline per crop.
pub struct BaselinePair(pub PerCrop<Option<BaselineModel>>);

impl Predictor for BaselinePair {
    fn crops(&self) -> Vec<Crop> {
        Crop::ALL.into_iter().filter(|c| self.0.get(*c).is_some()).collect()
    }

    fn predict(&self, crop: Crop, cubes: &[&HistogramCube]) -> Result<Vec<f64>> {
        let model = self.0.get(crop).as_ref().ok_or_else(|| {
            crate::error::Error::Argument(format!("no {crop} baseline"))
        })?;
        model.predict(&FeatureMatrix::from_cubes(cubes)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocationError {
    pub location_id: String,
    pub y: f64,
    pub y_hat: f64,
    pub error_pct: f64,
}

/// Metrics for one (year, cutoff, crop) cell. `metrics` is `None` when the
/// cell has no labeled test samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub year: u32,
    pub cutoff: Cutoff,
    pub crop: Crop,
    pub metrics: Option<Metrics>,
    pub locations: Vec<LocationError>,
}

impl MetricsRow {
    pub fn is_empty(&self) -> bool {
        self.metrics.is_none()
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.locations.iter().map(|l| (l.y, l.y_hat)).collect()
    }
}

/// One row per (test year, cutoff, crop), ordered by year, then cutoff,
/// then crop. Only labeled samples are scored.
pub fn evaluate_in_season(
    predictor: &dyn Predictor,
    test_set: &Dataset,
    cutoffs: &[Cutoff],
) -> Result<Vec<MetricsRow>> {
    let mut cutoffs = cutoffs.to_vec();
    cutoffs.sort();
    cutoffs.dedup();
    let mut cells = Vec::new();
    for year in test_set.years() {
        for &cutoff in &cutoffs {
            for crop in predictor.crops() {
                cells.push((year, cutoff, crop));
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(year, cutoff, crop)| {
            let mut ids = Vec::new();
            let mut ys = Vec::new();
            let mut cubes = Vec::new();
            for s in test_set.samples().iter().filter(|s| s.year == year) {
                if let Some(obs) = s.observation(crop) {
                    if let Some(y) = obs.yield_value {
                        ids.push(s.location_id.clone());
                        ys.push(y);
                        cubes.push(apply_cutoff(&obs.cube, cutoff));
                    }
                }
            }
            if ys.is_empty() {
                return Ok(MetricsRow {
                    year,
                    cutoff,
                    crop,
                    metrics: None,
                    locations: Vec::new(),
                });
            }
            let refs: Vec<&HistogramCube> = cubes.iter().collect();
            let preds = predictor.predict(crop, &refs)?;
            let metrics = compute_metrics(&ys, &preds)?;
            let mut locations: Vec<LocationError> = ids
                .into_iter()
                .zip(ys.iter().zip(&preds))
                .map(|(location_id, (&y, &y_hat))| LocationError {
                    location_id,
                    y,
                    y_hat,
                    error_pct: error_percentage(y, y_hat),
                })
                .collect();
            locations.sort_by(|a, b| a.location_id.cmp(&b.location_id));
            Ok(MetricsRow {
                year,
                cutoff,
                crop,
                metrics: Some(metrics),
                locations,
            })
        })
        .collect()
}
