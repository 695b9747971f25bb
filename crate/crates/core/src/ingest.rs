//! Raw-data index: the JSON file that lists, for every location-year, its
//! composite rasters, cropland masks and reported yields. Both the
//! synthetic generator and real-data imports use it.

use crate::codec::{read_file, write_file};
use crate::crop::{Crop, PerCrop};
use crate::error::Result;
use crate::raster::{
    assemble_cube, histogram, read_mask, read_raster, BinFitter, BinningManifest, CroplandMask,
};
use crate::train::{CropObservation, Dataset, Sample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

pub const RAW_INDEX: &str = "index.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawIndex {
    pub schema_version: u32,
    pub timesteps: usize,
    pub bands: usize,
    pub samples: Vec<RawEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawEntry {
    pub location_id: String,
    pub year: u32,
    /// Raster files in timestep order, relative to the index directory.
    pub rasters: Vec<String>,
    /// Mask file per crop; a missing crop has no cube.
    pub masks: PerCrop<Option<String>>,
    pub yields: PerCrop<Option<f64>>,
    /// Generator ground truth, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<f64>,
}

impl RawIndex {
    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&read_file(&dir.join(RAW_INDEX))?)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(RAW_INDEX), serde_json::to_string_pretty(self)?.as_bytes())
    }
}

fn masks_of(dir: &Path, e: &RawEntry) -> Result<Vec<CroplandMask>> {
    let mut out = Vec::new();
    for c in Crop::ALL {
        if let Some(p) = e.masks.get(c) {
            let mut m = read_mask(&dir.join(p))?;
            m.crop = c;
            out.push(m);
        }
    }
    Ok(out)
}

/// Fits bin edges over every masked pixel of the listed location-years
/// (all of them when `years` is `None`).
pub fn fit_bins_from_index(
    dir: &Path,
    index: &RawIndex,
    bins: usize,
    years: Option<&BTreeSet<u32>>,
) -> Result<BinningManifest> {
    let fitter = index
        .samples
        .par_iter()
        .filter(|e| years.is_none_or(|ys| ys.contains(&e.year)))
        .map(|e| -> Result<BinFitter> {
            let mut f = BinFitter::new(index.bands);
            let masks = masks_of(dir, e)?;
            for r in &e.rasters {
                let raster = read_raster(&dir.join(r))?;
                for m in &masks {
                    f.observe(&raster, m)?;
                }
            }
            Ok(f)
        })
        .try_reduce(
            || BinFitter::new(index.bands),
            |mut a, b| {
                a.merge(&b);
                Ok(a)
            },
        )?;
    fitter.finish(bins)
}

/// Turns every location-year into per-crop histogram cubes.
pub fn ingest_index(dir: &Path, index: &RawIndex, manifest: &BinningManifest) -> Result<Dataset> {
    let samples = index
        .samples
        .par_iter()
        .map(|e| -> Result<Sample> {
            let masks = masks_of(dir, e)?;
            let mut slices: Vec<Vec<(usize, Vec<f64>)>> = vec![Vec::new(); masks.len()];
            for r in &e.rasters {
                let raster = read_raster(&dir.join(r))?;
                for (m, s) in masks.iter().zip(slices.iter_mut()) {
                    s.push((raster.timestep as usize, histogram(&raster, m, manifest)?));
                }
            }
            let mut crops = PerCrop::new(None, None);
            for (m, s) in masks.iter().zip(slices) {
                let cube = assemble_cube(&e.location_id, e.year, m.crop, s, index.timesteps, manifest.bins, index.bands)?;
                *crops.get_mut(m.crop) = Some(CropObservation {
                    cube,
                    yield_value: *e.yields.get(m.crop),
                });
            }
            Ok(Sample {
                location_id: e.location_id.clone(),
                year: e.year,
                crops,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, Some(manifest.clone()))
}
