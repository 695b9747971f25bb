use crate::crop::{Crop, PerCrop};
use crate::error::{Error, Result};
use crate::model::LossContext;
use crate::raster::{read_cube, write_cube_file, BinningManifest, HistogramCube};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use std::path::Path;

/// One crop's cube at a location-year and its yield, if reported.
#[derive(Clone, Debug, PartialEq)]
pub struct CropObservation {
    pub cube: HistogramCube,
    pub yield_value: Option<f64>,
}

/// A location-year with an optional observation per crop.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub location_id: String,
    pub year: u32,
    pub crops: PerCrop<Option<CropObservation>>,
}

impl Sample {
    pub fn observation(&self, crop: Crop) -> Option<&CropObservation> {
        self.crops.get(crop).as_ref()
    }

    pub fn label(&self, crop: Crop) -> Option<f64> {
        self.observation(crop).and_then(|o| o.yield_value)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    pub manifest: Option<BinningManifest>,
}

impl Dataset {
    /// Checks that location-years are unique, yields positive and finite,
    /// cubes belong to their crop and all share one shape.
    pub fn new(samples: Vec<Sample>, manifest: Option<BinningManifest>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut shape = None;
        for s in &samples {
            if !seen.insert((s.location_id.as_str(), s.year)) {
                return Err(Error::Argument(format!(
                    "duplicate sample {}/{}",
                    s.location_id, s.year
                )));
            }
            for crop in Crop::ALL {
                let Some(obs) = s.observation(crop) else { continue };
                if let Some(y) = obs.yield_value {
                    if !(y > 0.0 && y.is_finite()) {
                        return Err(Error::Argument(format!(
                            "{crop} yield {y} at {}/{} is not positive",
                            s.location_id, s.year
                        )));
                    }
                }
                if obs.cube.crop != crop {
                    return Err(Error::Argument(format!(
                        "{} cube filed under {crop} at {}/{}",
                        obs.cube.crop, s.location_id, s.year
                    )));
                }
                let sh = obs.cube.shape();
                if *shape.get_or_insert(sh) != sh {
                    return Err(Error::Dimension(format!(
                        "cube shape {sh:?} at {}/{} differs from {:?}",
                        s.location_id,
                        s.year,
                        shape.unwrap()
                    )));
                }
            }
        }
        Ok(Self { samples, manifest })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn years(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.year).collect()
    }

    /// `(T, b, d)` of the cubes, if any.
    pub fn cube_shape(&self) -> Option<(usize, usize, usize)> {
        self.samples
            .iter()
            .flat_map(|s| Crop::ALL.into_iter().filter_map(|c| s.observation(c)))
            .map(|o| o.cube.shape())
            .next()
    }

    pub fn labeled(&self, crop: Crop) -> usize {
        self.samples.iter().filter(|s| s.label(crop).is_some()).count()
    }

    pub fn mean_yield(&self, crop: Crop) -> Option<f64> {
        let ys: Vec<f64> = self.samples.iter().filter_map(|s| s.label(crop)).collect();
        (!ys.is_empty()).then(|| ys.iter().sum::<f64>() / ys.len() as f64)
    }

    /// Average yields over this set, for the normalized loss.
    pub fn loss_context(&self) -> Result<LossContext> {
        let mean = |c: Crop| {
            self.mean_yield(c)
                .ok_or_else(|| Error::Argument(format!("no labeled {c} samples")))
        };
        LossContext::new(mean(Crop::Corn)?, mean(Crop::Soybean)?)
    }

    /// Observations of one crop with their labels.
    pub fn crop_view(&self, crop: Crop) -> (Vec<&HistogramCube>, Vec<Option<f64>>) {
        self.samples
            .iter()
            .filter_map(|s| s.observation(crop))
            .map(|o| (&o.cube, o.yield_value))
            .unzip()
    }

    /// Samples from the given years, keeping order.
    pub fn subset_years(&self, years: &BTreeSet<u32>) -> Self {
        Self {
            samples: self.samples.iter().filter(|s| years.contains(&s.year)).cloned().collect(),
            manifest: self.manifest.clone(),
        }
    }
}

/// Partitions by year into `(train, test)`.
pub fn split_by_year(ds: &Dataset, test_years: &BTreeSet<u32>) -> Result<(Dataset, Dataset)> {
    let years = ds.years();
    if let Some(y) = test_years.iter().find(|y| !years.contains(y)) {
        return Err(Error::Split(format!("test year {y} not in dataset")));
    }
    let train_years: BTreeSet<u32> = years.difference(test_years).copied().collect();
    let (train, test) = (ds.subset_years(&train_years), ds.subset_years(test_years));
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split(format!(
            "split leaves {} training and {} test samples",
            train.len(),
            test.len()
        )));
    }
    Ok((train, test))
}

/// On-disk dataset: a JSON index of location-years pointing at cube files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub schema_version: u32,
    pub samples: Vec<IndexEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub location_id: String,
    pub year: u32,
    pub corn: Option<IndexCrop>,
    pub soybean: Option<IndexCrop>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexCrop {
    /// Relative to the index file's directory.
    pub cube: String,
    #[serde(rename = "yield")]
    pub yield_value: Option<f64>,
}

pub const DATASET_INDEX: &str = "dataset.json";

pub fn cube_file_name(location_id: &str, year: u32, crop: Crop) -> String {
    format!("{location_id}_{year}_{crop}.hcb")
}

/// Writes every cube plus `dataset.json` under `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let mut entries = Vec::with_capacity(ds.len());
    for s in ds.samples() {
        let mut entry = IndexEntry {
            location_id: s.location_id.clone(),
            year: s.year,
            corn: None,
            soybean: None,
        };
        for crop in Crop::ALL {
            if let Some(obs) = s.observation(crop) {
                let name = cube_file_name(&s.location_id, s.year, crop);
                write_cube_file(&dir.join(&name), &obs.cube)?;
                let slot = match crop {
                    Crop::Corn => &mut entry.corn,
                    Crop::Soybean => &mut entry.soybean,
                };
                *slot = Some(IndexCrop {
                    cube: name,
                    yield_value: obs.yield_value,
                });
            }
        }
        entries.push(entry);
    }
    let index = DatasetIndex {
        schema_version: 1,
        samples: entries,
    };
    let json = serde_json::to_string_pretty(&index)?;
    crate::codec::write_file(&dir.join(DATASET_INDEX), json.as_bytes())?;
    if let Some(m) = &ds.manifest {
        crate::codec::write_file(&dir.join("bins.json"), m.to_json()?.as_bytes())?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let index_path = dir.join(DATASET_INDEX);
    let raw = crate::codec::read_file(&index_path)?;
    let index: DatasetIndex = serde_json::from_slice(&raw)?;
    let mut samples = Vec::with_capacity(index.samples.len());
    for e in index.samples {
        let load = |c: &Option<IndexCrop>| -> Result<Option<CropObservation>> {
            c.as_ref()
                .map(|c| {
                    Ok(CropObservation {
                        cube: read_cube(&dir.join(&c.cube))?,
                        yield_value: c.yield_value,
                    })
                })
                .transpose()
        };
        samples.push(Sample {
            crops: PerCrop::new(load(&e.corn)?, load(&e.soybean)?),
            location_id: e.location_id,
            year: e.year,
        });
    }
    let bins = dir.join("bins.json");
    let manifest = if bins.exists() {
        let raw = crate::codec::read_file(&bins)?;
        Some(BinningManifest::from_json(&String::from_utf8_lossy(&raw))?)
    } else {
        None
    };
    Dataset::new(samples, manifest)
}
