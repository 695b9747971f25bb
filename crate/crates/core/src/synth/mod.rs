//! Deterministic synthetic world: a latent per-location-year fertility
//! factor drives both crops' yields and the mid-season canopy signal seen
//! in the rasters.

mod world;

pub use world::{gen_county, County, WorldParams, MIN_YIELD};

use crate::codec::write_file;
use crate::crop::{Crop, PerCrop};
use crate::error::Result;
use crate::ingest::{RawEntry, RawIndex};
use crate::raster::{
    assemble_cube, histogram, write_mask, write_raster, BinFitter,
};
use crate::train::{CropObservation, Dataset, Sample};
use rayon::prelude::*;
use std::path::Path;
use world::{county_core, for_each_raster};

fn cells(params: &WorldParams) -> Vec<(usize, u32)> {
    (0..params.n_locations)
        .flat_map(|l| params.years.iter().map(move |&y| (l, y)))
        .collect()
}

/// Summary of a generation run.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthReport {
    pub samples: usize,
    pub rasters: usize,
    /// Yields clamped to stay positive.
    pub clamped: usize,
}

/// Writes rasters, masks and `index.json` under `out_dir`.
pub fn gen_dataset(params: &WorldParams, out_dir: &Path) -> Result<SynthReport> {
    params.validate()?;
    let entries = cells(params)
        .into_par_iter()
        .map(|(location, year)| -> Result<(RawEntry, usize)> {
            let core = county_core(params, location, year);
            let id = params.location_id(location);
            let mut rasters = Vec::with_capacity(params.timesteps);
            for_each_raster(params, location, year, &core, |r| {
                let rel = format!("rasters/{id}/{year}/t{:02}.rsr", r.timestep);
                write_file(&out_dir.join(&rel), &write_raster(&r)?)?;
                rasters.push(rel);
                Ok(())
            })?;
            let mut masks = PerCrop::new(None, None);
            for c in Crop::ALL {
                let rel = format!("masks/{id}_{year}_{c}.msk");
                write_file(&out_dir.join(&rel), &write_mask(core.masks.get(c))?)?;
                *masks.get_mut(c) = Some(rel);
            }
            let clamped = Crop::ALL.iter().filter(|&&c| *core.clamped.get(c)).count();
            Ok((
                RawEntry {
                    location_id: id,
                    year,
                    rasters,
                    masks,
                    yields: core.yields,
                    latent: Some(core.fertility),
                },
                clamped,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let clamped = entries.iter().map(|e| e.1).sum();
    let index = RawIndex {
        schema_version: 1,
        timesteps: params.timesteps,
        bands: params.bands,
        samples: entries.into_iter().map(|e| e.0).collect(),
    };
    index.write(out_dir)?;
    write_file(
        &out_dir.join("world.json"),
        serde_json::to_string_pretty(params)?.as_bytes(),
    )?;
    Ok(SynthReport {
        samples: index.samples.len(),
        rasters: index.samples.len() * params.timesteps,
        clamped,
    })
}

/// The synthetic dataset built entirely in memory: bins are fitted on one
/// pass over the rasters, histograms taken on a second, identical pass.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub dataset: Dataset,
    /// Latent factor per sample, in dataset order.
    pub fertility: Vec<f64>,
    pub clamped: usize,
}

pub fn synth_dataset(params: &WorldParams, bins: usize) -> Result<SynthData> {
    params.validate()?;
    let cells = cells(params);
    let fitter = cells
        .par_iter()
        .map(|&(location, year)| -> Result<BinFitter> {
            let core = county_core(params, location, year);
            let mut f = BinFitter::new(params.bands);
            for_each_raster(params, location, year, &core, |r| {
                for c in Crop::ALL {
                    f.observe(&r, core.masks.get(c))?;
                }
                Ok(())
            })?;
            Ok(f)
        })
        .try_reduce(
            || BinFitter::new(params.bands),
            |mut a, b| {
                a.merge(&b);
                Ok(a)
            },
        )?;
    let mut manifest = fitter.finish(bins)?;
    manifest.seed = Some(params.seed);
    manifest.source = "synthetic".into();
    let built = cells
        .par_iter()
        .map(|&(location, year)| -> Result<(Sample, f64, usize)> {
            let core = county_core(params, location, year);
            let mut slices = PerCrop::new(Vec::new(), Vec::new());
            for_each_raster(params, location, year, &core, |r| {
                for c in Crop::ALL {
                    slices
                        .get_mut(c)
                        .push((r.timestep as usize, histogram(&r, core.masks.get(c), &manifest)?));
                }
                Ok(())
            })?;
            let id = params.location_id(location);
            let mut crops = PerCrop::new(None, None);
            for (c, s) in [(Crop::Corn, slices.corn), (Crop::Soybean, slices.soybean)] {
                let cube = assemble_cube(&id, year, c, s, params.timesteps, bins, params.bands)?;
                *crops.get_mut(c) = Some(CropObservation {
                    cube,
                    yield_value: *core.yields.get(c),
                });
            }
            let clamped = Crop::ALL.iter().filter(|&&c| *core.clamped.get(c)).count();
            Ok((
                Sample {
                    location_id: id,
                    year,
                    crops,
                },
                core.fertility,
                clamped,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let clamped = built.iter().map(|b| b.2).sum();
    let fertility = built.iter().map(|b| b.1).collect();
    let samples = built.into_iter().map(|b| b.0).collect();
    Ok(SynthData {
        dataset: Dataset::new(samples, Some(manifest))?,
        fertility,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldParams {
        WorldParams {
            n_locations: 3,
            years: vec![2010, 2011],
            height: 8,
            width: 10,
            timesteps: 6,
            ..WorldParams::default()
        }
    }

    #[test]
    fn yields_equal_base_without_signal_or_noise() {
        let p = WorldParams {
            fertility_override: Some(0.0),
            noise_std: PerCrop::new(0.0, 0.0),
            missing_rate: 0.0,
            ..small()
        };
        let c = gen_county(&p, 1, 2010).unwrap();
        assert_eq!(c.yields, PerCrop::new(Some(146.68), Some(45.02)));
    }

    #[test]
    fn county_is_deterministic() {
        let p = small();
        let a = gen_county(&p, 2, 2011).unwrap();
        let b = gen_county(&p, 2, 2011).unwrap();
        assert_eq!(a.rasters.len(), 6);
        // NaN != NaN, so compare bit patterns.
        let bits = |c: &County| c.rasters.iter().flat_map(|r| r.pixels.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!((a.yields, a.masks), (b.yields, b.masks));
    }

    #[test]
    fn masks_disjoint_and_large() {
        let p = WorldParams::default();
        for l in 0..5 {
            let c = gen_county(&WorldParams { timesteps: 1, ..p.clone() }, l, 2004).unwrap();
            let n = p.height * p.width;
            assert!(c.masks.corn.included() * 4 >= n && c.masks.soybean.included() * 4 >= n);
            assert!(c.masks.corn.values.iter().zip(&c.masks.soybean.values).all(|(a, b)| a + b <= 1));
        }
    }

    #[test]
    fn memory_route_matches_shape() {
        let d = synth_dataset(&small(), 8).unwrap();
        assert_eq!(d.dataset.len(), 6);
        assert_eq!(d.dataset.cube_shape(), Some((6, 8, 9)));
    }
}
