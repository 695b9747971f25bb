//! Raster + cropland-mask ingestion: binary file formats, per-band bin
//! fitting, masked histograms, and time × bin × band cube assembly with
//! in-season cutoffs.

mod bins;
mod cube;
mod format;
mod histogram;

pub use bins::{fit_bins, BandRange, BinFitter, BinningManifest, MANIFEST_SCHEMA_VERSION};
pub use cube::{
    apply_cutoff, assemble_cube, composite_start_doy, Cutoff, HistogramCube, COMPOSITE_DAYS, DEFAULT_TIMESTEPS,
    SEASON_START_DOY,
};
pub use format::{
    parse_cube, parse_mask, parse_raster, read_cube, read_mask, read_raster, write_cube, write_cube_file,
    write_mask, write_mask_file, write_raster, write_raster_file, RASTER_HEADER_LEN,
};
pub use histogram::{histogram, HistogramSlice};

use crate::crop::Crop;
use crate::error::{Error, Result};

pub const DEFAULT_BANDS: usize = 9;
pub const DEFAULT_BINS: usize = 32;

/// One multispectral image for a location and composite period. Pixels
/// are band-sequential (`[band][row][col]`); NaN marks no-data.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub location_id: String,
    pub year: u32,
    /// 1-based composite index within the season.
    pub timestep: u32,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub pixels: Vec<f32>,
}

impl RasterImage {
    pub fn new(
        location_id: impl Into<String>,
        year: u32,
        timestep: u32,
        height: usize,
        width: usize,
        bands: usize,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Dimension("raster extents must be positive".into()));
        }
        if pixels.len() != height * width * bands {
            return Err(Error::Dimension(format!(
                "raster {height}x{width}x{bands} needs {} pixels, got {}",
                height * width * bands,
                pixels.len()
            )));
        }
        Ok(Self {
            location_id: location_id.into(),
            year,
            timestep,
            height,
            width,
            bands,
            pixels,
        })
    }

    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[band * n..(band + 1) * n]
    }
}

/// Per-pixel include (1) / exclude (0) flags for one crop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CroplandMask {
    pub height: usize,
    pub width: usize,
    pub crop: Crop,
    pub values: Vec<u8>,
}

impl CroplandMask {
    pub fn new(height: usize, width: usize, crop: Crop, values: Vec<u8>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::Argument(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self {
            height,
            width,
            crop,
            values,
        })
    }

    pub fn all(height: usize, width: usize, crop: Crop) -> Self {
        Self {
            height,
            width,
            crop,
            values: vec![1; height * width],
        }
    }

    pub fn included(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub(crate) fn check_pairs(&self, raster: &RasterImage) -> Result<()> {
        if self.height != raster.height || self.width != raster.width {
            return Err(Error::Dimension(format!(
                "mask {}x{} does not match raster {}x{}",
                self.height, self.width, raster.height, raster.width
            )));
        }
        Ok(())
    }
}
