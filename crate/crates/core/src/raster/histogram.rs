use super::{BinningManifest, CroplandMask, RasterImage};
use crate::error::{Error, Result};

/// `bins × bands` frequencies, bin-major with band innermost.
pub type HistogramSlice = Vec<f64>;

/// Per-band histogram of the masked, non-NaN pixels, normalized to sum
/// to 1 per band (all zeros when a band has no valid pixel).
pub fn histogram(raster: &RasterImage, mask: &CroplandMask, manifest: &BinningManifest) -> Result<HistogramSlice> {
    mask.check_pairs(raster)?;
    if manifest.bands.len() != raster.bands {
        return Err(Error::Argument(format!(
            "manifest has {} bands, raster has {}",
            manifest.bands.len(),
            raster.bands
        )));
    }
    let (b, d) = (manifest.bins, raster.bands);
    let mut counts = vec![0u64; b * d];
    let mut totals = vec![0u64; d];
    for band in 0..d {
        for (&v, &m) in raster.band(band).iter().zip(&mask.values) {
            if m == 1 && !v.is_nan() {
                counts[manifest.bin_of(band, v as f64) * d + band] += 1;
                totals[band] += 1;
            }
        }
    }
    Ok(counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let t = totals[i % d];
            if t == 0 {
                0.0
            } else {
                c as f64 / t as f64
            }
        })
        .collect())
}
