use super::{CroplandMask, RasterImage};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRange {
    pub lower: f64,
    pub upper: f64,
}

/// Equal-width bin edges per band, fitted on training pixels only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningManifest {
    pub schema_version: u32,
    pub bins: usize,
    pub bands: Vec<BandRange>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub source: String,
}

impl BinningManifest {
    pub fn new(bins: usize, bands: Vec<BandRange>) -> Result<Self> {
        let m = Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            bins,
            bands,
            seed: None,
            source: String::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Argument(format!(
                "unsupported manifest schema version {}",
                self.schema_version
            )));
        }
        if self.bins < 2 {
            return Err(Error::Argument(format!("need at least 2 bins, got {}", self.bins)));
        }
        if self.bands.is_empty() {
            return Err(Error::Argument("manifest has no bands".into()));
        }
        for (i, b) in self.bands.iter().enumerate() {
            if !(b.lower < b.upper) || !b.lower.is_finite() || !b.upper.is_finite() {
                return Err(Error::Argument(format!(
                    "band {i} range [{}, {}] is not increasing",
                    b.lower, b.upper
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self, band: usize) -> f64 {
        let r = self.bands[band];
        (r.upper - r.lower) / self.bins as f64
    }

    /// `bins + 1` edges for `band`.
    pub fn edges(&self, band: usize) -> Vec<f64> {
        let w = self.width(band);
        let lo = self.bands[band].lower;
        (0..=self.bins).map(|k| lo + w * k as f64).collect()
    }

    /// Bin index for a (non-NaN) value: right-open bins, the last bin
    /// closed, out-of-range values clamped to the edge bins.
    #[inline]
    pub fn bin_of(&self, band: usize, value: f64) -> usize {
        let r = self.bands[band];
        if value <= r.lower {
            return 0;
        }
        let k = ((value - r.lower) / self.width(band)).floor();
        if k >= (self.bins - 1) as f64 {
            self.bins - 1
        } else {
            k as usize
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

/// Streaming min/max accumulator over masked, non-NaN training pixels.
#[derive(Clone, Debug)]
pub struct BinFitter {
    min: Vec<f64>,
    max: Vec<f64>,
    count: Vec<u64>,
}

impl BinFitter {
    pub fn new(bands: usize) -> Self {
        Self {
            min: vec![f64::INFINITY; bands],
            max: vec![f64::NEG_INFINITY; bands],
            count: vec![0; bands],
        }
    }

    pub fn observe(&mut self, raster: &RasterImage, mask: &CroplandMask) -> Result<()> {
        mask.check_pairs(raster)?;
        if raster.bands != self.min.len() {
            return Err(Error::Argument(format!(
                "raster has {} bands, fitter expects {}",
                raster.bands,
                self.min.len()
            )));
        }
        for band in 0..raster.bands {
            let (mut lo, mut hi, mut n) = (self.min[band], self.max[band], 0u64);
            for (&v, &m) in raster.band(band).iter().zip(&mask.values) {
                if m == 1 && !v.is_nan() {
                    let v = v as f64;
                    lo = lo.min(v);
                    hi = hi.max(v);
                    n += 1;
                }
            }
            self.min[band] = lo;
            self.max[band] = hi;
            self.count[band] += n;
        }
        Ok(())
    }

    /// Merges another fitter (e.g. from a parallel worker).
    pub fn merge(&mut self, other: &BinFitter) {
        for b in 0..self.min.len() {
            self.min[b] = self.min[b].min(other.min[b]);
            self.max[b] = self.max[b].max(other.max[b]);
            self.count[b] += other.count[b];
        }
    }

    pub fn finish(&self, bins: usize) -> Result<BinningManifest> {
        if bins < 2 {
            return Err(Error::Argument(format!("need at least 2 bins, got {bins}")));
        }
        let mut bands = Vec::with_capacity(self.min.len());
        for b in 0..self.min.len() {
            if self.count[b] == 0 {
                return Err(Error::Fit(format!("band {b} has no valid masked pixels")));
            }
            if !(self.min[b] < self.max[b]) {
                return Err(Error::Fit(format!(
                    "band {b} is constant ({}), range is degenerate",
                    self.min[b]
                )));
            }
            bands.push(BandRange {
                lower: self.min[b],
                upper: self.max[b],
            });
        }
        BinningManifest::new(bins, bands)
    }
}

/// Fits per-band equal-width edges spanning `[min, max]` of every masked,
/// non-NaN pixel in the (raster, mask) pairs.
pub fn fit_bins<'a>(
    pairs: impl IntoIterator<Item = (&'a RasterImage, &'a CroplandMask)>,
    bins: usize,
) -> Result<BinningManifest> {
    let mut fitter: Option<BinFitter> = None;
    for (raster, mask) in pairs {
        fitter
            .get_or_insert_with(|| BinFitter::new(raster.bands))
            .observe(raster, mask)?;
    }
    fitter
        .ok_or_else(|| Error::Fit("no training rasters".into()))?
        .finish(bins)
}
