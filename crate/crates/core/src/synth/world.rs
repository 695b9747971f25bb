use crate::crop::{Crop, PerCrop};
use crate::error::{Error, Result};
use crate::raster::{CroplandMask, RasterImage};
use crate::seed::rng_for;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Generative law of the synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub n_locations: usize,
    pub years: Vec<u32>,
    pub height: usize,
    pub width: usize,
    pub timesteps: usize,
    pub bands: usize,
    pub base_yield: PerCrop<f64>,
    /// Share of the latent fertility factor in each crop's yield.
    pub loading: PerCrop<f64>,
    /// Standard deviation of the yield noise, in bushels per acre.
    pub noise_std: PerCrop<f64>,
    /// Probability that a crop's yield is unreported.
    pub missing_rate: f64,
    /// Fraction of grid columns given to each crop's field.
    pub crop_fraction: f64,
    /// Peak green-up timestep (1-based) per crop.
    pub peak_timestep: PerCrop<f64>,
    /// Green-up curve width in timesteps.
    pub season_width: f64,
    /// How strongly fertility scales the green-up amplitude.
    pub signal_gain: f64,
    /// Season fraction where fertility starts showing in the canopy.
    pub signal_onset: f64,
    /// Timesteps by which fertility delays the green-up peak.
    pub phenology_shift: f64,
    /// Per-pixel amplitude heterogeneity (standard deviation).
    pub pixel_heterogeneity: f64,
    /// Per-pixel noise relative to each band's amplitude.
    pub pixel_noise: f64,
    pub cloud_rate: f64,
    /// Fixes the latent factor everywhere (for checks by construction).
    pub fertility_override: Option<f64>,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            n_locations: 200,
            years: (2004..=2018).collect(),
            height: 24,
            width: 24,
            timesteps: 30,
            bands: 9,
            base_yield: PerCrop::new(146.68, 45.02),
            loading: PerCrop::new(1.0, 1.0),
            noise_std: PerCrop::new(0.08 * 146.68, 0.08 * 45.02),
            missing_rate: 0.05,
            crop_fraction: 0.42,
            peak_timestep: PerCrop::new(17.0, 17.0),
            season_width: 4.0,
            signal_gain: 0.25,
            signal_onset: 0.7,
            phenology_shift: 0.5,
            pixel_heterogeneity: 0.15,
            pixel_noise: 0.1,
            cloud_rate: 0.01,
            fertility_override: None,
            seed: 0,
        }
    }
}

/// Per-band reflectance-like offset and green-up amplitude. The last two
/// bands behave like surface temperature in kelvin.
const BAND_BASE: [f64; 9] = [0.08, 0.25, 0.05, 0.10, 0.30, 0.22, 0.15, 290.0, 284.0];
const BAND_AMP: [f64; 9] = [-0.05, 0.35, -0.03, 0.08, 0.28, 0.18, 0.10, -6.0, -4.0];

fn band_profile(band: usize) -> (f64, f64) {
    let i = band % BAND_BASE.len();
    let cycle = (band / BAND_BASE.len()) as f64;
    (BAND_BASE[i] * (1.0 + 0.1 * cycle), BAND_AMP[i])
}

impl WorldParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.n_locations == 0 || self.years.is_empty() {
            return bad("world needs at least one location and year".into());
        }
        if self.height == 0 || self.width < 2 || self.timesteps == 0 || self.bands == 0 {
            return bad(format!(
                "grid {}x{} with {} timesteps and {} bands is too small",
                self.height, self.width, self.timesteps, self.bands
            ));
        }
        for c in Crop::ALL {
            if !(*self.base_yield.get(c) > 0.0) {
                return bad(format!("{c} base yield must be positive"));
            }
            if !(*self.noise_std.get(c) >= 0.0) {
                return bad(format!("{c} noise std must be non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.missing_rate) || !(0.0..=1.0).contains(&self.cloud_rate) {
            return bad("rates must lie in [0, 1]".into());
        }
        if !(self.crop_fraction > 0.0 && 2.0 * self.crop_fraction <= 1.0) {
            return bad(format!("crop fraction {} must lie in (0, 0.5]", self.crop_fraction));
        }
        if self.pixel_noise < 0.0 || self.pixel_heterogeneity < 0.0 || self.season_width <= 0.0 {
            return bad("noise levels must be non-negative and the season width positive".into());
        }
        Ok(())
    }

    pub fn location_id(&self, location: usize) -> String {
        format!("L{location:03}")
    }

    /// Columns `[start, end)` of each crop's field; the pair slides with
    /// the location so fields differ between counties.
    pub fn field_columns(&self, location: usize) -> PerCrop<(usize, usize)> {
        let w = ((self.width as f64 * self.crop_fraction).ceil() as usize).max(1);
        let spare = self.width.saturating_sub(2 * w);
        let offset = location % (spare + 1);
        PerCrop::new((offset, offset + w), (offset + w, offset + 2 * w))
    }

    fn signal_weight(&self, t: usize) -> f64 {
        let s = t as f64 / self.timesteps as f64;
        1.0 / (1.0 + (-(s - self.signal_onset) / 0.04).exp())
    }

    fn greenup(&self, crop: Crop, t: usize, fertility: f64) -> f64 {
        let peak = self.peak_timestep.get(crop) + self.phenology_shift * fertility * self.signal_weight(t);
        let z = (t as f64 - peak) / self.season_width;
        (-0.5 * z * z).exp()
    }
}

/// Everything generated for one location-year.
#[derive(Clone, Debug, PartialEq)]
pub struct County {
    pub location_id: String,
    pub year: u32,
    pub fertility: f64,
    pub rasters: Vec<RasterImage>,
    pub masks: PerCrop<CroplandMask>,
    /// Reported yields (`None` when unreported).
    pub yields: PerCrop<Option<f64>>,
    /// True where the noise draw had to be clamped to keep yields positive.
    pub clamped: PerCrop<bool>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn bounded_normal(rng: &mut ChaCha8Rng) -> f64 {
    normal(rng).clamp(-3.0, 3.0)
}

pub const MIN_YIELD: f64 = 1.0;

/// Latent factor, yields and masks; cheap, no pixels.
pub(crate) struct CountyCore {
    pub fertility: f64,
    pub yields: PerCrop<Option<f64>>,
    pub clamped: PerCrop<bool>,
    pub masks: PerCrop<CroplandMask>,
}

pub(crate) fn county_core(params: &WorldParams, location: usize, year: u32) -> CountyCore {
    let mut rng = rng_for(params.seed, &[location as u64, year as u64]);
    let drawn = normal(&mut rng);
    let fertility = params.fertility_override.unwrap_or(drawn);
    let mut clamped = PerCrop::new(false, false);
    let mut yields = PerCrop::new(None, None);
    for c in Crop::ALL {
        let base = *params.base_yield.get(c);
        let noise = normal(&mut rng) * params.noise_std.get(c);
        let mut y = base + params.loading.get(c) * fertility * base * 0.15 + noise;
        if y < MIN_YIELD {
            y = MIN_YIELD;
            *clamped.get_mut(c) = true;
        }
        let reported = rng.random::<f64>() >= params.missing_rate;
        *yields.get_mut(c) = reported.then_some(y);
    }
    let cols = params.field_columns(location);
    let masks = PerCrop::from_fn(|c| {
        let (a, b) = *cols.get(c);
        let values = (0..params.height * params.width)
            .map(|i| u8::from((a..b).contains(&(i % params.width))))
            .collect();
        CroplandMask {
            height: params.height,
            width: params.width,
            crop: c,
            values,
        }
    });
    CountyCore {
        fertility,
        yields,
        clamped,
        masks,
    }
}

/// Per-pixel amplitude heterogeneity, fixed for a location-year.
fn heterogeneity(params: &WorldParams, location: usize, year: u32) -> Vec<f64> {
    let mut rng = rng_for(params.seed, &[location as u64, year as u64, u64::MAX]);
    (0..params.height * params.width)
        .map(|_| params.pixel_heterogeneity * bounded_normal(&mut rng))
        .collect()
}

fn raster_at(
    params: &WorldParams,
    location: usize,
    year: u32,
    t: usize,
    fertility: f64,
    masks: &PerCrop<CroplandMask>,
    eta: &[f64],
) -> RasterImage {
    let (h, w, d) = (params.height, params.width, params.bands);
    let mut rng = rng_for(params.seed, &[location as u64, year as u64, t as u64]);
    let weight = params.signal_weight(t);
    let scale = 1.0 + params.signal_gain * weight * fertility;
    let curves = PerCrop::from_fn(|c| params.greenup(c, t, fertility));
    let mut pixels = vec![0f32; h * w * d];
    for p in 0..h * w {
        let cloudy = rng.random::<f64>() < params.cloud_rate;
        let green = if masks.corn.values[p] == 1 {
            curves.corn * scale
        } else if masks.soybean.values[p] == 1 {
            curves.soybean * scale
        } else {
            // Non-crop land: a faint, fertility-free seasonal cycle.
            0.3 * params.greenup(Crop::Corn, t, 0.0)
        };
        for band in 0..d {
            let (base, amp) = band_profile(band);
            let noise = params.pixel_noise * amp.abs() * bounded_normal(&mut rng);
            let v = base + amp * green * (1.0 + eta[p]) + noise;
            pixels[band * h * w + p] = if cloudy { f32::NAN } else { v as f32 };
        }
    }
    RasterImage {
        location_id: params.location_id(location),
        year,
        timestep: t as u32,
        height: h,
        width: w,
        bands: d,
        pixels,
    }
}

/// Streams the rasters of a location-year to `sink` one timestep at a time.
pub(crate) fn for_each_raster(
    params: &WorldParams,
    location: usize,
    year: u32,
    core: &CountyCore,
    mut sink: impl FnMut(RasterImage) -> Result<()>,
) -> Result<()> {
    let eta = heterogeneity(params, location, year);
    for t in 1..=params.timesteps {
        sink(raster_at(params, location, year, t, core.fertility, &core.masks, &eta))?;
    }
    Ok(())
}

/// Rasters, masks and yields of one location-year, determined by
/// `(seed, location, year)` alone.
pub fn gen_county(params: &WorldParams, location: usize, year: u32) -> Result<County> {
    params.validate()?;
    let core = county_core(params, location, year);
    let mut rasters = Vec::with_capacity(params.timesteps);
    for_each_raster(params, location, year, &core, |r| {
        rasters.push(r);
        Ok(())
    })?;
    Ok(County {
        location_id: params.location_id(location),
        year,
        fertility: core.fertility,
        rasters,
        masks: core.masks,
        yields: core.yields,
        clamped: core.clamped,
    })
}
