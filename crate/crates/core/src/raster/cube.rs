use super::HistogramSlice;
use crate::crop::Crop;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

pub const DEFAULT_TIMESTEPS: usize = 30;
/// Day of year on which the first composite window starts (Mar 6).
pub const SEASON_START_DOY: u32 = 65;
pub const COMPOSITE_DAYS: u32 = 8;

/// First day of year covered by composite `t` (1-based).
pub fn composite_start_doy(t: usize) -> u32 {
    SEASON_START_DOY + COMPOSITE_DAYS * (t as u32 - 1)
}

/// Time × bin × band histogram cube for one location, year and crop.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramCube {
    pub location_id: String,
    pub year: u32,
    pub crop: Crop,
    pub time: usize,
    pub bins: usize,
    pub bands: usize,
    /// Row-major `[t][bin][band]`.
    pub values: Vec<f64>,
    pub timestep_valid: Vec<bool>,
}

impl HistogramCube {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.time, self.bins, self.bands)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `t` is 0-based here.
    pub fn get(&self, t: usize, bin: usize, band: usize) -> f64 {
        self.values[(t * self.bins + bin) * self.bands + band]
    }

    pub fn timestep(&self, t: usize) -> &[f64] {
        let n = self.bins * self.bands;
        &self.values[t * n..(t + 1) * n]
    }

    /// Sum over bins of the (t, band) slice.
    pub fn slice_mass(&self, t: usize, band: usize) -> f64 {
        (0..self.bins).map(|b| self.get(t, b, band)).sum()
    }
}

/// Stacks per-timestep slices (1-based timesteps) into a `T × b × d`
/// cube. Missing timesteps, and timesteps without any valid pixel, are
/// zero and flagged invalid.
pub fn assemble_cube(
    location_id: impl Into<String>,
    year: u32,
    crop: Crop,
    slices: Vec<(usize, HistogramSlice)>,
    time: usize,
    bins: usize,
    bands: usize,
) -> Result<HistogramCube> {
    if time == 0 || bins == 0 || bands == 0 {
        return Err(Error::Argument("cube extents must be positive".into()));
    }
    let per = bins * bands;
    let mut values = vec![0.0; time * per];
    let mut seen = vec![false; time];
    let mut timestep_valid = vec![false; time];
    for (t, slice) in slices {
        if t == 0 || t > time {
            return Err(Error::Argument(format!("timestep {t} outside 1..={time}")));
        }
        if seen[t - 1] {
            return Err(Error::Argument(format!("duplicate timestep {t}")));
        }
        if slice.len() != per {
            return Err(Error::Dimension(format!(
                "timestep {t} slice has {} values, expected {bins}x{bands}",
                slice.len()
            )));
        }
        seen[t - 1] = true;
        timestep_valid[t - 1] = slice.iter().any(|&v| v != 0.0);
        values[(t - 1) * per..t * per].copy_from_slice(&slice);
    }
    Ok(HistogramCube {
        location_id: location_id.into(),
        year,
        crop,
        time,
        bins,
        bands,
        values,
        timestep_valid,
    })
}

/// In-season prediction date.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cutoff {
    Jul23,
    Aug23,
    Sep23,
    Oct23,
}

impl Cutoff {
    pub const ALL: [Cutoff; 4] = [Cutoff::Jul23, Cutoff::Aug23, Cutoff::Sep23, Cutoff::Oct23];

    /// Day of year (non-leap calendar).
    pub fn day_of_year(self) -> u32 {
        match self {
            Cutoff::Jul23 => 204,
            Cutoff::Aug23 => 235,
            Cutoff::Sep23 => 266,
            Cutoff::Oct23 => 296,
        }
    }

    pub fn month(self) -> &'static str {
        match self {
            Cutoff::Jul23 => "Jul",
            Cutoff::Aug23 => "Aug",
            Cutoff::Sep23 => "Sep",
            Cutoff::Oct23 => "Oct",
        }
    }

    /// Last 1-based timestep whose composite window (start + 7 days) ends
    /// on or before the cutoff day.
    pub fn last_kept_timestep(self) -> usize {
        let doy = self.day_of_year();
        let span = COMPOSITE_DAYS - 1;
        if doy < SEASON_START_DOY + span {
            return 0;
        }
        ((doy - SEASON_START_DOY - span) / COMPOSITE_DAYS + 1) as usize
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}23", self.month())
    }
}

impl std::str::FromStr for Cutoff {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jul23" | "jul" => Ok(Cutoff::Jul23),
            "aug23" | "aug" => Ok(Cutoff::Aug23),
            "sep23" | "sep" => Ok(Cutoff::Sep23),
            "oct23" | "oct" => Ok(Cutoff::Oct23),
            other => Err(format!("unknown cutoff '{other}'")),
        }
    }
}

/// Zeroes (and flags invalid) every timestep completed after the cutoff.
pub fn apply_cutoff(cube: &HistogramCube, cutoff: Cutoff) -> HistogramCube {
    let mut out = cube.clone();
    let keep = cutoff.last_kept_timestep().min(cube.time);
    let per = cube.bins * cube.bands;
    out.values[keep * per..].iter_mut().for_each(|v| *v = 0.0);
    out.timestep_valid[keep..].iter_mut().for_each(|v| *v = false);
    out
}
