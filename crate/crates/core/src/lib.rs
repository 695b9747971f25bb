//! Simultaneous two-crop yield regression from multispectral histogram
//! cubes.
//!
//! The crate covers the whole pipeline: raster ingestion into
//! time × bin × band histogram cubes, a from-scratch 64-bit tensor engine,
//! the shared-backbone two-head network and its max-normalized joint loss,
//! the linear / tree / forest / feed-forward baselines, training and
//! in-season evaluation, and a deterministic synthetic world for testing.

pub(crate) mod codec;
pub mod baselines;
pub mod crop;
pub mod model;
pub mod error;
pub mod ingest;
pub mod raster;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod train;

pub use crop::{Crop, PerCrop};
pub use error::{Error, Result};
