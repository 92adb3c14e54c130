//! Depth-video body weight pipeline for dairy cows.
//!
//! Top-view depth frames are segmented into a body mask ([`segment`]),
//! measured ([`biometrics`]) and the per-video medians are regressed on
//! scale weights ([`regress`]) under goodness-of-fit, forecasting and
//! leave-cows-out designs ([`evaluate`]). [`synth`] renders scenes and
//! longitudinal datasets with known ground truth.

pub mod biometrics;
pub mod error;
pub mod evaluate;
pub mod geometry;
pub mod ingest;
pub mod pipeline;
pub mod raster;
pub mod regress;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
pub use raster::Grid;
