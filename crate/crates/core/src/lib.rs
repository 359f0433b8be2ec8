pub mod ablation;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod decoder;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod label;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod params;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
