//! Multi-view detection of AI-generated images.
//!
//! An image is turned into four views (a 768-d semantic descriptor, 9
//! spectral statistics, 8 pixel moments and a 2401×243 patch matrix), each
//! view is encoded by its own branch, and the fused vector is classified.
//! Per-patch scores double as an explanation heatmap.

pub mod autodiff;
pub mod config;
pub mod dataset;
pub mod degrade;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod preprocess;
pub mod record;
pub mod rng;
pub mod semantic;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorClass, Result};
