//! Multi-temporal, multi-modal urban change monitoring.

pub mod ablation;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};
