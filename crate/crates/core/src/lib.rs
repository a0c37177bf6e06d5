//! Post-event earthquake loss estimation.
//!
//! Alert documents are parsed into city intensities ([`ingest`]), rolled up
//! into region intensities ([`hazard`]), turned into damage ratios
//! ([`vulnerability`]) and applied to disaggregated exposure ([`loss`]).
//! Results live in the [`store`] and are published as KML ([`kml`]).
//! [`analytics`] holds the historic-loss normalization and threshold
//! probabilities used for validation.

pub mod analytics;
pub mod error;
pub mod hazard;
pub mod ingest;
pub mod kml;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod store;
pub mod vulnerability;

pub use error::{Error, Result};
