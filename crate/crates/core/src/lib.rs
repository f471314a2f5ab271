//! Engagement prediction for web content from first-hour measurements.
//!
//! Pages carry four 12-window series (visits, likes, mentions, active
//! time) plus weekday, hour and host. Models are linear regressions on
//! `ln(1 + x)` features; the Mixed-Trend family appends distances to
//! popularity trends extracted by K-Means or KSC clustering.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod features;
pub mod pipeline;
pub mod regression;
pub mod transforms;
pub mod trend_clustering;

pub use error::{Error, Result};
