//! Regime-switching models for weekly mortality among older adults.

pub mod baseline;
pub mod em;
pub mod error;
pub mod features;
pub mod forecast;
pub mod linalg;
pub mod optim;
pub mod panel;
pub mod regime;
pub mod scenario;
pub mod stats;
pub mod synthetic;
pub mod uncertainty;

pub use error::{Error, Result};
