//! Simulation and processing workbench for range-Doppler multi-object
//! tracking with OFDM (ISAC) radar.
//!
//! The crate is organised along the processing chain:
//!
//! - [`scenario`]: ground-truth walks and the four evaluation presets
//! - [`sensor`]: the ideal range-Doppler sensor and the OFDM CSI synthesiser
//! - [`processing`]: periodogram, clutter removal, CA-CFAR, TDD-aware peak
//!   detection and gating
//! - [`tracker`]: the Gaussian-mixture PHD filter
//! - [`evaluation`]: association and the metric suite
//! - [`pipeline`]: experiment configuration and the batch runner

pub mod error;
pub mod scenario;
pub mod seeding;

pub use error::{Error, Result};
pub mod evaluation;
pub mod pipeline;
pub mod processing;
pub mod sensor;
pub mod tracker;
