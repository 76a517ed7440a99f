//! From CSI frames to a gated detection list.

pub mod cfar;
pub mod clutter;
pub mod csi;
pub mod gate;
pub mod periodogram;
pub mod tdd;

use serde::{Deserialize, Serialize};

pub use cfar::{ca_cfar, cfar_detections, CfarConfig, CfarHit};
pub use clutter::{crap_acquire, crap_refine, crap_remove, eca_c_remove, ClutterBasis};
pub use csi::extract_csi;
pub use gate::{gate_detections, GateConfig};
pub use periodogram::{periodogram, Periodogram, Window};
pub use tdd::{tdd_peak_detect, SidelobeModel, TddDetectConfig, TddDetectReport};

/// A `(range, speed, power)` estimate handed to the tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub range: f64,
    pub speed: f64,
    /// dB relative to the frame maximum; never positive.
    pub power_db: f64,
}
