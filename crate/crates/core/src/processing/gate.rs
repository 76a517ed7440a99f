use serde::{Deserialize, Serialize};

use super::Detection;
use crate::error::{Error, Result};

/// A-priori detection window: inclusive range and speed intervals plus a
/// minimum power relative to the frame maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub range_window: [f64; 2],
    pub speed_window: [f64; 2],
    pub min_power_db: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            range_window: [15.0, 60.0],
            speed_window: [-6.0, 6.0],
            min_power_db: -40.0,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_window[0] <= self.range_window[1]) {
            return Err(Error::config("processing.gate.range_window", "empty interval"));
        }
        if !(self.speed_window[0] <= self.speed_window[1]) {
            return Err(Error::config("processing.gate.speed_window", "empty interval"));
        }
        Ok(())
    }

    pub fn admits(&self, d: &Detection) -> bool {
        (self.range_window[0]..=self.range_window[1]).contains(&d.range)
            && (self.speed_window[0]..=self.speed_window[1]).contains(&d.speed)
            && d.power_db >= self.min_power_db
    }

    /// Area of the gated measurement region in m·(m/s).
    pub fn area(&self) -> f64 {
        (self.range_window[1] - self.range_window[0]) * (self.speed_window[1] - self.speed_window[0])
    }
}

/// Order-preserving filter keeping detections inside the gate.
pub fn gate_detections(detections: &[Detection], gate: &GateConfig) -> Result<Vec<Detection>> {
    gate.validate()?;
    Ok(detections.iter().copied().filter(|d| gate.admits(d)).collect())
}
