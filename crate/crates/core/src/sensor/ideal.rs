use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::processing::Detection;
use crate::scenario::RadialState;
use crate::seeding::rng_for;

/// Point sensor that observes every object with independent Gaussian
/// errors, plus zero-Doppler clutter uniform in range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdealSensorConfig {
    pub p_detect: f64,
    pub sigma_range: f64,
    pub sigma_speed: f64,
    /// Expected number of clutter detections per frame.
    pub clutter_rate: f64,
    pub clutter_range_window: [f64; 2],
}

impl Default for IdealSensorConfig {
    fn default() -> Self {
        Self {
            p_detect: 0.9,
            sigma_range: 0.3,
            sigma_speed: 0.1,
            clutter_rate: 2.0,
            clutter_range_window: [15.0, 60.0],
        }
    }
}

impl IdealSensorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_detect) {
            return Err(Error::config("sensor.p_detect", "must lie in [0, 1]"));
        }
        if !(self.sigma_range >= 0.0 && self.sigma_speed >= 0.0) {
            return Err(Error::config("sensor.sigma_range", "sigmas must be >= 0"));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            return Err(Error::config("sensor.clutter_rate", "must be finite and >= 0"));
        }
        let [lo, hi] = self.clutter_range_window;
        if !(lo <= hi) {
            return Err(Error::config(
                "sensor.clutter_range_window",
                "lower bound exceeds upper bound",
            ));
        }
        Ok(())
    }
}

/// One frame of ideal-sensor output. Object detections come first, in the
/// order of `truth`, followed by clutter. All powers are 0 dB.
pub fn ideal_observe(truth: &[RadialState], cfg: &IdealSensorConfig, seed: u64) -> Vec<Detection> {
    let mut rng = rng_for(seed, 0);
    let range_noise = Normal::new(0.0, cfg.sigma_range).expect("sigma_range >= 0");
    let speed_noise = Normal::new(0.0, cfg.sigma_speed).expect("sigma_speed >= 0");
    let mut out = Vec::with_capacity(truth.len() + 4);
    for s in truth {
        if rng.random::<f64>() < cfg.p_detect {
            out.push(Detection {
                range: s.range + range_noise.sample(&mut rng),
                speed: s.speed + speed_noise.sample(&mut rng),
                power_db: 0.0,
            });
        }
    }
    if cfg.clutter_rate > 0.0 {
        let count = Poisson::new(cfg.clutter_rate)
            .expect("clutter_rate > 0")
            .sample(&mut rng) as usize;
        let [lo, hi] = cfg.clutter_range_window;
        for _ in 0..count {
            let range = if hi > lo { rng.random_range(lo..hi) } else { lo };
            out.push(Detection {
                range,
                speed: 0.0,
                power_db: 0.0,
            });
        }
    }
    out
}
