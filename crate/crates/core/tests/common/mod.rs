#![allow(dead_code)]

use std::sync::Arc;

use isac_track::processing::{periodogram, Periodogram, Window};
use isac_track::sensor::{dddsu_mask, CsiFrame, OfdmGridConfig, OfdmTarget};
use num_complex::Complex64;

pub fn desk(mask_tdd: bool, noise_db: f64) -> OfdmGridConfig {
    let mut c = OfdmGridConfig::desk_scale();
    if !mask_tdd {
        c.tdd_mask = vec![true; c.n_symbols];
    } else {
        c.tdd_mask = dddsu_mask(c.n_symbols, 2, 1);
    }
    c.noise_power_db = noise_db;
    c
}

pub fn target(range: f64, speed: f64, amp: f64) -> OfdmTarget {
    OfdmTarget {
        range,
        speed,
        amplitude: Complex64::new(amp, 0.0),
    }
}

/// Absolute peak power (dB) within ±`cells` native bins of `(range, speed)`.
pub fn peak_near(p: &Periodogram, cfg: &OfdmGridConfig, range: f64, speed: f64, cells: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (i, r) in p.range_axis.iter().enumerate() {
        if (r - range).abs() > cells * cfg.range_resolution() {
            continue;
        }
        for (j, v) in p.speed_axis.iter().enumerate() {
            if (v - speed).abs() > cells * cfg.speed_resolution() {
                continue;
            }
            best = best.max(p.power_db[[i, j]]);
        }
    }
    best + 10.0 * p.reference_power.log10()
}

pub fn padded(f: &CsiFrame) -> Periodogram {
    periodogram(f, Window::Rectangular, 4)
}

pub fn arc(c: OfdmGridConfig) -> Arc<OfdmGridConfig> {
    Arc::new(c)
}
