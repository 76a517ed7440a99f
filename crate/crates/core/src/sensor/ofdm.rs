//! CSI-level OFDM radar synthesis.
//!
//! The transmitted frame is taken as all-ones, so the synthesised grid is
//! the channel itself: fast time runs over subcarriers (rows), slow time
//! over OFDM symbols (columns). Symbols marked `false` in the TDD mask are
//! uplink and carry nothing.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::rng_for;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A static reflector: zero-Doppler tap at a fixed range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterTap {
    pub range: f64,
    pub amplitude: f64,
    /// Radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmGridConfig {
    pub carrier_freq: f64,
    pub subcarrier_spacing: f64,
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    /// Symbol period including the cyclic prefix.
    pub symbol_duration: f64,
    /// `true` marks a downlink (usable) symbol.
    pub tdd_mask: Vec<bool>,
    /// Per-cell noise power in dB relative to a unit-amplitude target;
    /// `-inf` disables noise.
    pub noise_power_db: f64,
    #[serde(default)]
    pub static_clutter_taps: Vec<ClutterTap>,
}

/// Repeating D-D-D-S-U slot pattern. The special slot carries
/// `special_dl` downlink symbols followed by uplink/guard symbols.
pub fn dddsu_mask(n_symbols: usize, symbols_per_slot: usize, special_dl: usize) -> Vec<bool> {
    let period = 5 * symbols_per_slot;
    (0..n_symbols)
        .map(|m| {
            let pos = m % period;
            let slot = pos / symbols_per_slot;
            match slot {
                0..=2 => true,
                3 => pos % symbols_per_slot < special_dl,
                _ => false,
            }
        })
        .collect()
}

impl OfdmGridConfig {
    /// FR2-style numerology at 27.6 GHz spanning one 10 ms frame.
    pub fn full_scale() -> Self {
        Self {
            carrier_freq: 27.6e9,
            subcarrier_spacing: 120e3,
            n_subcarriers: 1024,
            n_symbols: 1120,
            symbol_duration: 8.92e-6,
            tdd_mask: dddsu_mask(1120, 14, 10),
            noise_power_db: -10.0,
            static_clutter_taps: Vec::new(),
        }
    }

    /// Reduced grid with the same range and speed resolution as
    /// [`full_scale`](Self::full_scale): every fourth subcarrier and every
    /// tenth symbol.
    pub fn desk_scale() -> Self {
        Self {
            carrier_freq: 27.6e9,
            subcarrier_spacing: 480e3,
            n_subcarriers: 256,
            n_symbols: 112,
            symbol_duration: 89.2e-6,
            tdd_mask: dddsu_mask(112, 2, 1),
            noise_power_db: -10.0,
            static_clutter_taps: Vec::new(),
        }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.tdd_mask = mask;
        self
    }

    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.n_subcarriers as f64 * self.subcarrier_spacing)
    }

    pub fn speed_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.carrier_freq * self.n_symbols as f64 * self.symbol_duration)
    }

    pub fn max_unambiguous_range(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.subcarrier_spacing)
    }

    pub fn max_unambiguous_speed(&self) -> f64 {
        SPEED_OF_LIGHT / (4.0 * self.carrier_freq * self.symbol_duration)
    }

    pub fn active_symbols(&self) -> usize {
        self.tdd_mask.iter().filter(|&&b| b).count()
    }

    /// Phase advance per subcarrier for a reflector at `range` (cycles).
    pub(crate) fn range_cycles(&self, range: f64) -> f64 {
        self.subcarrier_spacing * 2.0 * range / SPEED_OF_LIGHT
    }

    /// Phase advance per symbol for radial speed `speed` (cycles).
    pub(crate) fn doppler_cycles(&self, speed: f64) -> f64 {
        self.symbol_duration * 2.0 * speed * self.carrier_freq / SPEED_OF_LIGHT
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq", self.carrier_freq),
            ("subcarrier_spacing", self.subcarrier_spacing),
            ("symbol_duration", self.symbol_duration),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("ofdm.{name}"), "must be finite and > 0"));
            }
        }
        if self.n_subcarriers == 0 || self.n_symbols == 0 {
            return Err(Error::config("ofdm.n_subcarriers", "grid dimensions must be > 0"));
        }
        if self.tdd_mask.len() != self.n_symbols {
            return Err(Error::config(
                "ofdm.tdd_mask",
                format!(
                    "length {} does not match n_symbols {}",
                    self.tdd_mask.len(),
                    self.n_symbols
                ),
            ));
        }
        if self.active_symbols() == 0 {
            return Err(Error::config("ofdm.tdd_mask", "needs at least one downlink symbol"));
        }
        if self.noise_power_db.is_nan() || self.noise_power_db == f64::INFINITY {
            return Err(Error::config("ofdm.noise_power_db", "must be finite or -inf"));
        }
        Ok(())
    }
}

/// CSI matrix `[n_subcarriers × n_symbols]` with its grid configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiFrame {
    pub grid: Array2<Complex64>,
    pub config: Arc<OfdmGridConfig>,
}

impl CsiFrame {
    pub fn zeros(config: Arc<OfdmGridConfig>) -> Self {
        Self {
            grid: Array2::zeros((config.n_subcarriers, config.n_symbols)),
            config,
        }
    }

    pub fn mask(&self) -> &[bool] {
        &self.config.tdd_mask
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.dim()
    }

    pub fn energy(&self) -> f64 {
        self.grid.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Frobenius inner product `⟨self, other⟩ = Σ conj(self)·other`.
    pub fn inner(&self, other: &CsiFrame) -> Complex64 {
        self.grid.iter().zip(other.grid.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    pub(crate) fn apply_mask(&mut self) {
        for (m, &active) in self.config.tdd_mask.iter().enumerate() {
            if !active {
                self.grid.column_mut(m).fill(Complex64::new(0.0, 0.0));
            }
        }
    }

    /// Little-endian dump: `u32 rows, u32 cols`, one mask byte per symbol,
    /// then interleaved `f32` (re, im) in row-major order.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (rows, cols) = self.shape();
        w.write_all(&(rows as u32).to_le_bytes())?;
        w.write_all(&(cols as u32).to_le_bytes())?;
        let mask: Vec<u8> = self.mask().iter().map(|&b| b as u8).collect();
        w.write_all(&mask)?;
        let mut buf = Vec::with_capacity(rows * cols * 8);
        for z in self.grid.iter() {
            buf.extend_from_slice(&(z.re as f32).to_le_bytes());
            buf.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }
}

/// Raw contents of a CSI dump.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiDump {
    pub mask: Vec<bool>,
    pub grid: Array2<num_complex::Complex32>,
}

pub fn read_csi_dump<R: Read>(mut r: R) -> std::io::Result<CsiDump> {
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;
    let mut mask = vec![0u8; cols];
    r.read_exact(&mut mask)?;
    let mut data = vec![0u8; rows * cols * 8];
    r.read_exact(&mut data)?;
    let values: Vec<num_complex::Complex32> = data
        .chunks_exact(8)
        .map(|c| {
            num_complex::Complex32::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect();
    let grid = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    Ok(CsiDump {
        mask: mask.into_iter().map(|b| b != 0).collect(),
        grid,
    })
}

/// Point target seen by the OFDM sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfdmTarget {
    pub range: f64,
    pub speed: f64,
    pub amplitude: Complex64,
}

fn phasors(n: usize, cycles: f64) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::from_polar(1.0, 2.0 * PI * cycles * k as f64))
        .collect()
}

/// Adds `amplitude · e^{-j2π n Δf 2r/c} · e^{+j2π m T 2v f_c/c}` to every cell.
pub(crate) fn add_point(
    grid: &mut Array2<Complex64>,
    cfg: &OfdmGridConfig,
    range: f64,
    speed: f64,
    amplitude: Complex64,
) {
    let rows = phasors(cfg.n_subcarriers, -cfg.range_cycles(range));
    let cols = phasors(cfg.n_symbols, cfg.doppler_cycles(speed));
    for (n, mut row) in grid.outer_iter_mut().enumerate() {
        let a = amplitude * rows[n];
        for (cell, c) in row.iter_mut().zip(&cols) {
            *cell += a * c;
        }
    }
}

fn check_alias(index: usize, range: f64, speed: f64, cfg: &OfdmGridConfig) -> Result<()> {
    let r_max = cfg.max_unambiguous_range();
    let v_max = cfg.max_unambiguous_speed();
    if !(range >= 0.0 && range < r_max) {
        return Err(Error::Alias {
            index,
            reason: format!("range {range} m outside [0, {r_max:.2}) m"),
        });
    }
    if !(speed.abs() < v_max) {
        return Err(Error::Alias {
            index,
            reason: format!("speed {speed} m/s outside (-{v_max:.2}, {v_max:.2}) m/s"),
        });
    }
    Ok(())
}

/// Synthesises one CSI frame: targets, static clutter taps and complex
/// AWGN, with uplink symbols blanked.
pub fn synthesize_frame(truth: &[OfdmTarget], cfg: &Arc<OfdmGridConfig>, seed: u64) -> Result<CsiFrame> {
    for (i, t) in truth.iter().enumerate() {
        check_alias(i, t.range, t.speed, cfg)?;
    }
    let mut frame = CsiFrame::zeros(Arc::clone(cfg));
    for t in truth {
        add_point(&mut frame.grid, cfg, t.range, t.speed, t.amplitude);
    }
    for tap in &cfg.static_clutter_taps {
        add_point(
            &mut frame.grid,
            cfg,
            tap.range,
            0.0,
            Complex64::from_polar(tap.amplitude, tap.phase),
        );
    }
    if cfg.noise_power_db.is_finite() {
        let sigma = (10f64.powf(cfg.noise_power_db / 10.0) / 2.0).sqrt();
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let mut rng = rng_for(seed, 0x0fd3);
        for z in frame.grid.iter_mut() {
            *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    frame.apply_mask();
    Ok(frame)
}

/// Received frame for a transmitted payload: elementwise product of the
/// channel with `payload`, uplink symbols blanked.
pub fn transmit(channel: &CsiFrame, payload: &CsiFrame) -> Result<CsiFrame> {
    if channel.shape() != payload.shape() {
        return Err(Error::Contract("payload shape differs from channel".into()));
    }
    let mut out = channel.clone();
    out.grid.zip_mut_with(&payload.grid, |a, b| *a *= b);
    out.apply_mask();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(mask: Vec<bool>) -> Arc<OfdmGridConfig> {
        let mut cfg = OfdmGridConfig::desk_scale().with_mask(mask);
        cfg.noise_power_db = f64::NEG_INFINITY;
        Arc::new(cfg)
    }

    #[test]
    fn resolutions_match_numerology() {
        let full = OfdmGridConfig::full_scale();
        assert!((full.speed_resolution() - 0.5435).abs() < 1e-3);
        assert!((full.range_resolution() - 1.2198).abs() < 1e-3);
        let desk = OfdmGridConfig::desk_scale();
        assert!((desk.speed_resolution() - full.speed_resolution()).abs() < 1e-9);
        assert!((desk.range_resolution() - full.range_resolution()).abs() < 1e-9);
        full.validate().unwrap();
        desk.validate().unwrap();
    }

    #[test]
    fn dddsu_pattern() {
        let m = dddsu_mask(20, 2, 1);
        let expected = [1, 1, 1, 1, 1, 1, 1, 0, 0, 0];
        for (k, &b) in m.iter().enumerate() {
            assert_eq!(b, expected[k % 10] == 1);
        }
        let full = dddsu_mask(1120, 14, 10);
        assert_eq!(full.iter().filter(|&&b| b).count(), 16 * 52);
    }

    #[test]
    fn empty_scene_is_zero() {
        let cfg = quiet(vec![true; 112]);
        let f = synthesize_frame(&[], &cfg, 0).unwrap();
        assert!(f.grid.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn uplink_columns_are_zero_and_energy_matches() {
        let cfg = quiet(dddsu_mask(112, 2, 1));
        let targets = [
            OfdmTarget {
                range: 31.3,
                speed: 2.2,
                amplitude: Complex64::new(0.5, 0.2),
            },
            OfdmTarget {
                range: 48.0,
                speed: -1.0,
                amplitude: Complex64::new(0.0, 1.0),
            },
        ];
        let f = synthesize_frame(&targets[..1], &cfg, 0).unwrap();
        for (m, &active) in cfg.tdd_mask.iter().enumerate() {
            if !active {
                assert!(f.grid.column(m).iter().all(|z| z.norm() == 0.0));
            }
        }
        let expected = targets[0].amplitude.norm_sqr() * cfg.active_symbols() as f64 * cfg.n_subcarriers as f64;
        assert!((f.energy() - expected).abs() < 1e-9 * expected);
        let both = synthesize_frame(&targets, &cfg, 0).unwrap();
        assert!(both.energy() > 0.0);
    }

    #[test]
    fn alias_names_target() {
        let cfg = quiet(vec![true; 112]);
        let far = cfg.max_unambiguous_range() + 1.0;
        let targets = [
            OfdmTarget {
                range: 20.0,
                speed: 0.0,
                amplitude: Complex64::new(1.0, 0.0),
            },
            OfdmTarget {
                range: far,
                speed: 0.0,
                amplitude: Complex64::new(1.0, 0.0),
            },
        ];
        match synthesize_frame(&targets, &cfg, 0) {
            Err(Error::Alias { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected alias error, got {other:?}"),
        }
        let fast = [OfdmTarget {
            range: 20.0,
            speed: cfg.max_unambiguous_speed(),
            amplitude: Complex64::new(1.0, 0.0),
        }];
        assert!(matches!(
            synthesize_frame(&fast, &cfg, 0),
            Err(Error::Alias { index: 0, .. })
        ));
    }

    #[test]
    fn clutter_is_static_across_frames() {
        let mut cfg = OfdmGridConfig::desk_scale();
        cfg.noise_power_db = f64::NEG_INFINITY;
        cfg.static_clutter_taps = vec![ClutterTap {
            range: 25.0,
            amplitude: 10.0,
            phase: 0.3,
        }];
        let cfg = Arc::new(cfg);
        let a = synthesize_frame(&[], &cfg, 1).unwrap();
        let b = synthesize_frame(&[], &cfg, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dump_layout() {
        let cfg = quiet(dddsu_mask(112, 2, 1));
        let f = synthesize_frame(
            &[OfdmTarget {
                range: 30.0,
                speed: 1.0,
                amplitude: Complex64::new(1.0, 0.0),
            }],
            &cfg,
            0,
        )
        .unwrap();
        let mut bytes = Vec::new();
        f.write_dump(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 8 + 112 + 256 * 112 * 8);
        assert_eq!(&bytes[0..4], &256u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &112u32.to_le_bytes());
        let back = read_csi_dump(&bytes[..]).unwrap();
        assert_eq!(back.mask, cfg.tdd_mask);
        let z = back.grid[[3, 5]];
        assert!((z.re as f64 - f.grid[[3, 5]].re).abs() < 1e-6);
        assert!((z.im as f64 - f.grid[[3, 5]].im).abs() < 1e-6);
    }
}
