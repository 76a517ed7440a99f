//! TDD-aware iterative peak detection.
//!
//! Blanked uplink symbols act as a periodic slow-time window, so every
//! target is accompanied by weighted copies of its peak at fixed Doppler
//! offsets ("impulsive sidelobes"). Plain CFAR reports those copies as
//! targets. The detector here walks CFAR candidates strongest first and,
//! for each one:
//!
//! 1. refines range, speed and complex amplitude with a local fine-grid
//!    Fourier evaluation of the residual CSI;
//! 2. re-synthesises the candidate (TDD mask included) and subtracts it in
//!    the complex CSI domain;
//! 3. compares the power at the mask's predicted sidelobe offsets before
//!    and after the subtraction.
//!
//! A genuine target carries its own sidelobes, so removing it lowers the
//! sidelobe power by at least `sidelobe_drop_db`; a sidelobe mistaken for a
//! target does not, and is discarded without touching the residual.

use std::collections::HashSet;
use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::cfar::{cfar_mask, local_peaks, CfarConfig};
use super::periodogram::{power_grid, to_db, Periodogram, Window};
use super::Detection;
use crate::error::{Error, Result};
use crate::sensor::{CsiFrame, OfdmGridConfig, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TddDetectConfig {
    pub cfar: CfarConfig,
    /// Minimum sidelobe power reduction for accepting a candidate.
    pub sidelobe_drop_db: f64,
    /// Candidates weaker than this (relative to the frame maximum) are not
    /// examined.
    pub min_power_db: f64,
    /// Local oversampling of the refinement grid per periodogram bin.
    pub fine_factor: usize,
    pub max_refine_steps: usize,
    pub max_iterations: usize,
}

impl Default for TddDetectConfig {
    fn default() -> Self {
        Self {
            cfar: CfarConfig::default(),
            sidelobe_drop_db: 6.0,
            min_power_db: -40.0,
            fine_factor: 16,
            max_refine_steps: 8,
            max_iterations: 64,
        }
    }
}

/// Doppler offsets (cycles per symbol) of the strongest impulsive
/// sidelobes produced by a TDD mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SidelobeModel {
    pub offsets: Vec<f64>,
    /// Power of each sidelobe relative to the main lobe.
    pub levels: Vec<f64>,
}

/// Secondary maxima weaker than this (relative to the main lobe) are not
/// considered impulsive sidelobes.
const SIDELOBE_FLOOR: f64 = 1e-3;

fn mask_spectrum(mask: &[bool], f: f64) -> f64 {
    mask.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(m, _)| Complex64::from_polar(1.0, -2.0 * PI * f * m as f64))
        .sum::<Complex64>()
        .norm_sqr()
}

impl SidelobeModel {
    /// Locates the two strongest secondary maxima of `|DFT(mask)|²`.
    ///
    /// Maxima are found on the native DFT grid (where a fully populated
    /// mask has no sidelobes at all) and then refined on a 64x finer grid.
    pub fn from_mask(mask: &[bool]) -> Self {
        let m = mask.len();
        let main = mask_spectrum(mask, 0.0);
        if m < 3 || main == 0.0 {
            return Self {
                offsets: Vec::new(),
                levels: Vec::new(),
            };
        }
        let native: Vec<f64> = (0..m).map(|k| mask_spectrum(mask, k as f64 / m as f64)).collect();
        let mut peaks: Vec<(usize, f64)> = (1..m)
            .filter(|&k| {
                let prev = native[(k + m - 1) % m];
                let next = native[(k + 1) % m];
                native[k] >= prev && native[k] >= next && native[k] > SIDELOBE_FLOOR * main
            })
            .map(|k| (k, native[k]))
            .collect();
        peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut offsets = Vec::new();
        let mut levels = Vec::new();
        for (k, _) in peaks.into_iter().take(2) {
            let centre = k as f64 / m as f64;
            let step = 1.0 / (64.0 * m as f64);
            let (best, level) = (-64..=64)
                .map(|i| {
                    let f = centre + i as f64 * step;
                    (f, mask_spectrum(mask, f))
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty search");
            // Express as a signed offset in (-0.5, 0.5].
            let signed = best - best.round();
            offsets.push(signed);
            levels.push(level / main);
        }
        Self { offsets, levels }
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Offsets in m/s for a given grid.
    pub fn speed_offsets(&self, cfg: &OfdmGridConfig) -> Vec<f64> {
        self.offsets.iter().map(|f| cycles_to_speed(cfg, *f)).collect()
    }
}

fn cycles_to_range(cfg: &OfdmGridConfig, u: f64) -> f64 {
    u * SPEED_OF_LIGHT / (2.0 * cfg.subcarrier_spacing)
}

fn cycles_to_speed(cfg: &OfdmGridConfig, f: f64) -> f64 {
    f * SPEED_OF_LIGHT / (2.0 * cfg.symbol_duration * cfg.carrier_freq)
}

/// Direct Fourier evaluation of a CSI grid at continuous `(u, f)`, with
/// `u` in cycles per subcarrier and `f` in cycles per symbol.
struct Evaluator {
    w_fast: Vec<f64>,
    w_slow: Vec<f64>,
}

impl Evaluator {
    fn new(window: Window, n: usize, m: usize) -> Self {
        Self {
            w_fast: window.coefficients(n),
            w_slow: window.coefficients(m),
        }
    }

    fn rectangular(n: usize, m: usize) -> Self {
        Self::new(Window::Rectangular, n, m)
    }

    /// `y[n] = Σ_m w_m·grid[n, m]·e^{-j2πmf}`.
    fn slow_sum(&self, grid: &Array2<Complex64>, f: f64) -> Vec<Complex64> {
        let ph: Vec<Complex64> = self
            .w_slow
            .iter()
            .enumerate()
            .map(|(m, w)| Complex64::from_polar(*w, -2.0 * PI * f * m as f64))
            .collect();
        grid.outer_iter()
            .map(|row| row.iter().zip(&ph).map(|(z, p)| z * p).sum())
            .collect()
    }

    /// `Σ_n w_n·y[n]·e^{+j2πnu}`.
    fn fast_sum(&self, y: &[Complex64], u: f64) -> Complex64 {
        let step = Complex64::from_polar(1.0, 2.0 * PI * u);
        let mut ph = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for (n, (z, w)) in y.iter().zip(&self.w_fast).enumerate() {
            if n % 64 == 0 {
                ph = Complex64::from_polar(1.0, 2.0 * PI * u * n as f64);
            }
            acc += z * ph * w;
            ph *= step;
        }
        acc
    }

    fn value(&self, grid: &Array2<Complex64>, u: f64, f: f64) -> Complex64 {
        self.fast_sum(&self.slow_sum(grid, f), u)
    }
}

/// Parabolic vertex offset from three samples around a maximum.
fn parabolic(left: f64, centre: f64, right: f64) -> f64 {
    let denom = left - 2.0 * centre + right;
    if denom.abs() < f64::EPSILON * centre.abs().max(1.0) {
        0.0
    } else {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    }
}

struct Refined {
    u: f64,
    f: f64,
    power: f64,
}

/// Pattern search on a 3x3 stencil whose step halves from half a bin down
/// to `1/fine` of a bin, finished with a separable parabolic fit. `None`
/// when the maximum wanders more than `max_steps` bins from `start`.
fn refine(
    eval: &Evaluator,
    grid: &Array2<Complex64>,
    start: (f64, f64),
    bin: (f64, f64),
    fine: usize,
    max_steps: usize,
) -> Option<Refined> {
    let fine = fine.max(2) as f64;
    let limit = max_steps.max(1) as f64;
    let (mut uc, mut fc) = start;
    let (mut du, mut df) = (0.5 * bin.0, 0.5 * bin.1);
    loop {
        let mut power = [[0.0; 3]; 3];
        for (j, row) in power.iter_mut().enumerate() {
            let y = eval.slow_sum(grid, fc + (j as f64 - 1.0) * df);
            for (i, cell) in row.iter_mut().enumerate() {
                *cell = eval.fast_sum(&y, uc + (i as f64 - 1.0) * du).norm_sqr();
            }
        }
        let (bj, bi) = (0..9)
            .map(|k| (k / 3, k % 3))
            .max_by(|a, b| power[a.0][a.1].total_cmp(&power[b.0][b.1]).then(b.cmp(a)))
            .expect("non-empty stencil");
        if (bi, bj) != (1, 1) {
            uc += (bi as f64 - 1.0) * du;
            fc += (bj as f64 - 1.0) * df;
            if (uc - start.0).abs() > limit * bin.0 || (fc - start.1).abs() > limit * bin.1 {
                return None;
            }
            continue;
        }
        if du * fine > bin.0 * 1.000_001 {
            du *= 0.5;
            df *= 0.5;
            continue;
        }
        let di = parabolic(power[1][0], power[1][1], power[1][2]);
        let dj = parabolic(power[0][1], power[1][1], power[2][1]);
        let u = uc + di * du;
        let f = fc + dj * df;
        let power = eval.value(grid, u, f).norm_sqr().max(power[1][1]);
        return Some(Refined { u, f, power });
    }
}

/// Adds `amplitude·e^{-j2πnu}·e^{+j2πmf}` on downlink symbols.
fn add_psf(grid: &mut Array2<Complex64>, mask: &[bool], u: f64, f: f64, amplitude: Complex64) {
    let cols: Vec<Complex64> = mask
        .iter()
        .enumerate()
        .map(|(m, &b)| {
            if b {
                Complex64::from_polar(1.0, 2.0 * PI * f * m as f64)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    for (n, mut row) in grid.outer_iter_mut().enumerate() {
        let a = amplitude * Complex64::from_polar(1.0, -2.0 * PI * u * n as f64);
        for (cell, c) in row.iter_mut().zip(&cols) {
            *cell += a * c;
        }
    }
}

/// Candidate dismissed as an impulsive sidelobe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RejectedCandidate {
    pub range: f64,
    pub speed: f64,
    pub drop_db: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TddDetectReport {
    /// Accepted detections in acceptance order (descending power).
    pub detections: Vec<Detection>,
    pub rejected: Vec<RejectedCandidate>,
    /// Candidates dropped for other reasons (non-convergent refinement).
    pub diagnostics: Vec<String>,
    pub iterations: usize,
}

struct Accepted {
    u: f64,
    f: f64,
}

/// Iterative TDD-aware detection on `csi`, whose periodogram is `p`.
pub fn tdd_peak_detect(p: &Periodogram, csi: &CsiFrame, cfg: &TddDetectConfig) -> Result<TddDetectReport> {
    cfg.cfar.validate()?;
    let (n, m) = csi.shape();
    let pad = p.zero_pad_factor.max(1);
    if p.shape() != (n * pad, m * pad) {
        return Err(Error::Contract(format!(
            "periodogram shape {:?} does not belong to a {n}x{m} frame at pad {pad}",
            p.shape()
        )));
    }
    let mut report = TddDetectReport::default();
    let reference = p.reference_power;
    if reference <= 0.0 {
        return Ok(report);
    }
    let grid_cfg = &csi.config;
    let mask = csi.mask();
    let active = mask.iter().filter(|&&b| b).count();
    let model = SidelobeModel::from_mask(mask);
    let windowed = Evaluator::new(p.window, n, m);
    let plain = Evaluator::rectangular(n, m);
    let floor = reference * 10f64.powf(cfg.min_power_db / 10.0);
    let bin = (1.0 / (n * pad) as f64, 1.0 / (m * pad) as f64);
    let (rows, cols) = p.shape();

    let sidelobe_power = |grid: &Array2<Complex64>, u: f64, f: f64| -> f64 {
        model
            .offsets
            .iter()
            .map(|d| plain.value(grid, u, f + d).norm_sqr())
            .sum()
    };
    let same_cell = |a: &Accepted, u: f64, f: f64| {
        let du = (a.u - u) * n as f64;
        // Doppler is cyclic.
        let cycles = a.f - f;
        let df = (cycles - cycles.round()) * m as f64;
        du.abs() < 1.0 && df.abs() < 1.0
    };

    let mut residual = csi.grid.clone();
    let mut power = p.linear().mapv(|x| x * reference);
    let mut accepted: Vec<Accepted> = Vec::new();
    let mut dismissed: HashSet<(usize, usize)> = HashSet::new();

    // Candidates strongest last, valid until the residual changes.
    let mut candidates: Option<Vec<(usize, usize)>> = None;
    while report.iterations < cfg.max_iterations {
        report.iterations += 1;
        let queue = candidates.get_or_insert_with(|| {
            let flags = cfar_mask(&power, &cfg.cfar);
            let mut c: Vec<(usize, usize)> = local_peaks(&power, &flags)
                .into_iter()
                .filter(|c| power[[c.0, c.1]] >= floor && !dismissed.contains(c))
                .collect();
            c.sort_by(|a, b| power[[a.0, a.1]].total_cmp(&power[[b.0, b.1]]).then(b.cmp(a)));
            c
        });
        let Some(cell) = queue.pop() else {
            break;
        };
        let u0 = cell.0 as f64 * bin.0;
        let f0 = (cell.1 as f64 - (cols / 2) as f64) * bin.1;
        debug_assert!(cell.0 < rows);

        if accepted.iter().any(|a| same_cell(a, u0, f0)) {
            dismissed.insert(cell);
            continue;
        }
        let Some(est) = refine(
            &windowed,
            &residual,
            (u0, f0),
            bin,
            cfg.fine_factor,
            cfg.max_refine_steps,
        ) else {
            let msg = format!(
                "refinement did not converge around range {:.2} m, speed {:.2} m/s",
                cycles_to_range(grid_cfg, u0),
                cycles_to_speed(grid_cfg, f0)
            );
            log::debug!("{msg}");
            report.diagnostics.push(msg);
            dismissed.insert(cell);
            continue;
        };
        if accepted.iter().any(|a| same_cell(a, est.u, est.f)) {
            dismissed.insert(cell);
            continue;
        }

        let amplitude = plain.value(&residual, est.u, est.f) / (n * active) as f64;
        let mut trial = residual.clone();
        add_psf(&mut trial, mask, est.u, est.f, -amplitude);

        let drop_db = if model.is_empty() {
            f64::INFINITY
        } else {
            let before = sidelobe_power(&residual, est.u, est.f);
            let after = sidelobe_power(&trial, est.u, est.f);
            if before <= 0.0 || after <= 0.0 {
                f64::INFINITY
            } else {
                10.0 * (before / after).log10()
            }
        };

        let range = cycles_to_range(grid_cfg, est.u);
        let speed = cycles_to_speed(grid_cfg, est.f);
        if drop_db >= cfg.sidelobe_drop_db {
            report.detections.push(Detection {
                range,
                speed,
                power_db: to_db(est.power / reference).min(0.0),
            });
            accepted.push(Accepted { u: est.u, f: est.f });
            residual = trial;
            candidates = None;
            let frame = CsiFrame {
                grid: residual.clone(),
                config: csi.config.clone(),
            };
            power = power_grid(&frame, p.window, pad);
        } else {
            report.rejected.push(RejectedCandidate { range, speed, drop_db });
            dismissed.insert(cell);
        }
    }
    Ok(report)
}
