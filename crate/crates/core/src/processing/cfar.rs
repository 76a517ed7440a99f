//! Two-dimensional cell-averaging CFAR.
//!
//! The training region of a cell is the rectangle of half-size
//! `guard + train` around it minus the guard rectangle of half-size
//! `guard` (which contains the cell itself). Both rectangles are clipped
//! at the borders, and the threshold factor follows the actual number of
//! training cells: `α = N·(pfa^(-1/N) − 1)`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::periodogram::{to_db, Periodogram};
use super::Detection;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfarConfig {
    /// Guard cells per side as `[range, doppler]`.
    pub guard: [usize; 2],
    /// Training cells per side beyond the guard, `[range, doppler]`.
    pub train: [usize; 2],
    pub pfa: f64,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self {
            guard: [2, 2],
            train: [8, 8],
            pfa: 1e-4,
        }
    }
}

impl CfarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train == [0, 0] {
            return Err(Error::Contract("CFAR training window is empty".into()));
        }
        if !(self.pfa > 0.0 && self.pfa < 1.0) {
            return Err(Error::Contract(format!("pfa {} outside (0, 1)", self.pfa)));
        }
        Ok(())
    }

    pub fn threshold_factor(&self, n_train: usize) -> f64 {
        let n = n_train as f64;
        n * (self.pfa.powf(-1.0 / n) - 1.0)
    }
}

/// A flagged cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfarHit {
    pub range_bin: usize,
    pub doppler_bin: usize,
    pub power_db: f64,
}

/// Summed-area table with a zero row/column prepended.
struct Integral {
    sums: Array2<f64>,
}

impl Integral {
    fn new(power: &Array2<f64>) -> Self {
        let (rows, cols) = power.dim();
        let mut sums = Array2::zeros((rows + 1, cols + 1));
        for r in 0..rows {
            let mut acc = 0.0;
            for c in 0..cols {
                acc += power[[r, c]];
                sums[[r + 1, c + 1]] = sums[[r, c + 1]] + acc;
            }
        }
        Self { sums }
    }

    /// Sum over rows `r0..r1`, columns `c0..c1` (half-open).
    fn sum(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        self.sums[[r1, c1]] - self.sums[[r0, c1]] - self.sums[[r1, c0]] + self.sums[[r0, c0]]
    }
}

fn clipped(center: usize, half: usize, len: usize) -> (usize, usize) {
    (center.saturating_sub(half), (center + half + 1).min(len))
}

/// Flags over a linear power grid.
pub(crate) fn cfar_mask(power: &Array2<f64>, cfg: &CfarConfig) -> Array2<bool> {
    let (rows, cols) = power.dim();
    let integral = Integral::new(power);
    let outer = [cfg.guard[0] + cfg.train[0], cfg.guard[1] + cfg.train[1]];
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (or0, or1) = clipped(r, outer[0], rows);
        let (oc0, oc1) = clipped(c, outer[1], cols);
        let (gr0, gr1) = clipped(r, cfg.guard[0], rows);
        let (gc0, gc1) = clipped(c, cfg.guard[1], cols);
        let n_outer = (or1 - or0) * (oc1 - oc0);
        let n_guard = (gr1 - gr0) * (gc1 - gc0);
        let n_train = n_outer - n_guard;
        if n_train == 0 {
            return false;
        }
        let train_sum = integral.sum(or0, or1, oc0, oc1) - integral.sum(gr0, gr1, gc0, gc1);
        let noise = (train_sum / n_train as f64).max(0.0);
        power[[r, c]] > cfg.threshold_factor(n_train) * noise
    })
}

/// All cells whose power exceeds the CA-CFAR threshold.
pub fn ca_cfar(p: &Periodogram, cfg: &CfarConfig) -> Result<Vec<CfarHit>> {
    cfg.validate()?;
    let mask = cfar_mask(&p.linear(), cfg);
    Ok(mask
        .indexed_iter()
        .filter(|(_, &hit)| hit)
        .map(|((r, c), _)| CfarHit {
            range_bin: r,
            doppler_bin: c,
            power_db: p.power_db[[r, c]],
        })
        .collect())
}

/// Flagged cells that are also maxima of their flagged 8-neighbourhood.
pub(crate) fn local_peaks(power: &Array2<f64>, mask: &Array2<bool>) -> Vec<(usize, usize)> {
    let (rows, cols) = power.dim();
    let mut peaks = Vec::new();
    for ((r, c), &hit) in mask.indexed_iter() {
        if !hit {
            continue;
        }
        let p = power[[r, c]];
        let mut is_peak = true;
        'scan: for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr < 0 || cc < 0 || rr >= rows as i64 || cc >= cols as i64 {
                    continue;
                }
                let (rr, cc) = (rr as usize, cc as usize);
                let q = power[[rr, cc]];
                // Ties go to the earlier cell in row-major order.
                if q > p || (q == p && (rr, cc) < (r, c)) {
                    is_peak = false;
                    break 'scan;
                }
            }
        }
        if is_peak {
            peaks.push((r, c));
        }
    }
    peaks
}

/// Plain CFAR detector: one detection per local peak of the flagged
/// cells, at the bin centre, in descending power.
pub fn cfar_detections(p: &Periodogram, cfg: &CfarConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let linear = p.linear();
    let mask = cfar_mask(&linear, cfg);
    let mut peaks = local_peaks(&linear, &mask);
    peaks.sort_by(|a, b| linear[[b.0, b.1]].total_cmp(&linear[[a.0, a.1]]).then(a.cmp(b)));
    Ok(peaks
        .into_iter()
        .map(|(r, c)| Detection {
            range: p.range_axis[r],
            speed: p.speed_axis[c],
            power_db: to_db(linear[[r, c]]).min(0.0),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processing::periodogram::Window;
    use crate::sensor::OfdmGridConfig;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Exp1};

    fn grid_periodogram(power: Array2<f64>) -> Periodogram {
        let cfg = OfdmGridConfig::desk_scale();
        Periodogram::from_linear(power, &cfg, 1, Window::Rectangular)
    }

    #[test]
    fn threshold_factor_matches_closed_form() {
        let cfg = CfarConfig::default();
        let n = 416;
        let alpha = cfg.threshold_factor(n);
        // For exponential noise, Pfa = (1 + α/N)^(-N).
        let pfa = (1.0 + alpha / n as f64).powf(-(n as f64));
        assert!((pfa - 1e-4).abs() < 1e-12);
    }

    #[test]
    fn single_peak_on_clean_floor() {
        let mut power = Array2::zeros((64, 64));
        power[[20, 30]] = 1.0;
        let p = grid_periodogram(power);
        let hits = ca_cfar(&p, &CfarConfig::default()).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!((hits[0].range_bin, hits[0].doppler_bin), (20, 30));
    }

    #[test]
    fn plateau_is_flagged_whole() {
        let mut power = Array2::zeros((64, 64));
        for r in 20..22 {
            power[[r, 30]] = 1.0;
        }
        let p = grid_periodogram(power);
        let hits = ca_cfar(&p, &CfarConfig::default()).unwrap();
        let cells: Vec<_> = hits.iter().map(|h| (h.range_bin, h.doppler_bin)).collect();
        assert_eq!(cells, vec![(20, 30), (21, 30)]);
    }

    #[test]
    fn empirical_pfa_on_exponential_noise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let power = Array2::from_shape_fn((1000, 1000), |_| {
            let x: f64 = Exp1.sample(&mut rng);
            x
        });
        let cfg = CfarConfig::default();
        let flagged = cfar_mask(&power, &cfg).iter().filter(|&&b| b).count();
        let rate = flagged as f64 / 1e6;
        assert!(rate > 0.5e-4 && rate < 2e-4, "pfa {rate}");
    }

    #[test]
    fn border_cells_use_clipped_window() {
        let mut power = Array2::from_elem((32, 32), 1.0);
        power[[0, 0]] = 1e4;
        let mask = cfar_mask(&power, &CfarConfig::default());
        assert!(mask[[0, 0]]);
        assert_eq!(mask.iter().filter(|&&b| b).count(), 1);
    }

    #[test]
    fn invalid_configs() {
        let p = grid_periodogram(Array2::zeros((8, 8)));
        let bad_pfa = CfarConfig {
            pfa: 1.0,
            ..Default::default()
        };
        assert!(ca_cfar(&p, &bad_pfa).is_err());
        let no_train = CfarConfig {
            train: [0, 0],
            ..Default::default()
        };
        assert!(ca_cfar(&p, &no_train).is_err());
    }

    #[test]
    fn peaks_are_sorted_and_local() {
        let mut power = Array2::zeros((64, 64));
        power[[10, 10]] = 0.5;
        power[[10, 11]] = 0.2;
        power[[40, 50]] = 1.0;
        let p = grid_periodogram(power);
        let d = cfar_detections(&p, &CfarConfig::default()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].power_db, 0.0);
        assert!((d[1].power_db + 3.0103).abs() < 1e-3);
    }
}
