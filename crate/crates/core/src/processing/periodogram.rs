//! Range-Doppler periodogram: IDFT over subcarriers, DFT over symbols.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::sensor::{CsiFrame, OfdmGridConfig};

/// Power floor relative to the frame maximum.
pub const FLOOR_DB: f64 = -300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann if n <= 1 => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1) as f64).cos())
                .collect(),
        }
    }
}

/// Power over `[range bin × Doppler bin]` in dB, normalised to 0 dB at the
/// maximum. Doppler bins are centred: column `j` holds speed
/// `speed_axis[j]`, increasing from negative to positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Periodogram {
    pub power_db: Array2<f64>,
    pub range_axis: Vec<f64>,
    pub speed_axis: Vec<f64>,
    pub zero_pad_factor: usize,
    pub window: Window,
    /// Linear power of the maximum before normalisation (0 for an empty frame).
    pub reference_power: f64,
}

impl Periodogram {
    pub fn shape(&self) -> (usize, usize) {
        self.power_db.dim()
    }

    pub fn range_bin_width(&self) -> f64 {
        self.range_axis.get(1).map_or(0.0, |r| r - self.range_axis[0])
    }

    pub fn speed_bin_width(&self) -> f64 {
        self.speed_axis.get(1).map_or(0.0, |v| v - self.speed_axis[0])
    }

    /// Linear power relative to the maximum.
    pub fn linear(&self) -> Array2<f64> {
        self.power_db
            .mapv(|p| if p <= FLOOR_DB { 0.0 } else { 10f64.powf(p / 10.0) })
    }

    /// Bin indices of the maximum (first one in row-major order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = ((0, 0), f64::NEG_INFINITY);
        for (idx, &p) in self.power_db.indexed_iter() {
            if p > best.1 {
                best = (idx, p);
            }
        }
        best.0
    }

    pub(crate) fn from_linear(
        power: Array2<f64>,
        cfg: &OfdmGridConfig,
        zero_pad_factor: usize,
        window: Window,
    ) -> Self {
        let reference = power.iter().copied().fold(0.0, f64::max);
        let power_db = if reference > 0.0 {
            power.mapv(|p| to_db(p / reference))
        } else {
            power.mapv(|_| FLOOR_DB)
        };
        let (rows, cols) = power.dim();
        let dr = cfg.range_resolution() / zero_pad_factor as f64;
        let dv = cfg.speed_resolution() / zero_pad_factor as f64;
        Self {
            power_db,
            range_axis: (0..rows).map(|p| p as f64 * dr).collect(),
            speed_axis: (0..cols).map(|j| (j as f64 - (cols / 2) as f64) * dv).collect(),
            zero_pad_factor,
            window,
            reference_power: reference,
        }
    }

    /// Little-endian dump: `u32 rows, u32 cols`, then `f32` dB values in
    /// row-major order.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (rows, cols) = self.shape();
        w.write_all(&(rows as u32).to_le_bytes())?;
        w.write_all(&(cols as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(rows * cols * 4);
        for p in self.power_db.iter() {
            buf.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }
}

pub(crate) fn to_db(ratio: f64) -> f64 {
    if ratio > 0.0 {
        (10.0 * ratio.log10()).max(FLOOR_DB)
    } else {
        FLOOR_DB
    }
}

/// Unnormalised linear power `|Σ_n Σ_m w·csi·e^{+j2πnp/N'}·e^{-j2πmq/M'}|²`
/// with the Doppler axis shifted so the zero-speed bin sits at `M'/2`.
pub(crate) fn power_grid(csi: &CsiFrame, window: Window, zero_pad_factor: usize) -> Array2<f64> {
    let (n_sc, n_sym) = csi.shape();
    let rows = n_sc * zero_pad_factor;
    let cols = n_sym * zero_pad_factor;
    let w_fast = window.coefficients(n_sc);
    let w_slow = window.coefficients(n_sym);

    let mut planner = FftPlanner::<f64>::new();
    let doppler_fft = planner.plan_fft_forward(cols);
    let range_ifft = planner.plan_fft_inverse(rows);

    // Slow-time DFT per subcarrier, written transposed: spectra[m * rows + n].
    let mut spectra = vec![Complex64::new(0.0, 0.0); rows * cols];
    let mut line = vec![Complex64::new(0.0, 0.0); cols];
    for (n, row) in csi.grid.outer_iter().enumerate() {
        line.fill(Complex64::new(0.0, 0.0));
        for (m, z) in row.iter().enumerate() {
            line[m] = z * (w_fast[n] * w_slow[m]);
        }
        doppler_fft.process(&mut line);
        for (m, z) in line.iter().enumerate() {
            spectra[m * rows + n] = *z;
        }
    }
    for chunk in spectra.chunks_exact_mut(rows) {
        range_ifft.process(chunk);
    }

    let half = cols / 2;
    Array2::from_shape_fn((rows, cols), |(p, j)| {
        let q = (j + cols - half) % cols;
        spectra[q * rows + p].norm_sqr()
    })
}

/// Range-Doppler periodogram of `csi`, calibrated with its grid numerology.
pub fn periodogram(csi: &CsiFrame, window: Window, zero_pad_factor: usize) -> Periodogram {
    let pad = zero_pad_factor.max(1);
    let power = power_grid(csi, window, pad);
    Periodogram::from_linear(power, &csi.config, pad, window)
}
