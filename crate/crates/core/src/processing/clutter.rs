//! Static clutter removal.
//!
//! Two interchangeable approaches:
//!
//! - [`eca_c_remove`] projects every subcarrier's slow-time sequence off a
//!   low-order polynomial subspace (order 1 removes the mean). Anything
//!   slower than roughly one Doppler bin goes with it, targets included.
//! - [`crap_acquire`] learns a clutter subspace from whole frames (principal
//!   components of the vectorised CSI, without centring so that the static
//!   part dominates), and [`crap_remove`] projects frames off that subspace.
//!   Slow targets survive as long as they decorrelate across the acquisition
//!   frames.

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sensor::CsiFrame;

/// Orthonormal polynomial basis over the downlink symbols of `mask`.
fn slow_time_basis(mask: &[bool], order: usize) -> Vec<Vec<f64>> {
    let m = mask.len();
    let scale = if m > 1 { 2.0 / (m - 1) as f64 } else { 0.0 };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(order);
    for degree in 0..order {
        let mut v: Vec<f64> = (0..m)
            .map(|k| {
                if mask[k] {
                    (k as f64 * scale - 1.0).powi(degree as i32)
                } else {
                    0.0
                }
            })
            .collect();
        // Modified Gram-Schmidt, run twice for stability.
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

/// Removes the projection of each subcarrier's slow-time sequence onto the
/// polynomial subspace of the given order.
pub fn eca_c_remove(csi: &CsiFrame, order: usize) -> Result<CsiFrame> {
    if order == 0 {
        return Err(Error::Contract("ECA-C order must be >= 1".into()));
    }
    let basis = slow_time_basis(csi.mask(), order);
    let mut out = csi.clone();
    for mut row in out.grid.outer_iter_mut() {
        for b in &basis {
            let coef: Complex64 = row.iter().zip(b).map(|(z, w)| z * w).sum();
            row.iter_mut().zip(b).for_each(|(z, w)| *z -= coef * w);
        }
    }
    Ok(out)
}

/// Learned clutter subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterBasis {
    /// Orthonormal under the Frobenius inner product.
    pub components: Vec<Array2<Complex64>>,
    /// Share of the acquisition energy captured by each component.
    pub energy_fractions: Vec<f64>,
}

impl ClutterBasis {
    pub fn empty() -> Self {
        Self {
            components: Vec::new(),
            energy_fractions: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Drops components carrying less than `min_fraction` of the
    /// acquisition energy. Components are sorted by energy, so this
    /// truncates the tail.
    pub fn retain_min_fraction(mut self, min_fraction: f64) -> Self {
        let keep = self.energy_fractions.iter().take_while(|&&e| e >= min_fraction).count();
        self.components.truncate(keep);
        self.energy_fractions.truncate(keep);
        self
    }
}

fn frobenius(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Leading `n_components` principal directions of the (uncentred)
/// vectorised frames. Directions with numerically zero energy are dropped,
/// so the basis may come back shorter than requested.
pub fn crap_acquire(frames: &[CsiFrame], n_components: usize) -> Result<ClutterBasis> {
    if frames.len() < n_components {
        return Err(Error::Contract(format!(
            "clutter acquisition needs at least {n_components} frames, got {}",
            frames.len()
        )));
    }
    if n_components == 0 {
        return Ok(ClutterBasis::empty());
    }
    let shape = frames[0].shape();
    if frames.iter().any(|f| f.shape() != shape) {
        return Err(Error::Contract("acquisition frames differ in shape".into()));
    }

    let f = frames.len();
    let flat: Vec<std::borrow::Cow<'_, [Complex64]>> = frames
        .iter()
        .map(|fr| match fr.grid.as_slice() {
            Some(s) => std::borrow::Cow::Borrowed(s),
            None => std::borrow::Cow::Owned(fr.grid.iter().copied().collect()),
        })
        .collect();
    let mut gram = DMatrix::<Complex64>::zeros(f, f);
    for i in 0..f {
        for j in i..f {
            let g: Complex64 = flat[i].iter().zip(flat[j].iter()).map(|(x, y)| x.conj() * y).sum();
            gram[(i, j)] = g;
            gram[(j, i)] = g.conj();
        }
    }
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let largest = eig.eigenvalues[order[0]].max(0.0);

    let mut components: Vec<Array2<Complex64>> = Vec::with_capacity(n_components);
    let mut energy_fractions = Vec::with_capacity(n_components);
    for &idx in order.iter().take(n_components) {
        let lambda = eig.eigenvalues[idx];
        if !(lambda > 1e-12 * largest) || lambda <= 0.0 {
            break;
        }
        let mut b = Array2::<Complex64>::zeros(shape);
        for (j, frame) in frames.iter().enumerate() {
            let coef = eig.eigenvectors[(j, idx)];
            b.zip_mut_with(&frame.grid, |acc, z| *acc += coef * z);
        }
        // Re-orthogonalise against earlier components before normalising.
        for prev in &components {
            let dot = frobenius(prev, &b);
            b.zip_mut_with(prev, |x, p| *x -= dot * p);
        }
        let norm = frobenius(&b, &b).re.sqrt();
        if norm <= 0.0 {
            break;
        }
        b.mapv_inplace(|z| z / norm);
        components.push(b);
        energy_fractions.push(if total > 0.0 { lambda / total } else { 0.0 });
    }
    Ok(ClutterBasis {
        components,
        energy_fractions,
    })
}

/// One block power step of `basis` against the uncentred scatter of `n`
/// frames produced on demand by `frame`, so the subspace can be learned
/// from far more frames than fit in memory. Energy fractions are the
/// Rayleigh quotients of the refined directions over the total energy.
pub fn crap_refine<F>(basis: &ClutterBasis, n: usize, frame: F) -> Result<ClutterBasis>
where
    F: Fn(usize) -> Result<CsiFrame> + Sync,
{
    use rayon::prelude::*;
    if basis.is_empty() || n == 0 {
        return Ok(basis.clone());
    }
    let shape = basis.components[0].dim();
    let k = basis.len();
    // Fixed chunks summed in order keep the result independent of the
    // thread count.
    const CHUNK: usize = 64;
    let partials = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Array2::<Complex64>::zeros(shape); k];
            let mut total = 0.0f64;
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let x = frame(i)?;
                if x.shape() != shape {
                    return Err(Error::Contract("refinement frame differs in shape".into()));
                }
                total += x.energy();
                for (a, b) in acc.iter_mut().zip(&basis.components) {
                    let coef = frobenius(b, &x.grid).conj();
                    a.zip_mut_with(&x.grid, |s, z| *s += coef * z);
                }
            }
            Ok((acc, total))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut parts = partials.into_iter();
    let (mut acc, mut total) = parts.next().expect("n > 0");
    for (a, t) in parts {
        for (x, y) in acc.iter_mut().zip(&a) {
            *x += y;
        }
        total += t;
    }

    let mut components: Vec<Array2<Complex64>> = Vec::with_capacity(k);
    let mut norms = Vec::with_capacity(k);
    for mut b in acc {
        for prev in &components {
            let dot = frobenius(prev, &b);
            b.zip_mut_with(prev, |x, p| *x -= dot * p);
        }
        let norm = frobenius(&b, &b).re.sqrt();
        if !(norm > 0.0) {
            break;
        }
        b.mapv_inplace(|z| z / norm);
        components.push(b);
        norms.push(norm);
    }
    // For a unit direction u, |S u| approaches its eigenvalue as u converges.
    let energy_fractions = norms
        .iter()
        .map(|l| if total > 0.0 { l / total } else { 0.0 })
        .collect();
    Ok(ClutterBasis {
        components,
        energy_fractions,
    })
}

/// Orthogonal projection of `csi` off the clutter subspace.
pub fn crap_remove(csi: &CsiFrame, basis: &ClutterBasis) -> Result<CsiFrame> {
    if basis.components.iter().any(|b| b.dim() != csi.shape()) {
        return Err(Error::Contract("clutter basis shape differs from frame".into()));
    }
    let mut out = csi.clone();
    for b in &basis.components {
        let coef = frobenius(b, &out.grid);
        out.grid.zip_mut_with(b, |z, c| *z -= coef * c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{dddsu_mask, synthesize_frame, ClutterTap, OfdmGridConfig, OfdmTarget};
    use std::sync::Arc;

    fn clutter_cfg(noise_db: f64) -> Arc<OfdmGridConfig> {
        let mut c = OfdmGridConfig::desk_scale().with_mask(dddsu_mask(112, 2, 1));
        c.noise_power_db = noise_db;
        c.static_clutter_taps = vec![
            ClutterTap {
                range: 22.0,
                amplitude: 10.0,
                phase: 0.4,
            },
            ClutterTap {
                range: 37.5,
                amplitude: 6.0,
                phase: -1.0,
            },
        ];
        Arc::new(c)
    }

    #[test]
    fn eca_removes_static_clutter() {
        let cfg = clutter_cfg(f64::NEG_INFINITY);
        let f = synthesize_frame(&[], &cfg, 0).unwrap();
        let out = eca_c_remove(&f, 1).unwrap();
        assert!(out.energy() < 0.01 * f.energy());
    }

    #[test]
    fn eca_output_has_zero_slow_time_mean() {
        let cfg = clutter_cfg(0.0);
        let t = [OfdmTarget {
            range: 30.0,
            speed: 0.8,
            amplitude: Complex64::new(1.0, 0.0),
        }];
        let f = synthesize_frame(&t, &cfg, 4).unwrap();
        for order in 1..=3 {
            let out = eca_c_remove(&f, order).unwrap();
            for row in out.grid.outer_iter() {
                let mean: Complex64 = row.iter().sum::<Complex64>() / row.len() as f64;
                assert!(mean.norm() < 1e-10);
            }
        }
        assert!(eca_c_remove(&f, 0).is_err());
    }

    #[test]
    fn basis_is_orthonormal_and_projection_idempotent() {
        let cfg = clutter_cfg(-10.0);
        let frames: Vec<_> = (0..8)
            .map(|k| {
                let t = [OfdmTarget {
                    range: 25.0 + k as f64,
                    speed: 2.0,
                    amplitude: Complex64::from_polar(1.0, k as f64),
                }];
                synthesize_frame(&t, &cfg, k).unwrap()
            })
            .collect();
        let basis = crap_acquire(&frames, 3).unwrap();
        assert_eq!(basis.len(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let d = frobenius(&basis.components[i], &basis.components[j]);
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((d - Complex64::new(expected, 0.0)).norm() < 1e-9);
            }
        }
        assert!(basis.energy_fractions.windows(2).all(|w| w[0] >= w[1]));
        let once = crap_remove(&frames[0], &basis).unwrap();
        let twice = crap_remove(&once, &basis).unwrap();
        let diff = once
            .grid
            .iter()
            .zip(twice.grid.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10);
    }

    #[test]
    fn acquired_clutter_is_removed() {
        let cfg = clutter_cfg(-20.0);
        let frames: Vec<_> = (0..10).map(|k| synthesize_frame(&[], &cfg, k).unwrap()).collect();
        let basis = crap_acquire(&frames, 3).unwrap();
        let test = synthesize_frame(&[], &cfg, 99).unwrap();
        let out = crap_remove(&test, &basis).unwrap();
        assert!(out.energy() < 0.05 * test.energy());
    }

    #[test]
    fn refinement_keeps_a_converged_basis() {
        let cfg = clutter_cfg(f64::NEG_INFINITY);
        let frames: Vec<CsiFrame> = (0..4).map(|i| synthesize_frame(&[], &cfg, i).unwrap()).collect();
        let basis = crap_acquire(&frames, 1).unwrap();
        let refined = crap_refine(&basis, 10, |i| Ok(frames[i % 4].clone())).unwrap();
        let dot = frobenius(&basis.components[0], &refined.components[0]).norm();
        assert!((dot - 1.0).abs() < 1e-10, "{dot}");
        assert!((refined.energy_fractions[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn refinement_over_more_frames_reduces_target_leakage() {
        let cfg = clutter_cfg(f64::NEG_INFINITY);
        let scene = |i: usize| {
            let t = OfdmTarget {
                range: 30.0 + 0.01 * i as f64,
                speed: 1.0,
                amplitude: Complex64::from_polar(1.0, 2.4 * i as f64),
            };
            synthesize_frame(&[t], &cfg, i as u64)
        };
        let clean = synthesize_frame(&[], &cfg, 0).unwrap();
        let leak = |b: &ClutterBasis| crap_remove(&clean, b).unwrap().energy() / clean.energy();
        let few: Vec<CsiFrame> = (0..8).map(|i| scene(i * 32).unwrap()).collect();
        let initial = crap_acquire(&few, 1).unwrap();
        let refined = crap_refine(&initial, 256, scene).unwrap();
        assert!(
            leak(&refined) < 0.25 * leak(&initial),
            "{} vs {}",
            leak(&refined),
            leak(&initial)
        );
    }

    #[test]
    fn empty_basis_is_identity() {
        let cfg = clutter_cfg(-20.0);
        let f = synthesize_frame(&[], &cfg, 0).unwrap();
        let basis = crap_acquire(std::slice::from_ref(&f), 0).unwrap();
        assert!(basis.is_empty());
        assert_eq!(crap_remove(&f, &basis).unwrap(), f);
    }

    #[test]
    fn too_few_frames() {
        let cfg = clutter_cfg(-20.0);
        let f = synthesize_frame(&[], &cfg, 0).unwrap();
        assert!(matches!(crap_acquire(&[f], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn rank_deficient_acquisition_drops_null_directions() {
        let cfg = clutter_cfg(f64::NEG_INFINITY);
        let frames: Vec<_> = (0..4).map(|k| synthesize_frame(&[], &cfg, k).unwrap()).collect();
        let basis = crap_acquire(&frames, 3).unwrap();
        assert_eq!(basis.len(), 1);
        assert!((basis.energy_fractions[0] - 1.0).abs() < 1e-9);
    }
}
