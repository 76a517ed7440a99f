use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sensor::CsiFrame;

const MIN_TX_MAGNITUDE: f64 = 1e-12;

/// Elementwise `rx / tx` on downlink cells. Uplink cells and cells with a
/// vanishing transmit symbol are set to zero.
pub fn extract_csi(rx: &CsiFrame, tx: &CsiFrame) -> Result<CsiFrame> {
    if rx.shape() != tx.shape() {
        return Err(Error::Contract(format!(
            "rx shape {:?} differs from tx shape {:?}",
            rx.shape(),
            tx.shape()
        )));
    }
    if rx.mask() != tx.mask() {
        return Err(Error::Contract("rx and tx TDD masks differ".into()));
    }
    let mut out = rx.clone();
    let mask = rx.mask();
    for ((n, m), cell) in out.grid.indexed_iter_mut() {
        let t = tx.grid[[n, m]];
        *cell = if mask[m] && t.norm() >= MIN_TX_MAGNITUDE {
            *cell / t
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{dddsu_mask, synthesize_frame, transmit, OfdmGridConfig, OfdmTarget};
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn cfg() -> Arc<OfdmGridConfig> {
        let mut c = OfdmGridConfig::desk_scale().with_mask(dddsu_mask(112, 2, 1));
        c.noise_power_db = -20.0;
        Arc::new(c)
    }

    fn ones(cfg: &Arc<OfdmGridConfig>) -> CsiFrame {
        let mut f = CsiFrame::zeros(Arc::clone(cfg));
        f.grid.fill(Complex64::new(1.0, 0.0));
        f
    }

    #[test]
    fn all_ones_is_identity() {
        let cfg = cfg();
        let t = [OfdmTarget {
            range: 30.0,
            speed: 1.0,
            amplitude: Complex64::new(1.0, 0.5),
        }];
        let rx = synthesize_frame(&t, &cfg, 3).unwrap();
        assert_eq!(extract_csi(&rx, &ones(&cfg)).unwrap(), rx);
    }

    #[test]
    fn self_division() {
        let cfg = cfg();
        let mut rx = ones(&cfg);
        rx.grid.mapv_inplace(|_| Complex64::new(0.3, -2.0));
        let out = extract_csi(&rx, &rx).unwrap();
        for ((_, m), z) in out.grid.indexed_iter() {
            let expected = if cfg.tdd_mask[m] { 1.0 } else { 0.0 };
            assert!((z - Complex64::new(expected, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn random_payload_round_trip() {
        let cfg = cfg();
        let t = [OfdmTarget {
            range: 42.0,
            speed: -2.0,
            amplitude: Complex64::new(0.7, 0.0),
        }];
        let channel = synthesize_frame(&t, &cfg, 11).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut payload = ones(&cfg);
        payload
            .grid
            .mapv_inplace(|_| Complex64::from_polar(rng.random_range(0.5..1.5), rng.random_range(0.0..6.3)));
        let rx = transmit(&channel, &payload).unwrap();
        let csi = extract_csi(&rx, &payload).unwrap();
        let err = csi
            .grid
            .iter()
            .zip(channel.grid.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max deviation {err}");
    }

    #[test]
    fn shape_mismatch() {
        let a = cfg();
        let mut small = OfdmGridConfig::desk_scale();
        small.n_subcarriers = 128;
        let b = Arc::new(small);
        assert!(matches!(extract_csi(&ones(&a), &ones(&b)), Err(Error::Contract(_))));
    }
}
