//! Sensor front ends: the ideal range-Doppler point sensor used as the
//! simulation baseline, and the OFDM CSI synthesiser feeding the
//! processing chain.

pub mod ideal;
pub mod ofdm;

pub use ideal::{ideal_observe, IdealSensorConfig};
pub use ofdm::{
    dddsu_mask, synthesize_frame, transmit, ClutterTap, CsiFrame, OfdmGridConfig, OfdmTarget, SPEED_OF_LIGHT,
};
