use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvaluationConfig;
use crate::processing::{CfarConfig, GateConfig, TddDetectConfig, Window};
use crate::scenario::{scenario_preset, Scenario};
use crate::sensor::{dddsu_mask, ClutterTap, IdealSensorConfig, OfdmGridConfig};
use crate::tracker::{MeasurementModel, Models, MotionModel, PhdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorMode {
    Ideal,
    Ofdm,
}

impl SensorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SensorMode::Ideal => "ideal",
            SensorMode::Ofdm => "ofdm",
        }
    }
}

/// Either a preset id or a scenario JSON file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSource {
    pub preset: Option<u8>,
    /// Relative paths resolve against the config file's directory.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridPreset {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmSensorConfig {
    pub grid: GridPreset,
    /// Per-cell noise power relative to a unit-amplitude target.
    pub noise_power_db: f64,
    pub target_amplitude: f64,
    /// Blank uplink symbols with the DDDSU pattern.
    pub tdd: bool,
    pub clutter_taps: Vec<ClutterTap>,
}

impl Default for OfdmSensorConfig {
    fn default() -> Self {
        Self {
            grid: GridPreset::Desk,
            noise_power_db: -10.0,
            target_amplitude: 1.0,
            tdd: true,
            clutter_taps: vec![
                ClutterTap {
                    range: 12.0,
                    amplitude: 10.0,
                    phase: 0.3,
                },
                ClutterTap {
                    range: 27.5,
                    amplitude: 5.0,
                    phase: -1.1,
                },
                ClutterTap {
                    range: 58.0,
                    amplitude: 8.0,
                    phase: 2.0,
                },
            ],
        }
    }
}

impl OfdmSensorConfig {
    pub fn grid_config(&self) -> OfdmGridConfig {
        let mut g = match self.grid {
            GridPreset::Desk => OfdmGridConfig::desk_scale(),
            GridPreset::Full => OfdmGridConfig::full_scale(),
        };
        if !self.tdd {
            g.tdd_mask = vec![true; g.n_symbols];
        } else if self.grid == GridPreset::Desk {
            g.tdd_mask = dddsu_mask(g.n_symbols, 2, 1);
        }
        g.noise_power_db = self.noise_power_db;
        g.static_clutter_taps = self.clutter_taps.clone();
        g
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSection {
    pub ideal: IdealSensorConfig,
    pub ofdm: OfdmSensorConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterRemoval {
    None,
    EcaC,
    #[default]
    Crap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrapConfig {
    pub n_components: usize,
    pub min_energy_fraction: f64,
    /// Frames spread evenly over the run used to learn the clutter subspace.
    pub acquisition_frames: usize,
    /// Power steps of the learned subspace over every frame of the run.
    pub refine_passes: usize,
}

impl Default for CrapConfig {
    fn default() -> Self {
        Self {
            n_components: 3,
            min_energy_fraction: 0.05,
            acquisition_frames: 32,
            refine_passes: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessingConfig {
    pub clutter_removal: ClutterRemoval,
    pub eca_order: usize,
    pub crap: CrapConfig,
    pub window: Window,
    pub zero_pad: usize,
    /// Used by both the plain detector and the TDD-aware one.
    pub cfar: CfarConfig,
    pub tdd_detect: bool,
    /// TDD detector settings; its `cfar` entry is replaced by `processing.cfar`.
    pub tdd: TddDetectConfig,
    pub gate: GateConfig,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        Self {
            clutter_removal: ClutterRemoval::Crap,
            eca_order: 3,
            crap: CrapConfig::default(),
            window: Window::Rectangular,
            zero_pad: 1,
            cfar: CfarConfig::default(),
            tdd_detect: true,
            tdd: TddDetectConfig::default(),
            gate: GateConfig::default(),
        }
    }
}

impl ProcessingConfig {
    pub fn tdd_config(&self) -> TddDetectConfig {
        TddDetectConfig {
            cfar: self.cfar,
            ..self.tdd
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub p_survival: f64,
    /// Detection probability assumed by the filter; see
    /// [`ExperimentConfig::tracker_models`] for the per-mode default.
    pub p_detect: Option<f64>,
    pub sigma_range: Option<f64>,
    pub sigma_speed: Option<f64>,
    /// Acceleration noise of the constant-velocity model, m/s².
    pub sigma_accel: f64,
    /// Expected clutter measurements per frame inside the gate.
    pub clutter_rate: Option<f64>,
    pub phd: PhdConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            p_survival: 0.99,
            p_detect: None,
            sigma_range: None,
            sigma_speed: None,
            sigma_accel: 1.0,
            clutter_rate: None,
            phd: PhdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub dump_csi: bool,
    pub dump_periodogram: bool,
    pub dump_intensity: bool,
    /// Dumps are written for every `dump_stride`-th frame (0 means 100).
    pub dump_stride: usize,
}

impl OutputConfig {
    pub fn stride(&self) -> usize {
        if self.dump_stride == 0 {
            100
        } else {
            self.dump_stride
        }
    }
}

/// Ideal-sensor clutter sits on the zero-Doppler line, so its density there
/// is far above the uniform average the filter assumes; the default filter
/// clutter rate is inflated by this factor.
const IDEAL_CLUTTER_CONCENTRATION: f64 = 10.0;

/// Per-frame detection rate of the OFDM chain on the presets.
const OFDM_P_DETECT: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub sensor_mode: SensorMode,
    #[serde(default)]
    pub scenario: ScenarioSource,
    #[serde(default)]
    pub sensor: SensorSection,
    #[serde(default)]
    pub processing: ProcessingConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Worker threads for the sensing stage; defaults to all cores.
    #[serde(default)]
    pub parallel: Option<usize>,
    /// Directory relative scenario paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Best-effort field path out of a TOML deserialisation error.
fn field_of(message: &str) -> String {
    for marker in ["missing field `", "unknown field `"] {
        if let Some(start) = message.find(marker) {
            let rest = &message[start + marker.len()..];
            if let Some(end) = rest.find('`') {
                return rest[..end].to_string();
            }
        }
    }
    "config".to_string()
}

impl ExperimentConfig {
    /// Default configuration for a sensing mode and preset.
    pub fn new(sensor_mode: SensorMode, preset: u8, seed: u64) -> Self {
        Self {
            seed,
            sensor_mode,
            scenario: ScenarioSource {
                preset: Some(preset),
                file: None,
            },
            sensor: SensorSection::default(),
            processing: ProcessingConfig::default(),
            tracker: TrackerConfig::default(),
            evaluation: EvaluationConfig::default(),
            output: OutputConfig::default(),
            parallel: None,
            base_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::config("config", e.message().to_string()))?;
        if !value.contains_key("sensor_mode") {
            return Err(Error::config("sensor_mode", "missing; expected \"ideal\" or \"ofdm\""));
        }
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            Error::config(field_of(&message), message)
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    fn scenario_path(&self) -> Option<PathBuf> {
        self.scenario.file.as_ref().map(|f| match &self.base_dir {
            Some(dir) if f.is_relative() => dir.join(f),
            _ => f.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.scenario.preset, &self.scenario.file) {
            (Some(_), Some(_)) => return Err(Error::config("scenario", "give either `preset` or `file`, not both")),
            (None, None) => return Err(Error::config("scenario", "needs `preset` or `file`")),
            (Some(p), None) if !(1..=4).contains(p) => {
                return Err(Error::config("scenario.preset", format!("{p} is not in 1..=4")))
            }
            _ => {}
        }
        if let Some(path) = self.scenario_path() {
            if !path.exists() {
                return Err(Error::config(
                    "scenario.file",
                    format!("{} does not exist", path.display()),
                ));
            }
        }
        match self.sensor_mode {
            SensorMode::Ideal => self.sensor.ideal.validate()?,
            SensorMode::Ofdm => {
                let o = &self.sensor.ofdm;
                if !(o.target_amplitude > 0.0 && o.target_amplitude.is_finite()) {
                    return Err(Error::config("sensor.ofdm.target_amplitude", "must be > 0"));
                }
                o.grid_config()
                    .validate()
                    .map_err(|e| Error::config("sensor.ofdm", e.to_string()))?;
            }
        }
        let p = &self.processing;
        if p.zero_pad == 0 {
            return Err(Error::config("processing.zero_pad", "must be >= 1"));
        }
        if p.clutter_removal == ClutterRemoval::EcaC && p.eca_order == 0 {
            return Err(Error::config("processing.eca_order", "must be >= 1"));
        }
        if p.clutter_removal == ClutterRemoval::Crap
            && self.sensor_mode == SensorMode::Ofdm
            && p.crap.acquisition_frames < p.crap.n_components
        {
            return Err(Error::config(
                "processing.crap.acquisition_frames",
                "must be >= processing.crap.n_components",
            ));
        }
        p.cfar
            .validate()
            .map_err(|e| Error::config("processing.cfar", e.to_string()))?;
        p.gate.validate()?;
        if p.gate.area() <= 0.0 {
            return Err(Error::config("processing.gate", "gate area must be > 0"));
        }
        let t = &self.tracker;
        let (p_detect, sigma_range, sigma_speed) = self.tracker_measurement();
        for (name, v) in [("tracker.p_survival", t.p_survival), ("tracker.p_detect", p_detect)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, format!("{v} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("tracker.sigma_range", sigma_range),
            ("tracker.sigma_speed", sigma_speed),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be > 0 (set it when the sensor is noiseless)"));
            }
        }
        if !(t.sigma_accel >= 0.0 && t.sigma_accel.is_finite()) {
            return Err(Error::config("tracker.sigma_accel", "must be >= 0"));
        }
        if let Some(rate) = t.clutter_rate {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::config("tracker.clutter_rate", "must be >= 0"));
            }
        }
        t.phd.validate().map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("tracker.phd.{field}"), message),
            other => other,
        })?;
        self.evaluation.validate()?;
        if self.parallel == Some(0) {
            return Err(Error::config("parallel", "must be >= 1"));
        }
        if self.output.stride() == 0 {
            return Err(Error::config("output.dump_stride", "must be >= 1"));
        }
        Ok(())
    }

    pub fn load_scenario(&self) -> Result<Scenario> {
        match (self.scenario.preset, self.scenario_path()) {
            (Some(id), _) => scenario_preset(id, self.seed),
            (None, Some(path)) => Scenario::load(&path),
            (None, None) => Err(Error::config("scenario", "needs `preset` or `file`")),
        }
    }

    pub fn scenario_label(&self) -> String {
        match (self.scenario.preset, &self.scenario.file) {
            (Some(id), _) => format!("preset{id}"),
            (None, Some(f)) => f
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
            (None, None) => "unknown".into(),
        }
    }

    pub fn clutter_rate(&self) -> f64 {
        self.tracker.clutter_rate.unwrap_or(match self.sensor_mode {
            SensorMode::Ideal => IDEAL_CLUTTER_CONCENTRATION * self.sensor.ideal.clutter_rate,
            SensorMode::Ofdm => 1.0,
        })
    }

    /// Detection probability and measurement noise assumed by the filter.
    /// Unset values follow the sensing mode: the ideal sensor's own
    /// parameters, or values measured for the OFDM chain.
    pub fn tracker_measurement(&self) -> (f64, f64, f64) {
        let t = &self.tracker;
        let ideal = &self.sensor.ideal;
        let (p_detect, sigma_range, sigma_speed) = match self.sensor_mode {
            SensorMode::Ideal => (ideal.p_detect, ideal.sigma_range, ideal.sigma_speed),
            SensorMode::Ofdm => (OFDM_P_DETECT, 0.5, 0.2),
        };
        (
            t.p_detect.unwrap_or(p_detect),
            t.sigma_range.unwrap_or(sigma_range),
            t.sigma_speed.unwrap_or(sigma_speed),
        )
    }

    pub fn tracker_models(&self, dt: f64) -> Models {
        let t = &self.tracker;
        let (p_detect, sigma_range, sigma_speed) = self.tracker_measurement();
        Models {
            motion: MotionModel::white_noise_acceleration(dt, t.sigma_accel, t.p_survival),
            measurement: MeasurementModel::new(
                sigma_range,
                sigma_speed,
                p_detect,
                self.clutter_rate() / self.processing.gate.area(),
            ),
        }
    }

    pub fn grid(&self) -> Arc<OfdmGridConfig> {
        Arc::new(self.sensor.ofdm.grid_config())
    }
}
