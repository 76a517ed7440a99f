//! Experiment configuration and the batch runner.
//!
//! Sensing and signal processing of each frame depend only on the frame's
//! truth and a seed derived from the run seed and the frame index, so that
//! stage runs in parallel. The tracker then consumes the detection lists in
//! time order.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

pub use config::*;

use crate::error::{Error, Result};
use crate::evaluation::{associate_frame, AssociationResult, MetricsReport, METRICS_CSV_HEADER};
use crate::processing::{
    cfar_detections, crap_acquire, crap_refine, crap_remove, eca_c_remove, extract_csi, gate_detections, periodogram,
    tdd_peak_detect, ClutterBasis, Detection, Periodogram,
};
use crate::scenario::Scenario;
use crate::seeding::{derive_seed, rng_for};
use crate::sensor::{ideal_observe, synthesize_frame, transmit, CsiFrame, OfdmGridConfig, OfdmTarget, SPEED_OF_LIGHT};
use crate::tracker::{write_tracks_csv, Estimate, Intensity, PhdFilter, TRACKS_CSV_HEADER};

const SENSING_STREAM: u64 = 0x5e_0000_0000;
const PAYLOAD_STREAM: u64 = 0x9a_0000_0000;

/// Everything a run produces, in memory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub metrics: MetricsReport,
    /// Gated detections per frame.
    pub detections: Vec<Vec<Detection>>,
    pub estimates: Vec<Vec<Estimate>>,
    /// `Σw` of the posterior intensity per frame.
    pub weight_sums: Vec<f64>,
    pub associations: Vec<AssociationResult>,
    pub sensing_time: Duration,
    pub tracking_time: Duration,
}

/// Per-frame sensing result; the CSI and periodogram are kept only for
/// frames selected for dumping.
struct SensedFrame {
    detections: Vec<Detection>,
    csi: Option<CsiFrame>,
    periodogram: Option<Periodogram>,
}

fn frame_seed(seed: u64, frame: usize) -> u64 {
    derive_seed(seed, SENSING_STREAM + frame as u64)
}

/// Targets of one frame with a carrier phase that follows the range, so a
/// moving object decorrelates from frame to frame.
fn ofdm_targets(scenario: &Scenario, frame: usize, grid: &OfdmGridConfig, amplitude: f64) -> Vec<OfdmTarget> {
    scenario
        .trajectories
        .iter()
        .filter_map(|t| t.state_at(frame))
        .map(|s| OfdmTarget {
            range: s.range,
            speed: s.speed,
            amplitude: Complex64::from_polar(
                amplitude,
                4.0 * std::f64::consts::PI * grid.carrier_freq * s.range / SPEED_OF_LIGHT,
            ),
        })
        .collect()
}

/// Channel synthesis followed by transmission of a random QPSK payload and
/// CSI extraction.
fn sense_csi(
    scenario: &Scenario,
    frame: usize,
    cfg: &ExperimentConfig,
    grid: &Arc<OfdmGridConfig>,
) -> Result<CsiFrame> {
    let seed = frame_seed(cfg.seed, frame);
    let targets = ofdm_targets(scenario, frame, grid, cfg.sensor.ofdm.target_amplitude);
    let channel = synthesize_frame(&targets, grid, seed)?;
    let mut payload = CsiFrame::zeros(Arc::clone(grid));
    let mut rng = rng_for(cfg.seed, PAYLOAD_STREAM + frame as u64);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for z in payload.grid.iter_mut() {
        let (a, b) = rng.random::<(bool, bool)>();
        *z = Complex64::new(if a { h } else { -h }, if b { h } else { -h });
    }
    extract_csi(&transmit(&channel, &payload)?, &payload)
}

fn acquire_clutter(scenario: &Scenario, cfg: &ExperimentConfig, grid: &Arc<OfdmGridConfig>) -> Result<ClutterBasis> {
    let crap = cfg.processing.crap;
    let n = scenario.n_frames();
    let count = crap.acquisition_frames.min(n);
    let frames = (0..count)
        .into_par_iter()
        .map(|i| sense_csi(scenario, (2 * i + 1) * n / (2 * count), cfg, grid))
        .collect::<Result<Vec<_>>>()?;
    let mut basis = crap_acquire(&frames, crap.n_components)?;
    for _ in 0..crap.refine_passes {
        basis = crap_refine(&basis, n, |k| sense_csi(scenario, k, cfg, grid))?;
    }
    Ok(basis.retain_min_fraction(crap.min_energy_fraction))
}

fn sense_ofdm(
    scenario: &Scenario,
    frame: usize,
    cfg: &ExperimentConfig,
    grid: &Arc<OfdmGridConfig>,
    basis: &ClutterBasis,
    keep: bool,
) -> Result<SensedFrame> {
    let p = &cfg.processing;
    let raw = sense_csi(scenario, frame, cfg, grid)?;
    let csi = match p.clutter_removal {
        ClutterRemoval::None => raw,
        ClutterRemoval::EcaC => eca_c_remove(&raw, p.eca_order)?,
        ClutterRemoval::Crap => crap_remove(&raw, basis)?,
    };
    let pg = periodogram(&csi, p.window, p.zero_pad);
    let found = if p.tdd_detect {
        tdd_peak_detect(&pg, &csi, &p.tdd_config())?.detections
    } else {
        cfar_detections(&pg, &p.cfar)?
    };
    Ok(SensedFrame {
        detections: gate_detections(&found, &p.gate)?,
        csi: keep.then_some(csi),
        periodogram: keep.then_some(pg),
    })
}

fn sense_ideal(scenario: &Scenario, frame: usize, cfg: &ExperimentConfig) -> Result<SensedFrame> {
    let states: Vec<_> = scenario.trajectories.iter().filter_map(|t| t.state_at(frame)).collect();
    let found = ideal_observe(&states, &cfg.sensor.ideal, frame_seed(cfg.seed, frame));
    Ok(SensedFrame {
        detections: gate_detections(&found, &cfg.processing.gate)?,
        csi: None,
        periodogram: None,
    })
}

fn with_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config("parallel", e.to_string()))?;
            Ok(pool.install(job))
        }
    }
}

fn clutter_basis(scenario: &Scenario, cfg: &ExperimentConfig, grid: &Arc<OfdmGridConfig>) -> Result<ClutterBasis> {
    let basis = if cfg.processing.clutter_removal == ClutterRemoval::Crap {
        acquire_clutter(scenario, cfg, grid)?
    } else {
        ClutterBasis::empty()
    };
    log::info!("clutter basis: {} component(s)", basis.len());
    Ok(basis)
}

/// Gated detections of selected frames, sensed exactly as in a full run.
pub fn detections_at(cfg: &ExperimentConfig, frames: &[usize]) -> Result<Vec<Vec<Detection>>> {
    cfg.validate()?;
    let scenario = cfg.load_scenario()?;
    let n = scenario.n_frames();
    if let Some(&k) = frames.iter().find(|&&k| k >= n) {
        return Err(Error::FrameOutOfRange { frame: k, n_frames: n });
    }
    let sensed: Vec<SensedFrame> = match cfg.sensor_mode {
        SensorMode::Ideal => frames
            .iter()
            .map(|&k| sense_ideal(&scenario, k, cfg))
            .collect::<Result<_>>()?,
        SensorMode::Ofdm => {
            let grid = cfg.grid();
            let basis = clutter_basis(&scenario, cfg, &grid)?;
            frames
                .par_iter()
                .map(|&k| sense_ofdm(&scenario, k, cfg, &grid, &basis, false))
                .collect::<Result<_>>()?
        }
    };
    Ok(sensed.into_iter().map(|f| f.detections).collect())
}

fn sense_all(scenario: &Scenario, cfg: &ExperimentConfig) -> Result<Vec<SensedFrame>> {
    let n = scenario.n_frames();
    let stride = cfg.output.stride();
    let wants_dump = cfg.output.dump_csi || cfg.output.dump_periodogram;
    match cfg.sensor_mode {
        SensorMode::Ideal => (0..n).into_par_iter().map(|k| sense_ideal(scenario, k, cfg)).collect(),
        SensorMode::Ofdm => {
            let grid = cfg.grid();
            let basis = clutter_basis(scenario, cfg, &grid)?;
            (0..n)
                .into_par_iter()
                .map(|k| sense_ofdm(scenario, k, cfg, &grid, &basis, wants_dump && k % stride == 0))
                .collect()
        }
    }
}

/// Runs the experiment without touching the file system.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let scenario = cfg.load_scenario()?;
    execute(cfg, scenario, None)
}

/// Runs the experiment and writes artifacts to `cfg.output.dir` when set.
/// If the run fails after the output directory was created, an
/// `INCOMPLETE` marker holding the error is left next to the partial
/// artifacts.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let scenario = cfg.load_scenario()?;
    let Some(dir) = cfg.output.dir.clone() else {
        return execute(cfg, scenario, None);
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let marker = dir.join("INCOMPLETE");
    let _ = fs::remove_file(&marker);
    match execute(cfg, scenario, Some(&dir)) {
        Ok(out) => Ok(out),
        Err(e) => {
            let _ = fs::write(&marker, format!("{e}\n"));
            Err(e)
        }
    }
}

fn execute(cfg: &ExperimentConfig, scenario: Scenario, dir: Option<&Path>) -> Result<RunOutput> {
    let n = scenario.n_frames();
    let label = cfg.scenario_label();
    log::info!("{label}: {n} frames, {} mode", cfg.sensor_mode.as_str());

    let started = Instant::now();
    let sensed = with_pool(cfg.parallel, || sense_all(&scenario, cfg))??;
    let sensing_time = started.elapsed();

    if let Some(dir) = dir {
        write_dumps(dir, &sensed, cfg)?;
    }

    let started = Instant::now();
    let mut filter = PhdFilter::new(cfg.tracker_models(scenario.dt), cfg.tracker.phd)?;
    let mut estimates = Vec::with_capacity(n);
    let mut weight_sums = Vec::with_capacity(n);
    let mut associations = Vec::with_capacity(n);
    let mut snapshots: Vec<(usize, Intensity)> = Vec::new();
    let stride = cfg.output.stride();
    for (k, frame) in sensed.iter().enumerate() {
        let z: Vec<[f64; 2]> = frame.detections.iter().map(|d| [d.range, d.speed]).collect();
        let est = filter.step(&z);
        let truth = scenario.ground_truth_at(k)?;
        associations.push(associate_frame(&truth, &est, &cfg.evaluation));
        weight_sums.push(filter.intensity().total_weight());
        if cfg.output.dump_intensity && k % stride == 0 {
            snapshots.push((k, filter.intensity().clone()));
        }
        estimates.push(est);
    }
    let tracking_time = started.elapsed();
    for (k, w) in weight_sums.iter().enumerate() {
        if !w.is_finite() {
            return Err(Error::Numeric(format!("intensity weight became {w} at frame {k}")));
        }
    }

    let counts: Vec<usize> = estimates.iter().map(Vec::len).collect();
    let metrics = MetricsReport::from_trace(label, cfg.sensor_mode.as_str(), &associations, &counts, &cfg.evaluation);
    let detections: Vec<Vec<Detection>> = sensed.into_iter().map(|f| f.detections).collect();
    let out = RunOutput {
        scenario,
        metrics,
        detections,
        estimates,
        weight_sums,
        associations,
        sensing_time,
        tracking_time,
    };
    if let Some(dir) = dir {
        write_artifacts(dir, &out, &snapshots)?;
    }
    log::info!(
        "sensing {:.2} s, tracking {:.2} s",
        out.sensing_time.as_secs_f64(),
        out.tracking_time.as_secs_f64()
    );
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_dumps(dir: &Path, sensed: &[SensedFrame], cfg: &ExperimentConfig) -> Result<()> {
    for (k, f) in sensed.iter().enumerate() {
        if let (true, Some(csi)) = (cfg.output.dump_csi, &f.csi) {
            let sub = dir.join("csi");
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let path = sub.join(format!("frame_{k:05}.bin"));
            let mut w = create(&path)?;
            csi.write_dump(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&path, e))?;
        }
        if let (true, Some(pg)) = (cfg.output.dump_periodogram, &f.periodogram) {
            let sub = dir.join("periodogram");
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let path = sub.join(format!("frame_{k:05}.bin"));
            let mut w = create(&path)?;
            pg.write_dump(&mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn write_artifacts(dir: &Path, out: &RunOutput, snapshots: &[(usize, Intensity)]) -> Result<()> {
    let write_text = |name: &str, text: &str| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };

    let path = dir.join("detections.csv");
    let mut w = create(&path)?;
    let io = |e| Error::io(dir.join("detections.csv"), e);
    writeln!(w, "frame,range_m,speed_mps,power_db").map_err(io)?;
    for (k, dets) in out.detections.iter().enumerate() {
        for d in dets {
            writeln!(w, "{k},{},{},{}", d.range, d.speed, d.power_db).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;

    let path = dir.join("tracks.csv");
    let io = |e| Error::io(dir.join("tracks.csv"), e);
    let mut w = create(&path)?;
    writeln!(w, "{TRACKS_CSV_HEADER}").map_err(io)?;
    for (k, est) in out.estimates.iter().enumerate() {
        write_tracks_csv(&mut w, k, est).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let path = dir.join("cardinality.csv");
    let io = |e| Error::io(dir.join("cardinality.csv"), e);
    let mut w = create(&path)?;
    writeln!(w, "frame,true_count,estimate_count,weight_sum,smoothed_estimate_count").map_err(io)?;
    for k in 0..out.estimates.len() {
        writeln!(
            w,
            "{k},{},{},{},{}",
            out.scenario.alive_count(k),
            out.estimates[k].len(),
            out.weight_sums[k],
            out.metrics.cardinality_series[k]
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)?;

    if !snapshots.is_empty() {
        let sub = dir.join("intensity");
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (k, v) in snapshots {
            let path = sub.join(format!("frame_{k:05}.json"));
            fs::write(&path, v.to_json()).map_err(|e| Error::io(&path, e))?;
        }
    }

    write_text("scenario.json", &out.scenario.to_json()?)?;
    write_text("metrics.json", &out.metrics.to_json())?;
    write_text(
        "metrics.csv",
        &format!("{METRICS_CSV_HEADER}\n{}\n", out.metrics.csv_row()),
    )
}

/// Reads a metrics JSON file, or `metrics.json` inside a run directory.
pub fn load_metrics(path: &Path) -> Result<MetricsReport> {
    let file: PathBuf = if path.is_dir() {
        path.join("metrics.json")
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: file,
        message: e.to_string(),
    })
}

/// Side-by-side markdown table of two reports.
pub fn compare(a: &MetricsReport, b: &MetricsReport) -> String {
    let cell = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
    let delta = |x: Option<f64>, y: Option<f64>| match (x, y) {
        (Some(x), Some(y)) => format!("{:+.4}", y - x),
        _ => "-".into(),
    };
    let title_a = format!("{} ({})", a.scenario, a.mode);
    let title_b = format!("{} ({})", b.scenario, b.mode);
    let mut out = format!("| metric | {title_a} | {title_b} | B - A |\n|---|---|---|---|\n");
    let rows = [
        ("mae_range_m", a.mae_range, b.mae_range),
        ("mae_speed_mps", a.mae_speed, b.mae_speed),
        ("pd", a.prob_detection, b.prob_detection),
        (
            "fa_per_scan",
            Some(a.false_alarms_per_scan),
            Some(b.false_alarms_per_scan),
        ),
    ];
    for (name, x, y) in rows {
        out.push_str(&format!("| {name} | {} | {} | {} |\n", cell(x), cell(y), delta(x, y)));
    }
    out
}

/// The two reports as CSV rows under the metrics header.
pub fn compare_csv(a: &MetricsReport, b: &MetricsReport) -> String {
    format!("{METRICS_CSV_HEADER}\n{}\n{}\n", a.csv_row(), b.csv_row())
}
