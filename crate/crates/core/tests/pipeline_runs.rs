use std::fs;
use std::path::Path;

use isac_track::pipeline::*;
use isac_track::scenario::{ObjectTrajectory, RadialState, Scenario};

fn line(id: u32, birth: usize, frames: usize, r0: f64, v: f64) -> ObjectTrajectory {
    ObjectTrajectory {
        id,
        birth_frame: birth,
        states: (0..frames)
            .map(|k| RadialState::new(r0 + v * 0.01 * k as f64, v))
            .collect(),
    }
}

fn short_scenario(dir: &Path, frames: usize) -> std::path::PathBuf {
    let s = Scenario {
        label: "short".into(),
        dt: 0.01,
        duration: frames as f64 * 0.01,
        trajectories: vec![line(0, 0, frames, 24.0, 1.5), line(1, 5, frames - 5, 47.0, -2.0)],
    };
    let path = dir.join("short.json");
    s.save(&path).unwrap();
    path
}

fn file_config(mode: SensorMode, scenario: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(mode, 1, 11);
    cfg.scenario.preset = None;
    cfg.scenario.file = Some(scenario.to_path_buf());
    cfg
}

#[test]
fn ideal_preset_one_with_defaults_detects() {
    let cfg = ExperimentConfig::new(SensorMode::Ideal, 1, 1);
    let out = run_in_memory(&cfg).unwrap();
    assert!(out.metrics.prob_detection.unwrap() > 0.9, "{:?}", out.metrics);
    assert_eq!(out.estimates.len(), 3000);
}

#[test]
fn same_seed_gives_identical_metrics_json() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let mut cfg = ExperimentConfig::new(SensorMode::Ideal, 3, 9);
        cfg.output.dir = Some(dir.path().join(name));
        run(&cfg).unwrap();
        bytes.push(fs::read(dir.path().join(name).join("metrics.json")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path(), 40);
    let mut one = file_config(SensorMode::Ofdm, &scenario);
    one.parallel = Some(1);
    let mut two = one.clone();
    two.parallel = Some(2);
    let a = run_in_memory(&one).unwrap();
    let b = run_in_memory(&two).unwrap();
    assert_eq!(a.metrics.to_json(), b.metrics.to_json());
    assert_eq!(a.detections, b.detections);
}

#[test]
fn different_seeds_differ() {
    let a = run_in_memory(&ExperimentConfig::new(SensorMode::Ideal, 2, 1)).unwrap();
    let b = run_in_memory(&ExperimentConfig::new(SensorMode::Ideal, 2, 2)).unwrap();
    assert_ne!(a.metrics.to_json(), b.metrics.to_json());
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

#[test]
fn ofdm_dumps_have_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path(), 30);
    let mut cfg = file_config(SensorMode::Ofdm, &scenario);
    let out_dir = dir.path().join("run");
    cfg.output.dir = Some(out_dir.clone());
    cfg.output.dump_csi = true;
    cfg.output.dump_periodogram = true;
    cfg.output.dump_intensity = true;
    cfg.output.dump_stride = 10;
    let out = run(&cfg).unwrap();
    let grid = cfg.grid();
    let (n_sc, n_sym) = (grid.n_subcarriers, grid.n_symbols);

    let csi_files: Vec<_> = fs::read_dir(out_dir.join("csi")).unwrap().collect();
    assert_eq!(csi_files.len(), 3);
    let csi = fs::read(out_dir.join("csi/frame_00010.bin")).unwrap();
    assert_eq!(read_u32(&csi, 0) as usize, n_sc);
    assert_eq!(read_u32(&csi, 4) as usize, n_sym);
    assert_eq!(csi.len(), 8 + n_sym + n_sc * n_sym * 8);
    let mask = &csi[8..8 + n_sym];
    for (byte, flag) in mask.iter().zip(&grid.tdd_mask) {
        assert_eq!(*byte, u8::from(*flag));
    }
    // Uplink symbols carry nothing.
    let off = 8 + n_sym;
    let value = |n: usize, m: usize, part: usize| {
        let at = off + ((n * n_sym + m) * 2 + part) * 4;
        f32::from_le_bytes(csi[at..at + 4].try_into().unwrap())
    };
    let uplink = grid.tdd_mask.iter().position(|b| !b).unwrap();
    assert_eq!((value(7, uplink, 0), value(7, uplink, 1)), (0.0, 0.0));

    let pg = fs::read(out_dir.join("periodogram/frame_00020.bin")).unwrap();
    let (rows, cols) = (read_u32(&pg, 0) as usize, read_u32(&pg, 4) as usize);
    assert_eq!(
        (rows, cols),
        (n_sc * cfg.processing.zero_pad, n_sym * cfg.processing.zero_pad)
    );
    assert_eq!(pg.len(), 8 + rows * cols * 4);
    let db: Vec<f32> = pg[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let max = db.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    assert!(max.abs() < 1e-6, "periodogram peak {max}");

    let snapshot: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("intensity/frame_00020.json")).unwrap()).unwrap();
    for c in snapshot.as_array().unwrap() {
        assert!(c["w"].is_f64());
        assert_eq!(c["m"].as_array().unwrap().len(), 2);
        assert_eq!(c["P"].as_array().unwrap().len(), 2);
    }

    let tracks = fs::read_to_string(out_dir.join("tracks.csv")).unwrap();
    let rows: usize = out.estimates.iter().map(Vec::len).sum();
    assert_eq!(tracks.lines().count(), rows + 1);
    let detections = fs::read_to_string(out_dir.join("detections.csv")).unwrap();
    let rows: usize = out.detections.iter().map(Vec::len).sum();
    assert_eq!(detections.lines().count(), rows + 1);
    for l in detections.lines().skip(1) {
        let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f.len(), 4);
        assert!(f[3] <= 0.0);
    }
}

#[test]
fn ofdm_short_run_tracks_both_objects() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path(), 150);
    let out = run_in_memory(&file_config(SensorMode::Ofdm, &scenario)).unwrap();
    let m = &out.metrics;
    assert!(m.prob_detection.unwrap() > 0.9, "{m:?}");
    assert!(m.mae_range.unwrap() < 0.5, "{m:?}");
}

#[test]
fn failed_run_leaves_incomplete_marker() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = Scenario {
        label: "far".into(),
        dt: 0.01,
        duration: 0.1,
        trajectories: vec![line(0, 0, 10, 30.0, 1.0)],
    };
    // Beyond the unambiguous speed interval of the desk grid.
    for st in &mut s.trajectories[0].states {
        st.speed = 500.0;
    }
    let path = dir.path().join("far.json");
    s.save(&path).unwrap();
    let mut cfg = file_config(SensorMode::Ofdm, &path);
    let out_dir = dir.path().join("run");
    cfg.output.dir = Some(out_dir.clone());
    assert!(run(&cfg).is_err());
    assert!(out_dir.join("INCOMPLETE").exists());
}

#[test]
fn compare_reports_both_columns() {
    let a = run_in_memory(&ExperimentConfig::new(SensorMode::Ideal, 1, 1))
        .unwrap()
        .metrics;
    let b = run_in_memory(&ExperimentConfig::new(SensorMode::Ideal, 2, 1))
        .unwrap()
        .metrics;
    let table = compare(&a, &b);
    assert!(table.contains("preset1") && table.contains("preset2"), "{table}");
    assert_eq!(table.lines().count(), 6);
    let csv = compare_csv(&a, &b);
    assert!(csv.lines().count() >= 3, "{csv}");
}
