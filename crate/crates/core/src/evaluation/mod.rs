//! Metric suite: gated Hungarian association, MAE, windowed probability of
//! detection, false alarms per scan and smoothed cardinality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::TruthPoint;
use crate::tracker::Estimate;

/// Cost marking a gated-out pair. Pairs at or above it are dropped after
/// assignment.
pub const SENTINEL: f64 = 1e9;

/// Optimal one-to-one assignment on a rectangular cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, column)` pairs whose cost is below [`SENTINEL`].
    pub pairs: Vec<(usize, usize)>,
    /// Minimum total cost over all `min(rows, cols)` assigned pairs,
    /// sentinel pairs included.
    pub optimal_cost: f64,
}

/// Minimum-cost assignment by shortest augmenting paths with potentials.
pub fn hungarian(cost: &[Vec<f64>]) -> Assignment {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Assignment {
            pairs: Vec::new(),
            optimal_cost: 0.0,
        };
    }
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };

    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::with_capacity(n);
    let mut optimal_cost = 0.0;
    for j in 1..=m {
        if owner[j] == 0 {
            continue;
        }
        let (i, jj) = (owner[j] - 1, j - 1);
        let c = at(i, jj);
        optimal_cost += c;
        if c < SENTINEL {
            pairs.push(if transposed { (jj, i) } else { (i, jj) });
        }
    }
    pairs.sort_unstable();
    Assignment { pairs, optimal_cost }
}

/// Gates and windows of the metric suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub range_gate: f64,
    pub speed_gate: f64,
    /// Frames in the centred detection window (odd).
    pub pd_window: usize,
    /// Frames in the centred cardinality average (odd).
    pub cardinality_window: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            range_gate: 5.0,
            speed_gate: 5.0,
            pd_window: 11,
            cardinality_window: 51,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_gate > 0.0) {
            return Err(Error::config("evaluation.range_gate", "must be > 0"));
        }
        if !(self.speed_gate > 0.0) {
            return Err(Error::config("evaluation.speed_gate", "must be > 0"));
        }
        if self.pd_window % 2 == 0 {
            return Err(Error::config("evaluation.pd_window", "must be odd and >= 1"));
        }
        if self.cardinality_window % 2 == 0 {
            return Err(Error::config("evaluation.cardinality_window", "must be odd and >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub truth_id: u32,
    pub estimate_index: usize,
    /// Estimate minus truth.
    pub d_range: f64,
    pub d_speed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_truth: Vec<u32>,
    pub unmatched_estimates: Vec<usize>,
}

impl AssociationResult {
    pub fn alive_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.pairs
            .iter()
            .map(|p| p.truth_id)
            .chain(self.unmatched_truth.iter().copied())
    }
}

/// Gated Hungarian association of one frame. Cost is `|Δr|/gate_r +
/// |Δv|/gate_v` when both gates hold.
pub fn associate_frame(truth: &[TruthPoint], estimates: &[Estimate], cfg: &EvaluationConfig) -> AssociationResult {
    let within = |t: &TruthPoint, e: &Estimate| {
        (e.range - t.range).abs() <= cfg.range_gate && (e.speed - t.speed).abs() <= cfg.speed_gate
    };
    let cost: Vec<Vec<f64>> = truth
        .iter()
        .map(|t| {
            estimates
                .iter()
                .map(|e| {
                    if within(t, e) {
                        (e.range - t.range).abs() / cfg.range_gate + (e.speed - t.speed).abs() / cfg.speed_gate
                    } else {
                        SENTINEL
                    }
                })
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost);

    let mut truth_used = vec![false; truth.len()];
    let mut est_used = vec![false; estimates.len()];
    let mut pairs = Vec::with_capacity(assignment.pairs.len());
    for &(i, j) in &assignment.pairs {
        if !within(&truth[i], &estimates[j]) {
            continue;
        }
        truth_used[i] = true;
        est_used[j] = true;
        pairs.push(MatchedPair {
            truth_id: truth[i].id,
            estimate_index: j,
            d_range: estimates[j].range - truth[i].range,
            d_speed: estimates[j].speed - truth[i].speed,
        });
    }
    AssociationResult {
        pairs,
        unmatched_truth: truth
            .iter()
            .zip(&truth_used)
            .filter(|(_, &u)| !u)
            .map(|(t, _)| t.id)
            .collect(),
        unmatched_estimates: (0..estimates.len()).filter(|&j| !est_used[j]).collect(),
    }
}

/// Fraction of alive object-frames whose object is matched at least once in
/// the centred window (clipped at the trace edges). `None` when no object is
/// ever alive.
pub fn windowed_pd(frames: &[AssociationResult], window: usize) -> Option<f64> {
    let half = window / 2;
    let n = frames.len();
    let mut matched: std::collections::BTreeMap<u32, Vec<bool>> = Default::default();
    for (k, f) in frames.iter().enumerate() {
        for p in &f.pairs {
            matched.entry(p.truth_id).or_insert_with(|| vec![false; n])[k] = true;
        }
    }
    let mut alive = 0usize;
    let mut detected = 0usize;
    for (k, f) in frames.iter().enumerate() {
        let lo = k.saturating_sub(half);
        let hi = (k + half + 1).min(n);
        for id in f.alive_ids() {
            alive += 1;
            if matched.get(&id).is_some_and(|hits| hits[lo..hi].iter().any(|&h| h)) {
                detected += 1;
            }
        }
    }
    (alive > 0).then(|| detected as f64 / alive as f64)
}

/// Mean number of unmatched estimates per frame.
pub fn false_alarm_rate(frames: &[AssociationResult]) -> f64 {
    if frames.is_empty() {
        return 0.0;
    }
    frames.iter().map(|f| f.unmatched_estimates.len()).sum::<usize>() as f64 / frames.len() as f64
}

/// Centred moving average, averaging only over the in-range samples at the
/// edges.
pub fn smoothed_cardinality(counts: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = counts.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, c) in counts.iter().enumerate() {
        prefix[i + 1] = prefix[i] + c;
    }
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Mean absolute range and speed error over all matched pairs; `None`
/// without any pair.
pub fn mae(frames: &[AssociationResult]) -> Option<(f64, f64)> {
    let mut n = 0usize;
    let (mut r, mut v) = (0.0, 0.0);
    for p in frames.iter().flat_map(|f| &f.pairs) {
        n += 1;
        r += p.d_range.abs();
        v += p.d_speed.abs();
    }
    (n > 0).then(|| (r / n as f64, v / n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub mode: String,
    pub n_frames: usize,
    pub mae_range: Option<f64>,
    pub mae_speed: Option<f64>,
    pub prob_detection: Option<f64>,
    pub false_alarms_per_scan: f64,
    pub cardinality_series: Vec<f64>,
}

pub const METRICS_CSV_HEADER: &str = "scenario,mode,mae_range_m,mae_speed_mps,pd,fa_per_scan";

impl MetricsReport {
    pub fn from_trace(
        scenario: impl Into<String>,
        mode: impl Into<String>,
        frames: &[AssociationResult],
        estimate_counts: &[usize],
        cfg: &EvaluationConfig,
    ) -> Self {
        let counts: Vec<f64> = estimate_counts.iter().map(|&c| c as f64).collect();
        let errors = mae(frames);
        Self {
            scenario: scenario.into(),
            mode: mode.into(),
            n_frames: frames.len(),
            mae_range: errors.map(|e| e.0),
            mae_speed: errors.map(|e| e.1),
            prob_detection: windowed_pd(frames, cfg.pd_window),
            false_alarms_per_scan: false_alarm_rate(frames),
            cardinality_series: smoothed_cardinality(&counts, cfg.cardinality_window),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }

    /// One row under [`METRICS_CSV_HEADER`]; missing values are empty.
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{:.6}",
            self.scenario,
            self.mode,
            opt(self.mae_range),
            opt(self.mae_speed),
            opt(self.prob_detection),
            self.false_alarms_per_scan
        )
    }
}
