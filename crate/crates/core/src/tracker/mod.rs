//! Gaussian-mixture PHD filter over the state `[range, range-rate]`.
//!
//! One recursion is [`predict`] → [`update`] → [`prune_merge`] →
//! [`extract`]; [`step`] runs them in that order and [`PhdFilter`] carries
//! the intensity and the previous frame's measurements between calls.
//! Births are measurement driven: every measurement of frame `k − 1` seeds a
//! low-weight component for frame `k`. There is no spawning.

use std::io::Write;

use nalgebra::{Cholesky, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One weighted Gaussian term of the intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub w: f64,
    pub m: Vector2<f64>,
    pub p: Matrix2<f64>,
}

impl GaussianComponent {
    pub fn new(w: f64, m: [f64; 2], p: [[f64; 2]; 2]) -> Self {
        Self {
            w,
            m: Vector2::from(m),
            p: matrix(p),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ComponentRepr {
    w: f64,
    m: [f64; 2],
    #[serde(rename = "P")]
    p: [[f64; 2]; 2],
}

impl Serialize for GaussianComponent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ComponentRepr {
            w: self.w,
            m: [self.m[0], self.m[1]],
            p: rows(&self.p),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianComponent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ComponentRepr::deserialize(d)?;
        Ok(GaussianComponent::new(r.w, r.m, r.p))
    }
}

fn matrix(p: [[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(p[0][0], p[0][1], p[1][0], p[1][1])
}

fn rows(p: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[p[(0, 0)], p[(0, 1)]], [p[(1, 0)], p[(1, 1)]]]
}

fn symmetrize(p: Matrix2<f64>) -> Matrix2<f64> {
    (p + p.transpose()) * 0.5
}

/// Weighted Gaussian mixture. `Σw` is the expected number of objects.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Intensity {
    pub components: Vec<GaussianComponent>,
}

impl Intensity {
    pub fn new(components: Vec<GaussianComponent>) -> Self {
        Self { components }
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().fold(0.0, |s, c| s + c.w)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// JSON list of `{w, m, P}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("intensity serialises")
    }
}

/// Constant-velocity transition with survival probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    pub f: Matrix2<f64>,
    pub q: Matrix2<f64>,
    pub p_survival: f64,
}

impl MotionModel {
    /// Continuous white-noise acceleration of spectral density `σ_a²`.
    pub fn white_noise_acceleration(dt: f64, sigma_a: f64, p_survival: f64) -> Self {
        let q = sigma_a * sigma_a;
        Self {
            f: Matrix2::new(1.0, dt, 0.0, 1.0),
            q: Matrix2::new(q * dt.powi(3) / 3.0, q * dt * dt / 2.0, q * dt * dt / 2.0, q * dt),
            p_survival,
        }
    }

    pub fn dt(&self) -> f64 {
        self.f[(0, 1)]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt() > 0.0) {
            return Err(Error::Contract(format!("motion dt {} must be > 0", self.dt())));
        }
        if !(0.0..=1.0).contains(&self.p_survival) {
            return Err(Error::Contract(format!(
                "p_survival {} outside [0, 1]",
                self.p_survival
            )));
        }
        let q = self.q;
        let psd = q[(0, 0)] >= 0.0 && q[(1, 1)] >= 0.0 && q.determinant() >= -1e-15;
        if (q[(0, 1)] - q[(1, 0)]).abs() > 1e-12 || !psd {
            return Err(Error::Contract("process noise must be symmetric PSD".into()));
        }
        Ok(())
    }
}

/// Linear measurement of `[range, speed]` with Poisson clutter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementModel {
    pub h: Matrix2<f64>,
    pub r: Matrix2<f64>,
    pub p_detect: f64,
    /// Clutter density per unit `m · m/s`.
    pub clutter_intensity: f64,
}

impl MeasurementModel {
    pub fn new(sigma_range: f64, sigma_speed: f64, p_detect: f64, clutter_intensity: f64) -> Self {
        Self {
            h: Matrix2::identity(),
            r: Matrix2::new(sigma_range * sigma_range, 0.0, 0.0, sigma_speed * sigma_speed),
            p_detect,
            clutter_intensity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_detect) {
            return Err(Error::Contract(format!("p_detect {} outside [0, 1]", self.p_detect)));
        }
        if !(self.clutter_intensity >= 0.0) || !self.clutter_intensity.is_finite() {
            return Err(Error::Contract("clutter intensity must be finite and >= 0".into()));
        }
        if (self.r[(0, 1)] - self.r[(1, 0)]).abs() > 1e-12 || Cholesky::new(self.r).is_none() {
            return Err(Error::Contract("measurement noise must be symmetric PD".into()));
        }
        Ok(())
    }
}

impl Default for MeasurementModel {
    fn default() -> Self {
        Self::new(0.5, 0.2, 0.9, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhdConfig {
    pub prune_threshold: f64,
    /// Squared Mahalanobis distance.
    pub merge_threshold: f64,
    pub max_components: usize,
    pub birth_weight: f64,
    pub birth_covariance: [[f64; 2]; 2],
    pub extraction_threshold: f64,
}

impl Default for PhdConfig {
    fn default() -> Self {
        Self {
            prune_threshold: 1e-5,
            merge_threshold: 4.0,
            max_components: 100,
            birth_weight: 0.01,
            birth_covariance: [[4.0, 0.0], [0.0, 1.0]],
            extraction_threshold: 0.5,
        }
    }
}

impl PhdConfig {
    pub fn validate(&self) -> Result<()> {
        let values = [
            ("prune_threshold", self.prune_threshold),
            ("merge_threshold", self.merge_threshold),
            ("birth_weight", self.birth_weight),
            ("extraction_threshold", self.extraction_threshold),
        ];
        for (name, v) in values {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(name, format!("{v} must be finite and >= 0")));
            }
        }
        if self.max_components == 0 {
            return Err(Error::config("max_components", "must be >= 1"));
        }
        let p = matrix(self.birth_covariance);
        if (p[(0, 1)] - p[(1, 0)]).abs() > 1e-12 || Cholesky::new(p).is_none() {
            return Err(Error::config("birth_covariance", "must be symmetric positive definite"));
        }
        Ok(())
    }
}

/// Survival prediction followed by the birth components. The spawn term is
/// zero.
pub fn predict(v: &Intensity, mm: &MotionModel, births: &Intensity) -> Intensity {
    let mut out = Vec::with_capacity(v.len() + births.len());
    for c in &v.components {
        out.push(GaussianComponent {
            w: mm.p_survival * c.w,
            m: mm.f * c.m,
            p: symmetrize(mm.q + mm.f * c.p * mm.f.transpose()),
        });
    }
    out.extend(spawn(v, mm).components);
    out.extend_from_slice(&births.components);
    Intensity::new(out)
}

/// Spawned intensity. Objects in this setting never spawn others.
fn spawn(_v: &Intensity, _mm: &MotionModel) -> Intensity {
    Intensity::default()
}

/// Per-component quantities shared by all measurements.
struct Innovation {
    z_pred: Vector2<f64>,
    chol: Cholesky<f64, nalgebra::U2>,
    gain: Matrix2<f64>,
    p_post: Matrix2<f64>,
    log_norm: f64,
}

fn innovation(c: &GaussianComponent, meas: &MeasurementModel) -> Option<Innovation> {
    let h = meas.h;
    let s = symmetrize(h * c.p * h.transpose() + meas.r);
    let chol = Cholesky::new(s)?;
    let l = chol.l();
    // K = P Hᵀ S⁻¹, via the Cholesky factor.
    let gain = chol.solve(&(h * c.p)).transpose();
    let ikh = Matrix2::identity() - gain * h;
    let p_post = symmetrize(ikh * c.p * ikh.transpose() + gain * meas.r * gain.transpose());
    let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln());
    Some(Innovation {
        z_pred: h * c.m,
        chol,
        gain,
        p_post,
        log_norm: -(2.0 * std::f64::consts::PI).ln() - 0.5 * log_det,
    })
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Measurement update. Components with a singular innovation covariance are
/// left out of the detected terms (their missed-detection copy is kept).
pub fn update(v_pred: &Intensity, z_list: &[[f64; 2]], meas: &MeasurementModel) -> Intensity {
    let mut out: Vec<GaussianComponent> = v_pred
        .components
        .iter()
        .map(|c| GaussianComponent {
            w: (1.0 - meas.p_detect) * c.w,
            ..*c
        })
        .collect();
    if z_list.is_empty() || meas.p_detect == 0.0 {
        return Intensity::new(out);
    }

    let prepared: Vec<(usize, Innovation)> = v_pred
        .components
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match innovation(c, meas) {
            Some(inn) => Some((i, inn)),
            None => {
                log::warn!("component {i} skipped: innovation covariance not positive definite");
                None
            }
        })
        .collect();

    let ln_pd = meas.p_detect.ln();
    let ln_kappa = meas.clutter_intensity.ln();
    let mut terms: Vec<(f64, GaussianComponent)> = Vec::with_capacity(prepared.len());
    for z in z_list {
        let z = Vector2::from(*z);
        terms.clear();
        for (i, inn) in &prepared {
            let c = &v_pred.components[*i];
            let nu = z - inn.z_pred;
            let white = inn.chol.l().solve_lower_triangular(&nu).expect("triangular factor");
            let ln_q = inn.log_norm - 0.5 * white.norm_squared();
            let ln_w = ln_pd + c.w.ln() + ln_q;
            terms.push((
                ln_w,
                GaussianComponent {
                    w: 0.0,
                    m: c.m + inn.gain * nu,
                    p: inn.p_post,
                },
            ));
        }
        let ln_den = log_sum_exp(std::iter::once(ln_kappa).chain(terms.iter().map(|(l, _)| *l)));
        for (ln_w, mut comp) in terms.drain(..) {
            comp.w = if ln_den == f64::NEG_INFINITY {
                0.0
            } else {
                (ln_w - ln_den).exp()
            };
            out.push(comp);
        }
    }
    Intensity::new(out)
}

/// One greedy pass: repeatedly merges everything within the gate of the
/// heaviest remaining component.
fn merge_pass(mut pool: Vec<GaussianComponent>, threshold: f64) -> Vec<GaussianComponent> {
    let mut merged = Vec::with_capacity(pool.len());
    while !pool.is_empty() {
        let lead = (0..pool.len())
            .max_by(|&a, &b| pool[a].w.total_cmp(&pool[b].w).then(b.cmp(&a)))
            .expect("non-empty pool");
        let anchor = pool[lead];
        let (group, rest): (Vec<_>, Vec<_>) = pool.into_iter().partition(|c| {
            let d = c.m - anchor.m;
            match Cholesky::new(c.p) {
                Some(ch) => d.dot(&ch.solve(&d)) <= threshold,
                None => d == Vector2::zeros(),
            }
        });
        pool = rest;
        if let [single] = group[..] {
            merged.push(single);
            continue;
        }
        let w: f64 = group.iter().map(|c| c.w).sum();
        let m = group.iter().fold(Vector2::zeros(), |acc, c| acc + c.m * c.w) / w;
        let p = group.iter().fold(Matrix2::zeros(), |acc, c| {
            let d = m - c.m;
            acc + (c.p + d * d.transpose()) * c.w
        }) / w;
        merged.push(GaussianComponent { w, m, p: symmetrize(p) });
    }
    merged
}

/// Pruning, then greedy merging around the heaviest remaining component
/// until a pass merges nothing, capped at `max_components` by weight.
pub fn prune_merge(v: &Intensity, cfg: &PhdConfig) -> Intensity {
    let mut pool: Vec<GaussianComponent> = v
        .components
        .iter()
        .copied()
        .filter(|c| c.w >= cfg.prune_threshold && c.w > 0.0)
        .collect();
    loop {
        let before = pool.len();
        pool = merge_pass(pool, cfg.merge_threshold);
        if pool.len() == before {
            break;
        }
    }
    pool.sort_by(|a, b| b.w.total_cmp(&a.w));
    pool.truncate(cfg.max_components);
    Intensity::new(pool)
}

/// One birth component per measurement of the previous frame.
pub fn adaptive_births(prev_measurements: &[[f64; 2]], cfg: &PhdConfig) -> Intensity {
    Intensity::new(
        prev_measurements
            .iter()
            .map(|z| GaussianComponent::new(cfg.birth_weight, *z, cfg.birth_covariance))
            .collect(),
    )
}

/// An extracted state estimate and the weight of its source component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub range: f64,
    pub speed: f64,
    pub weight: f64,
}

/// Means of components above the extraction threshold; a component with
/// `w > 1.5` yields `round(w)` copies.
pub fn extract(v: &Intensity, cfg: &PhdConfig) -> Vec<Estimate> {
    let mut out = Vec::new();
    for c in &v.components {
        if c.w <= cfg.extraction_threshold {
            continue;
        }
        let copies = if c.w > 1.5 { c.w.round() as usize } else { 1 };
        for _ in 0..copies {
            out.push(Estimate {
                range: c.m[0],
                speed: c.m[1],
                weight: c.w,
            });
        }
    }
    out
}

/// Models shared by every recursion of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Models {
    pub motion: MotionModel,
    pub measurement: MeasurementModel,
}

/// One full recursion; births come from `prev_z`.
pub fn step(
    v: &Intensity,
    z_list: &[[f64; 2]],
    models: &Models,
    cfg: &PhdConfig,
    prev_z: &[[f64; 2]],
) -> (Intensity, Vec<Estimate>) {
    let births = adaptive_births(prev_z, cfg);
    let predicted = predict(v, &models.motion, &births);
    let posterior = prune_merge(&update(&predicted, z_list, &models.measurement), cfg);
    let estimates = extract(&posterior, cfg);
    (posterior, estimates)
}

/// Stateful wrapper over [`step`]. Must be fed frames in time order.
#[derive(Debug, Clone)]
pub struct PhdFilter {
    pub models: Models,
    pub config: PhdConfig,
    intensity: Intensity,
    prev_z: Vec<[f64; 2]>,
}

impl PhdFilter {
    pub fn new(models: Models, config: PhdConfig) -> Result<Self> {
        models.motion.validate()?;
        models.measurement.validate()?;
        config.validate()?;
        Ok(Self {
            models,
            config,
            intensity: Intensity::default(),
            prev_z: Vec::new(),
        })
    }

    pub fn intensity(&self) -> &Intensity {
        &self.intensity
    }

    pub fn step(&mut self, z_list: &[[f64; 2]]) -> Vec<Estimate> {
        let (posterior, estimates) = step(&self.intensity, z_list, &self.models, &self.config, &self.prev_z);
        self.intensity = posterior;
        self.prev_z = z_list.to_vec();
        estimates
    }
}

/// Appends rows of `frame,est_index,range_m,speed_mps,weight`.
pub fn write_tracks_csv<W: Write>(mut w: W, frame: usize, estimates: &[Estimate]) -> std::io::Result<()> {
    for (i, e) in estimates.iter().enumerate() {
        writeln!(w, "{frame},{i},{},{},{}", e.range, e.speed, e.weight)?;
    }
    Ok(())
}

pub const TRACKS_CSV_HEADER: &str = "frame,est_index,range_m,speed_mps,weight";
