//! Interpretable descriptors of per-sample cumulative-output trajectories.
//!
//! Every stream (the raw cumulative outputs, and optionally the per-round loss
//! of those outputs) contributes one block of named features. Features are
//! oriented so that larger values indicate a harder sample; the only
//! descriptor whose natural orientation is the opposite, the longest
//! monotonic run, is negated.

use std::fs;
use std::ops::Deref;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TdsError};
use crate::gbm::Ensemble;
use crate::{sample_loss, Task};

const RATIO_EPS: f64 = 1e-12;

/// Cumulative outputs `F_1(x) … F_T(x)` of one sample. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory(Vec<f64>);

impl Trajectory {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TdsError::NonFinite("trajectory"));
        }
        Ok(Trajectory(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Trajectory {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakMode {
    /// `max_t |v_t − v_1|`
    Max,
    /// `median_t |v_t − v_1|`
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    pub delta: f64,
    pub head_size: f64,
    pub tail_size: f64,
    /// Adds the per-round loss stream. Needs targets at scoring time.
    pub use_residual_trajectory: bool,
    pub compress_head: Option<usize>,
    pub compress_target_len: Option<usize>,
    /// Drops head/tail-derived and area descriptors.
    pub ablation: bool,
    pub peak_mode: PeakMode,
    /// When false, the raw stream accumulates from zero instead of the base score.
    pub include_base_in_trajectory: bool,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            delta: 0.1,
            head_size: 0.3,
            tail_size: 0.2,
            use_residual_trajectory: false,
            compress_head: None,
            compress_target_len: None,
            ablation: false,
            peak_mode: PeakMode::Max,
            include_base_in_trajectory: true,
        }
    }
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |f: f64| f > 0.0 && f < 1.0;
        if !open_unit(self.head_size) || !open_unit(self.tail_size) {
            return Err(TdsError::InvalidConfig(
                "head_size and tail_size must lie in (0, 1)".into(),
            ));
        }
        if !(self.delta >= 0.0) {
            return Err(TdsError::InvalidConfig("delta must be non-negative".into()));
        }
        match (self.compress_head, self.compress_target_len) {
            (Some(h), Some(l)) if l > h || l == 0 => Err(TdsError::InvalidConfig(
                "compress_target_len must be in 1..=compress_head".into(),
            )),
            (Some(_), None) | (None, Some(_)) => Err(TdsError::InvalidConfig(
                "compress_head and compress_target_len must be set together".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Column names of the feature vector, e.g. `raw_std`, …, `res_tail_auc`.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut prefixes = vec!["raw"];
        if self.use_residual_trajectory {
            prefixes.push("res");
        }
        for p in prefixes {
            for f in STREAM_FEATURES {
                if !self.ablation || !ABLATED.contains(&f) {
                    names.push(format!("{p}_{f}"));
                }
            }
        }
        names
    }

    pub fn n_features(&self) -> usize {
        let per_stream = if self.ablation {
            STREAM_FEATURES.len() - ABLATED.len()
        } else {
            STREAM_FEATURES.len()
        };
        per_stream * if self.use_residual_trajectory { 2 } else { 1 }
    }
}

/// Per-stream descriptor names, in output order.
pub const STREAM_FEATURES: [&str; 16] = [
    "std",
    "mad",
    "peak_magnitude",
    "auc_abs",
    "area_above_delta",
    "longest_monotonic_len",
    "sign_switches",
    "zero_crossings",
    "head_slope",
    "tail_slope",
    "head_auc",
    "tail_auc",
    "head_std",
    "tail_std",
    "early_late_std_ratio",
    "early_late_auc_ratio",
];

const ABLATED: [&str; 10] = [
    "auc_abs",
    "area_above_delta",
    "head_slope",
    "tail_slope",
    "head_auc",
    "tail_auc",
    "head_std",
    "tail_std",
    "early_late_std_ratio",
    "early_late_auc_ratio",
];

/// Fixed-length descriptor vector; see [`TrajectoryConfig::feature_names`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

/// Descriptors of one stream before flattening. `longest_monotonic_len` is
/// stored un-negated here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamFeatures {
    pub std: f64,
    pub mad: f64,
    pub peak_magnitude: f64,
    pub auc_abs: f64,
    pub area_above_delta: f64,
    pub longest_monotonic_len: f64,
    pub sign_switches: f64,
    pub zero_crossings: f64,
    pub head_slope: f64,
    pub tail_slope: f64,
    pub head_auc: f64,
    pub tail_auc: f64,
    pub head_std: f64,
    pub tail_std: f64,
    pub early_late_std_ratio: f64,
    pub early_late_auc_ratio: f64,
}

impl StreamFeatures {
    fn oriented(&self) -> [f64; 16] {
        [
            self.std,
            self.mad,
            self.peak_magnitude,
            self.auc_abs,
            self.area_above_delta,
            -self.longest_monotonic_len,
            self.sign_switches,
            self.zero_crossings,
            self.head_slope,
            self.tail_slope,
            self.head_auc,
            self.tail_auc,
            self.head_std,
            self.tail_std,
            self.early_late_std_ratio,
            self.early_late_auc_ratio,
        ]
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_pop(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Trapezoidal area of `f(v_t)` over unit-spaced steps.
fn trapezoid(v: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    v.windows(2).map(|w| (f(w[0]) + f(w[1])) / 2.0).sum()
}

fn ls_slope(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = mean(v);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in v.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Length in points of the longest non-decreasing or non-increasing run.
fn longest_monotonic_run(v: &[f64]) -> usize {
    if v.len() < 2 {
        return v.len();
    }
    let (mut best, mut up, mut down) = (1, 1, 1);
    for w in v.windows(2) {
        up = if w[1] >= w[0] { up + 1 } else { 1 };
        down = if w[1] <= w[0] { down + 1 } else { 1 };
        best = best.max(up).max(down);
    }
    best
}

fn count_sign_changes(v: impl Iterator<Item = f64>) -> usize {
    let mut prev: Option<f64> = None;
    let mut count = 0;
    for x in v {
        if let Some(p) = prev {
            if p * x < 0.0 {
                count += 1;
            }
        }
        prev = Some(x);
    }
    count
}

fn window_len(fraction: f64, t: usize) -> usize {
    ((fraction * t as f64).ceil() as usize).clamp(2, t)
}

/// Computes every descriptor of one stream. Requires at least two points.
pub fn stream_features(v: &[f64], config: &TrajectoryConfig) -> Result<StreamFeatures> {
    let t = v.len();
    if t < 2 {
        return Err(TdsError::TooFewRows { needed: 2, found: t });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(TdsError::NonFinite("trajectory"));
    }
    let mut scratch = v.to_vec();
    let med = median(&mut scratch);
    let mut abs_dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    let mad = median(&mut abs_dev);

    let first = v[0];
    let peak_magnitude = match config.peak_mode {
        PeakMode::Max => v.iter().map(|x| (x - first).abs()).fold(0.0, f64::max),
        PeakMode::Median => {
            let mut dev: Vec<f64> = v.iter().map(|x| (x - first).abs()).collect();
            median(&mut dev)
        }
    };

    let delta = config.delta;
    let head = &v[..window_len(config.head_size, t)];
    let tail = &v[t - window_len(config.tail_size, t)..];
    let head_std = std_pop(head);
    let tail_std = std_pop(tail);
    let head_auc = trapezoid(head, f64::abs);
    let tail_auc = trapezoid(tail, f64::abs);

    Ok(StreamFeatures {
        std: std_pop(v),
        mad,
        peak_magnitude,
        auc_abs: trapezoid(v, f64::abs),
        area_above_delta: trapezoid(v, |x| (x.abs() - delta).max(0.0)),
        longest_monotonic_len: longest_monotonic_run(v) as f64,
        sign_switches: count_sign_changes(v.windows(2).map(|w| w[1] - w[0])) as f64,
        zero_crossings: count_sign_changes(v.iter().copied()) as f64,
        head_slope: ls_slope(head),
        tail_slope: ls_slope(tail),
        head_auc,
        tail_auc,
        head_std,
        tail_std,
        early_late_std_ratio: tail_std / (head_std + RATIO_EPS),
        early_late_auc_ratio: tail_auc / (head_auc + RATIO_EPS),
    })
}

/// Per-round loss of the cumulative outputs against target `y`.
pub fn residual_trajectory(raw: &Trajectory, y: f64, task: Task) -> Result<Trajectory> {
    if !y.is_finite() {
        return Err(TdsError::NonFinite("target"));
    }
    Trajectory::new(raw.iter().map(|&f| sample_loss(task, f, y)).collect())
}

/// Block means of the first `head` values, split into `target_len` contiguous
/// blocks whose sizes differ by at most one.
pub fn compress(traj: &Trajectory, head: usize, target_len: usize) -> Result<Trajectory> {
    if head > traj.len() {
        return Err(TdsError::InvalidConfig(format!(
            "compression head {head} exceeds trajectory length {}",
            traj.len()
        )));
    }
    if target_len == 0 || target_len > head {
        return Err(TdsError::InvalidConfig(format!(
            "compression target length {target_len} must be in 1..={head}"
        )));
    }
    let out = (0..target_len)
        .map(|b| {
            let lo = b * head / target_len;
            let hi = (b + 1) * head / target_len;
            mean(&traj[lo..hi])
        })
        .collect();
    Ok(Trajectory(out))
}

/// Builds the feature vector from the raw stream and, when the config asks
/// for it, the residual stream.
pub fn extract_features(
    raw: &Trajectory,
    residual: Option<&Trajectory>,
    config: &TrajectoryConfig,
) -> Result<FeatureVector> {
    let mut out = Vec::with_capacity(config.n_features());
    push_stream(&mut out, raw, config)?;
    if config.use_residual_trajectory {
        let res = residual.ok_or(TdsError::MissingTargets)?;
        push_stream(&mut out, res, config)?;
    }
    Ok(FeatureVector(out))
}

fn push_stream(out: &mut Vec<f64>, v: &[f64], config: &TrajectoryConfig) -> Result<()> {
    let feats = stream_features(v, config)?.oriented();
    for (name, value) in STREAM_FEATURES.iter().zip(feats) {
        if !config.ablation || !ABLATED.contains(name) {
            out.push(value);
        }
    }
    Ok(())
}

/// Features of a single row plus its final-output loss when a target is given.
pub fn row_features(
    ensemble: &Ensemble,
    x: &[f64],
    target: Option<f64>,
    config: &TrajectoryConfig,
) -> Result<(FeatureVector, Option<f64>)> {
    let full = ensemble.trajectory(x)?;
    let final_output = *full.last().ok_or(TdsError::Empty("ensemble has no trees"))?;
    let residual = match (config.use_residual_trajectory, target) {
        (true, None) => return Err(TdsError::MissingTargets),
        (true, Some(y)) => Some(residual_trajectory(&Trajectory::new(full.clone())?, y, ensemble.task)?),
        (false, _) => None,
    };
    let raw_values = if config.include_base_in_trajectory {
        full
    } else {
        full.into_iter().map(|v| v - ensemble.base_score).collect()
    };
    let mut raw = Trajectory::new(raw_values)?;
    let mut residual = residual;
    if let (Some(head), Some(len)) = (config.compress_head, config.compress_target_len) {
        raw = compress(&raw, head, len)?;
        residual = residual.map(|r| compress(&r, head, len)).transpose()?;
    }
    let phi = extract_features(&raw, residual.as_ref(), config)?;
    let err = target.map(|y| sample_loss(ensemble.task, final_output, y));
    Ok((phi, err))
}

/// Row-major feature matrix with per-row final loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub rows: Vec<FeatureVector>,
    /// `ℓ(F_T(x_i), y_i)` per row; present iff targets were supplied.
    pub errors: Option<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    /// Flattened row-major values.
    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.0.iter().copied()).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.names.clone();
        if self.errors.is_some() {
            header.push("err".into());
        }
        w.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec: Vec<String> = row.0.iter().map(|v| format!("{v:?}")).collect();
            if let Some(e) = &self.errors {
                rec.push(format!("{:?}", e[i]));
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| TdsError::io(path, e.into_error()))?;
        fs::write(path, bytes).map_err(|e| TdsError::io(path, e))
    }
}

/// Applies compression and extraction to every row of a row-major matrix.
pub fn build_feature_matrix(
    ensemble: &Ensemble,
    rows: &[f64],
    targets: Option<&[f64]>,
    config: &TrajectoryConfig,
) -> Result<FeatureMatrix> {
    config.validate()?;
    let d = ensemble.n_features;
    if rows.len() % d != 0 {
        return Err(TdsError::DimensionMismatch {
            expected: d,
            found: rows.len() % d,
        });
    }
    let n = rows.len() / d;
    if let Some(t) = targets {
        if t.len() != n {
            return Err(TdsError::LengthMismatch { left: n, right: t.len() });
        }
    } else if config.use_residual_trajectory {
        return Err(TdsError::MissingTargets);
    }
    let per_row: Vec<(FeatureVector, Option<f64>)> = rows
        .par_chunks(d)
        .enumerate()
        .map(|(i, x)| row_features(ensemble, x, targets.map(|t| t[i]), config))
        .collect::<Result<_>>()?;
    let errors = targets.map(|_| per_row.iter().map(|(_, e)| e.unwrap()).collect());
    Ok(FeatureMatrix {
        names: config.feature_names(),
        rows: per_row.into_iter().map(|(f, _)| f).collect(),
        errors,
    })
}
