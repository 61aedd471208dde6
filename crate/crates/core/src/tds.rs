//! Difficulty regressor plus empirical-CDF calibration.
//!
//! A small boosted regressor learns the map from trajectory descriptors to the
//! base model's per-sample loss on an evaluation set. Its raw predictions on
//! that same set form the support of an empirical CDF, which turns any raw
//! prediction into a score in `[0, 1]` (higher = harder).

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TdsError};
use crate::gbm::{self, Ensemble, GbmConfig};
use crate::trajectory::{build_feature_matrix, row_features, TrajectoryConfig};
use crate::Task;

/// Version tag of the serialized difficulty model.
pub const DIFFICULTY_FORMAT_VERSION: u32 = 1;

const MIN_EVAL_ROWS: usize = 20;

/// Settings of the difficulty regressor `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Fit `g` to `ln(1 + err)` instead of `err`.
    pub log1p_target: bool,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            n_estimators: 50,
            max_depth: 3,
            learning_rate: 0.1,
            log1p_target: false,
        }
    }
}

impl RegressorConfig {
    fn gbm_config(&self, seed: u64) -> GbmConfig {
        GbmConfig {
            n_estimators: self.n_estimators,
            max_depth: self.max_depth,
            learning_rate: self.learning_rate,
            subsample: 1.0,
            colsample_bytree: 1.0,
            l2_leaf_regularization: 1.0,
            min_child_weight: 1.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdsScore {
    /// ECDF-calibrated score in `[0, 1]`.
    pub value: f64,
    /// Unnormalized regressor output.
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyModel {
    pub version: u32,
    pub regressor: Ensemble,
    /// Sorted raw regressor outputs on the evaluation set.
    pub ecdf: Vec<f64>,
    pub config: TrajectoryConfig,
    pub regressor_config: RegressorConfig,
    pub ensemble_fingerprint: String,
    /// Set when every evaluation loss was identical; scores are valid but
    /// carry no ranking information.
    pub degenerate: bool,
}

/// Fits the difficulty regressor and its ECDF on an evaluation set.
pub fn fit_tds(
    ensemble: &Ensemble,
    rows: &[f64],
    targets: &[f64],
    config: &TrajectoryConfig,
    regressor_config: &RegressorConfig,
    seed: u64,
) -> Result<DifficultyModel> {
    if targets.len() < MIN_EVAL_ROWS {
        return Err(TdsError::TooFewRows {
            needed: MIN_EVAL_ROWS,
            found: targets.len(),
        });
    }
    if rows.len() != targets.len() * ensemble.n_features {
        return Err(TdsError::DimensionMismatch {
            expected: targets.len() * ensemble.n_features,
            found: rows.len(),
        });
    }
    if ensemble.n_trees() < 2 {
        return Err(TdsError::InvalidConfig(
            "trajectory features need an ensemble with at least two trees".into(),
        ));
    }
    let features = build_feature_matrix(ensemble, rows, Some(targets), config)?;
    let errors = features.errors.clone().expect("targets supplied");
    let fit_target: Vec<f64> = if regressor_config.log1p_target {
        errors.iter().map(|e| e.ln_1p()).collect()
    } else {
        errors.clone()
    };
    let lo = errors.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = lo == hi;
    if degenerate {
        log::warn!("all evaluation losses equal {lo}; difficulty scores carry no ranking");
    }

    let flat = features.flat();
    let regressor = gbm::fit(
        &flat,
        &fit_target,
        Task::Regression,
        &regressor_config.gbm_config(seed),
    )?;
    let mut ecdf = regressor.predict_raw_batch(&flat)?;
    ecdf.sort_by(f64::total_cmp);

    Ok(DifficultyModel {
        version: DIFFICULTY_FORMAT_VERSION,
        regressor,
        ecdf,
        config: config.clone(),
        regressor_config: regressor_config.clone(),
        ensemble_fingerprint: ensemble.fingerprint(),
        degenerate,
    })
}

/// A difficulty model checked against one ensemble, ready to score rows.
pub struct Scorer<'a> {
    model: &'a DifficultyModel,
    ensemble: &'a Ensemble,
}

impl DifficultyModel {
    /// `(1/n)·|{i : d̂_i ≤ raw}|`.
    pub fn ecdf_eval(&self, raw: f64) -> f64 {
        if self.ecdf.is_empty() {
            return 0.0;
        }
        let count = self.ecdf.partition_point(|&d| d <= raw);
        count as f64 / self.ecdf.len() as f64
    }

    /// Verifies the ensemble fingerprint once and returns a reusable scorer.
    pub fn bind<'a>(&'a self, ensemble: &'a Ensemble) -> Result<Scorer<'a>> {
        let found = ensemble.fingerprint();
        if found != self.ensemble_fingerprint {
            return Err(TdsError::FingerprintMismatch {
                expected: self.ensemble_fingerprint.clone(),
                found,
            });
        }
        Ok(Scorer {
            model: self,
            ensemble,
        })
    }

    pub fn score(&self, ensemble: &Ensemble, x: &[f64]) -> Result<TdsScore> {
        self.bind(ensemble)?.score(x, None)
    }

    pub fn score_batch(&self, ensemble: &Ensemble, rows: &[f64]) -> Result<Vec<TdsScore>> {
        self.bind(ensemble)?.score_batch(rows, None)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: DifficultyModel = serde_json::from_str(text)?;
        if model.version != DIFFICULTY_FORMAT_VERSION {
            return Err(TdsError::UnsupportedVersion(model.version));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| TdsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| TdsError::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Scorer<'_> {
    /// Scores one row. `target` is needed only when the residual stream is on.
    pub fn score(&self, x: &[f64], target: Option<f64>) -> Result<TdsScore> {
        let (phi, _) = row_features(self.ensemble, x, target, &self.model.config)?;
        let raw = self.model.regressor.raw_output(&phi.0)?;
        Ok(TdsScore {
            value: self.model.ecdf_eval(raw),
            raw,
        })
    }

    pub fn score_batch(&self, rows: &[f64], targets: Option<&[f64]>) -> Result<Vec<TdsScore>> {
        let d = self.ensemble.n_features;
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
        }
        rows.par_chunks(d)
            .enumerate()
            .map(|(i, x)| self.score(x, targets.map(|t| t[i])))
            .collect()
    }

    /// Convenience: only the calibrated values.
    pub fn values(&self, rows: &[f64], targets: Option<&[f64]>) -> Result<Vec<f64>> {
        Ok(self
            .score_batch(rows, targets)?
            .into_iter()
            .map(|s| s.value)
            .collect())
    }
}

/// Score file: `row,tds,raw` with shortest round-trip float formatting.
pub fn scores_csv(rows: &[usize], scores: &[TdsScore]) -> Result<String> {
    if rows.len() != scores.len() {
        return Err(TdsError::LengthMismatch {
            left: rows.len(),
            right: scores.len(),
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "tds", "raw"])?;
    for (r, s) in rows.iter().zip(scores) {
        w.write_record([r.to_string(), format!("{:?}", s.value), format!("{:?}", s.raw)])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| TdsError::io("<memory>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
