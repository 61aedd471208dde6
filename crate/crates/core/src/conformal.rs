//! Split conformal prediction, optionally stratified into bins (Mondrian) by
//! difficulty score or by predicted value, plus coverage diagnostics across
//! difficulty deciles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TdsError};
use crate::gbm::Ensemble;
use crate::tds::DifficultyModel;
use crate::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpMode {
    Vanilla,
    TdsMondrian,
    /// Mondrian baseline conditioned on predicted-value quantile bins.
    PredictionMondrian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpModel {
    pub mode: CpMode,
    pub alpha: f64,
    pub task: Task,
    /// Interior bin edges, non-decreasing; `K - 1` of them for `K` bins.
    pub edges: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub counts: Vec<usize>,
    pub ensemble_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictionRegion {
    Interval { lo: f64, hi: f64 },
    LabelSet { labels: Vec<u8> },
}

impl PredictionRegion {
    /// Interval width or set size.
    pub fn size(&self) -> f64 {
        match self {
            PredictionRegion::Interval { lo, hi } => hi - lo,
            PredictionRegion::LabelSet { labels } => labels.len() as f64,
        }
    }
}

/// Index of the `⌈(1−α)(n+1)⌉`-th smallest value, clamped to `n`, as a
/// zero-based position.
pub fn quantile_index(n: usize, alpha: f64) -> usize {
    let rank = ((1.0 - alpha) * (n as f64 + 1.0) - 1e-9).ceil().max(1.0) as usize;
    rank.min(n) - 1
}

/// The finite-sample conformal quantile of `scores`.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(TdsError::Empty("conformal calibration bin"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_index(sorted.len(), alpha)])
}

/// `|y − ŷ|` for regression, `1 − p̂_y` for classification.
pub fn nonconformity(task: Task, prediction: f64, y: f64) -> f64 {
    match task {
        Task::Regression => (y - prediction).abs(),
        Task::BinaryClassification => {
            let p_y = if y >= 0.5 { prediction } else { 1.0 - prediction };
            1.0 - p_y
        }
    }
}

/// Bin of `value`: the number of edges strictly below it, so boundary values
/// fall in the lower bin and anything above the top edge lands in the last.
pub fn bin_of(edges: &[f64], value: f64) -> usize {
    edges.partition_point(|&e| e < value)
}

/// Edges at the `k/K` empirical quantiles of `values`.
pub fn quantile_edges(values: &[f64], k: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    (1..k)
        .map(|b| {
            let rank = (b * n).div_ceil(k).max(1);
            sorted[rank - 1]
        })
        .collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(TdsError::InvalidConfig(format!("alpha must be in (0, 1), got {alpha}")))
    }
}

struct Scored {
    predictions: Vec<f64>,
    tds: Vec<f64>,
}

fn score_rows(ensemble: &Ensemble, difficulty: &DifficultyModel, rows: &[f64]) -> Result<Scored> {
    let scorer = difficulty.bind(ensemble)?;
    let tds = scorer.values(rows, None)?;
    let d = ensemble.n_features;
    let predictions = rows
        .par_chunks(d)
        .map(|x| ensemble.predict(x))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Scored { predictions, tds })
}

impl CpModel {
    fn stratifier(&self, tds: f64, prediction: f64) -> f64 {
        match self.mode {
            CpMode::Vanilla => 0.0,
            CpMode::TdsMondrian => tds,
            CpMode::PredictionMondrian => prediction,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.quantiles.len()
    }

    pub fn bin(&self, tds: f64, prediction: f64) -> usize {
        match self.mode {
            CpMode::Vanilla => 0,
            _ => bin_of(&self.edges, self.stratifier(tds, prediction)),
        }
    }

    /// Region for a row given its point prediction and difficulty score.
    pub fn region(&self, prediction: f64, tds: f64) -> PredictionRegion {
        let q = self.quantiles[self.bin(tds, prediction)];
        match self.task {
            Task::Regression => PredictionRegion::Interval {
                lo: prediction - q,
                hi: prediction + q,
            },
            Task::BinaryClassification => PredictionRegion::LabelSet {
                labels: [0u8, 1]
                    .into_iter()
                    .filter(|&y| nonconformity(self.task, prediction, y as f64) <= q)
                    .collect(),
            },
        }
    }

    /// Whether `y` lies in the region, using the same comparison as
    /// [`CpModel::region`].
    pub fn covers(&self, prediction: f64, tds: f64, y: f64) -> bool {
        nonconformity(self.task, prediction, y) <= self.quantiles[self.bin(tds, prediction)]
    }

    fn check(&self, ensemble: &Ensemble) -> Result<()> {
        let found = ensemble.fingerprint();
        if found != self.ensemble_fingerprint {
            return Err(TdsError::FingerprintMismatch {
                expected: self.ensemble_fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn predict_region(
        &self,
        ensemble: &Ensemble,
        difficulty: &DifficultyModel,
        x: &[f64],
    ) -> Result<PredictionRegion> {
        self.check(ensemble)?;
        let tds = difficulty.bind(ensemble)?.score(x, None)?.value;
        Ok(self.region(ensemble.predict(x)?, tds))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Calibrates a conformal model on held-out rows. Bins that come out empty
/// shrink `K` until every bin has calibration data.
pub fn fit_cp(
    ensemble: &Ensemble,
    difficulty: &DifficultyModel,
    rows: &[f64],
    targets: &[f64],
    alpha: f64,
    mode: CpMode,
    n_bins: usize,
) -> Result<CpModel> {
    check_alpha(alpha)?;
    if targets.is_empty() {
        return Err(TdsError::Empty("calibration set"));
    }
    if rows.len() != targets.len() * ensemble.n_features {
        return Err(TdsError::DimensionMismatch {
            expected: targets.len() * ensemble.n_features,
            found: rows.len(),
        });
    }
    let scored = score_rows(ensemble, difficulty, rows)?;
    let scores: Vec<f64> = scored
        .predictions
        .iter()
        .zip(targets)
        .map(|(&p, &y)| nonconformity(ensemble.task, p, y))
        .collect();
    fit_from_scores(
        ensemble,
        &scores,
        &scored.tds,
        &scored.predictions,
        alpha,
        mode,
        n_bins,
    )
}

/// Same as [`fit_cp`] but from precomputed calibration quantities.
pub fn fit_from_scores(
    ensemble: &Ensemble,
    scores: &[f64],
    tds: &[f64],
    predictions: &[f64],
    alpha: f64,
    mode: CpMode,
    n_bins: usize,
) -> Result<CpModel> {
    check_alpha(alpha)?;
    let n = scores.len();
    if n == 0 {
        return Err(TdsError::Empty("calibration set"));
    }
    if tds.len() != n || predictions.len() != n {
        return Err(TdsError::LengthMismatch {
            left: n,
            right: tds.len().min(predictions.len()),
        });
    }
    let mut model = CpModel {
        mode,
        alpha,
        task: ensemble.task,
        edges: Vec::new(),
        quantiles: Vec::new(),
        counts: Vec::new(),
        ensemble_fingerprint: ensemble.fingerprint(),
    };
    let stratifier: Vec<f64> = (0..n).map(|i| model.stratifier(tds[i], predictions[i])).collect();

    let mut k = match mode {
        CpMode::Vanilla => 1,
        _ => n_bins.max(1),
    };
    if k > 1 && n < 2 * k {
        log::warn!("{n} calibration rows cannot fill {k} bins of two; using {}", (n / 2).max(1));
        k = (n / 2).max(1);
    }
    loop {
        model.edges = if k > 1 { quantile_edges(&stratifier, k) } else { Vec::new() };
        let mut bins: Vec<Vec<f64>> = vec![Vec::new(); k];
        for (i, &s) in scores.iter().enumerate() {
            bins[model.bin(tds[i], predictions[i])].push(s);
        }
        if bins.iter().all(|b| !b.is_empty()) {
            model.counts = bins.iter().map(Vec::len).collect();
            model.quantiles = bins
                .iter()
                .map(|b| conformal_quantile(b, alpha))
                .collect::<Result<_>>()?;
            return Ok(model);
        }
        log::warn!("empty conformal bin with K = {k}; retrying with K = {}", k - 1);
        k -= 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileCoverage {
    /// 1-based decile of the test difficulty scores.
    pub decile: usize,
    pub n: usize,
    pub coverage: f64,
    pub mean_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileSummary {
    pub per_decile: Vec<DecileCoverage>,
    pub mace: f64,
    pub maxce: f64,
    pub slope: f64,
}

/// Groups rows into ten equal-count deciles by ascending score (ties by index)
/// and summarizes coverage against the `1 − α` target.
pub fn decile_coverage(scores: &[f64], covered: &[bool], sizes: &[f64], alpha: f64) -> Result<DecileSummary> {
    let n = scores.len();
    if n == 0 {
        return Err(TdsError::Empty("test set"));
    }
    if covered.len() != n || sizes.len() != n {
        return Err(TdsError::LengthMismatch {
            left: n,
            right: covered.len().min(sizes.len()),
        });
    }
    if n < 100 {
        log::warn!("{n} test rows leave fewer than 10 rows per decile");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut hits = [0usize; 10];
    let mut counts = [0usize; 10];
    let mut size_sum = [0.0f64; 10];
    for (rank, &i) in order.iter().enumerate() {
        let d = rank * 10 / n;
        counts[d] += 1;
        size_sum[d] += sizes[i];
        if covered[i] {
            hits[d] += 1;
        }
    }
    let per_decile: Vec<DecileCoverage> = (0..10)
        .filter(|&d| counts[d] > 0)
        .map(|d| DecileCoverage {
            decile: d + 1,
            n: counts[d],
            coverage: hits[d] as f64 / counts[d] as f64,
            mean_size: size_sum[d] / counts[d] as f64,
        })
        .collect();
    let target = 1.0 - alpha;
    let errors: Vec<f64> = per_decile.iter().map(|c| (c.coverage - target).abs()).collect();
    let mace = errors.iter().sum::<f64>() / errors.len() as f64;
    let maxce = errors.iter().copied().fold(0.0, f64::max);
    let xs: Vec<f64> = per_decile.iter().map(|c| c.decile as f64).collect();
    let ys: Vec<f64> = per_decile.iter().map(|c| c.coverage).collect();
    Ok(DecileSummary {
        per_decile,
        mace,
        maxce,
        slope: least_squares_slope(&xs, &ys),
    })
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCoverage {
    pub bin: usize,
    pub n_calibration: usize,
    pub quantile: f64,
    pub n_test: usize,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpReport {
    pub mode: CpMode,
    pub alpha: f64,
    pub n_test: usize,
    pub coverage: f64,
    /// Mean interval width (regression) or mean set size (classification).
    pub width: f64,
    pub mace: f64,
    pub maxce: f64,
    pub slope: f64,
    pub per_decile: Vec<DecileCoverage>,
    pub per_bin: Vec<BinCoverage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub row: usize,
    pub tds: f64,
    pub bin: usize,
    pub prediction: f64,
    pub target: f64,
    pub region: PredictionRegion,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpDiagnostics {
    pub report: CpReport,
    pub regions: Vec<RegionRecord>,
}

impl CpDiagnostics {
    pub fn regions_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "tds", "bin", "prediction", "target", "lo", "hi", "labels", "covered"])?;
        for r in &self.regions {
            let (lo, hi, labels) = match &r.region {
                PredictionRegion::Interval { lo, hi } => (format!("{lo:?}"), format!("{hi:?}"), String::new()),
                PredictionRegion::LabelSet { labels } => (
                    String::new(),
                    String::new(),
                    labels.iter().map(u8::to_string).collect::<Vec<_>>().join(";"),
                ),
            };
            w.write_record([
                r.row.to_string(),
                format!("{:?}", r.tds),
                r.bin.to_string(),
                format!("{:?}", r.prediction),
                format!("{:?}", r.target),
                lo,
                hi,
                labels,
                r.covered.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| TdsError::io("<memory>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Coverage, size and per-decile diagnostics on labeled test rows.
pub fn cp_diagnostics(
    model: &CpModel,
    ensemble: &Ensemble,
    difficulty: &DifficultyModel,
    rows: &[f64],
    targets: &[f64],
) -> Result<CpDiagnostics> {
    model.check(ensemble)?;
    if targets.is_empty() {
        return Err(TdsError::Empty("test set"));
    }
    if rows.len() != targets.len() * ensemble.n_features {
        return Err(TdsError::DimensionMismatch {
            expected: targets.len() * ensemble.n_features,
            found: rows.len(),
        });
    }
    let scored = score_rows(ensemble, difficulty, rows)?;
    Ok(diagnostics_from_scores(model, &scored.predictions, &scored.tds, targets))
}

/// Diagnostics from precomputed test predictions and difficulty scores.
pub fn diagnostics_from_scores(
    model: &CpModel,
    predictions: &[f64],
    tds: &[f64],
    targets: &[f64],
) -> CpDiagnostics {
    let n = targets.len();
    let regions: Vec<RegionRecord> = (0..n)
        .map(|i| RegionRecord {
            row: i,
            tds: tds[i],
            bin: model.bin(tds[i], predictions[i]),
            prediction: predictions[i],
            target: targets[i],
            region: model.region(predictions[i], tds[i]),
            covered: model.covers(predictions[i], tds[i], targets[i]),
        })
        .collect();
    let covered: Vec<bool> = regions.iter().map(|r| r.covered).collect();
    let sizes: Vec<f64> = regions.iter().map(|r| r.region.size()).collect();
    let deciles = decile_coverage(tds, &covered, &sizes, model.alpha)
        .expect("lengths checked and test set non-empty");
    let per_bin = (0..model.n_bins())
        .map(|b| {
            let in_bin: Vec<&RegionRecord> = regions.iter().filter(|r| r.bin == b).collect();
            BinCoverage {
                bin: b,
                n_calibration: model.counts[b],
                quantile: model.quantiles[b],
                n_test: in_bin.len(),
                coverage: (!in_bin.is_empty())
                    .then(|| in_bin.iter().filter(|r| r.covered).count() as f64 / in_bin.len() as f64),
            }
        })
        .collect();
    CpDiagnostics {
        report: CpReport {
            mode: model.mode,
            alpha: model.alpha,
            n_test: n,
            coverage: covered.iter().filter(|&&c| c).count() as f64 / n as f64,
            width: sizes.iter().sum::<f64>() / n as f64,
            mace: deciles.mace,
            maxce: deciles.maxce,
            slope: deciles.slope,
            per_decile: deciles.per_decile,
            per_bin,
        },
        regions,
    }
}
