//! Pool-based active learning: each round retrains the ensemble on the labeled
//! set, refits the difficulty model, and moves a batch from the pool into the
//! labeled set according to the chosen acquisition rule.

use std::time::Instant;

use rand::seq::index::sample;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnSpec, Dataset, SplitSets};
use crate::error::{Result, TdsError};
use crate::explain::{self, SegmentConfig, SegmentInput, SegmentSet};
use crate::gbm::{self, Ensemble, GbmConfig};
use crate::rng;
use crate::tds::{self, RegressorConfig};
use crate::trajectory::TrajectoryConfig;
use crate::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    Tds,
    TdsSegment,
    Random,
    UncertaintyEntropy,
    UncertaintyMargin,
    UncertaintyLeastConfident,
    UncertaintyResidual,
}

impl Acquisition {
    pub fn name(self) -> &'static str {
        match self {
            Acquisition::Tds => "tds",
            Acquisition::TdsSegment => "tds_segment",
            Acquisition::Random => "random",
            Acquisition::UncertaintyEntropy => "uncertainty_entropy",
            Acquisition::UncertaintyMargin => "uncertainty_margin",
            Acquisition::UncertaintyLeastConfident => "uncertainty_least_confident",
            Acquisition::UncertaintyResidual => "uncertainty_residual",
        }
    }

    fn uncertainty(self) -> Option<Uncertainty> {
        match self {
            Acquisition::UncertaintyEntropy => Some(Uncertainty::Entropy),
            Acquisition::UncertaintyMargin => Some(Uncertainty::Margin),
            Acquisition::UncertaintyLeastConfident => Some(Uncertainty::LeastConfident),
            Acquisition::UncertaintyResidual => Some(Uncertainty::Residual),
            _ => None,
        }
    }
}

impl std::fmt::Display for Acquisition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uncertainty {
    Entropy,
    Margin,
    LeastConfident,
    /// Disagreement between the half-ensemble and the full ensemble.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlConfig {
    pub rounds: usize,
    pub batch_size: usize,
    pub acquisition: Acquisition,
    pub mix_ratio: f64,
    /// Rounds that mix top-TDS rows with random draws; `None` means 3 for
    /// regression and every round for classification.
    pub mix_rounds: Option<usize>,
    pub seed: u64,
    pub gbm: GbmConfig,
    pub trajectory: TrajectoryConfig,
    pub regressor: RegressorConfig,
    pub segment: SegmentConfig,
}

impl Default for AlConfig {
    fn default() -> Self {
        AlConfig {
            rounds: 30,
            batch_size: 50,
            acquisition: Acquisition::Tds,
            mix_ratio: 0.5,
            mix_rounds: None,
            seed: 0,
            gbm: GbmConfig::default(),
            trajectory: TrajectoryConfig::default(),
            regressor: RegressorConfig::default(),
            segment: SegmentConfig::default(),
        }
    }
}

impl AlConfig {
    pub fn mix_rounds_for(&self, task: Task) -> usize {
        self.mix_rounds.unwrap_or(match task {
            Task::Regression => 3,
            Task::BinaryClassification => self.rounds,
        })
    }

    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(TdsError::InvalidConfig(format!(
                "mix_ratio must be in [0, 1], got {}",
                self.mix_ratio
            )));
        }
        if self.batch_size == 0 {
            return Err(TdsError::InvalidConfig("batch_size must be positive".into()));
        }
        let needed = self.batch_size.saturating_mul(self.rounds);
        if needed > pool_size {
            return Err(TdsError::PoolExhausted {
                requested: needed,
                available: pool_size,
            });
        }
        if self.trajectory.use_residual_trajectory {
            return Err(TdsError::InvalidConfig(
                "pool rows are unlabeled; the residual trajectory stream cannot score them".into(),
            ));
        }
        self.gbm.validate()?;
        self.trajectory.validate()?;
        self.segment.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Rmse,
    LogLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub labeled_count: usize,
    pub val_metric: f64,
    pub test_metric: f64,
    /// Wall time spent choosing the batch that follows this round.
    pub selection_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub acquisition: Acquisition,
    pub seed: u64,
    pub metric: MetricKind,
    pub points: Vec<CurvePoint>,
}

/// Top-`k` indices by descending score, ties by index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Batch of pool positions chosen by difficulty. In mixing rounds,
/// `⌈mix_ratio·b⌉` come from the top of the ranking and the rest are drawn
/// uniformly from the remaining pool.
pub fn select_tds(
    scores: &[f64],
    batch_size: usize,
    mix_ratio: f64,
    round: usize,
    mix_rounds: usize,
    seed: u64,
) -> Vec<usize> {
    let b = batch_size.min(scores.len());
    if round >= mix_rounds {
        return top_k(scores, b);
    }
    let n_top = ((mix_ratio * b as f64).ceil() as usize).min(b);
    let mut chosen = top_k(scores, n_top);
    let mut taken = vec![false; scores.len()];
    for &i in &chosen {
        taken[i] = true;
    }
    let rest: Vec<usize> = (0..scores.len()).filter(|&i| !taken[i]).collect();
    let mut r = rng::stream(seed, 0x3a1 + round as u64);
    chosen.extend(sample(&mut r, rest.len(), b - n_top).into_iter().map(|j| rest[j]));
    chosen
}

/// Top-`b` by difficulty among pool rows matching the selected segments,
/// topped up from the global ranking when too few rows match.
pub fn select_tds_segment(
    pool_rows: &[f64],
    d: usize,
    segments: &SegmentSet,
    scores: &[f64],
    batch_size: usize,
) -> Vec<usize> {
    let b = batch_size.min(scores.len());
    let matching = explain::segment_filter(pool_rows, d, segments);
    let local: Vec<f64> = matching.iter().map(|&i| scores[i]).collect();
    let mut chosen: Vec<usize> = top_k(&local, b).into_iter().map(|j| matching[j]).collect();
    if chosen.len() < b {
        log::info!(
            "only {} pool rows match the selected segments; filling {} from the global ranking",
            chosen.len(),
            b - chosen.len()
        );
        let mut taken = vec![false; scores.len()];
        for &i in &chosen {
            taken[i] = true;
        }
        let fill: Vec<usize> = top_k(scores, scores.len())
            .into_iter()
            .filter(|&i| !taken[i])
            .take(b - chosen.len())
            .collect();
        chosen.extend(fill);
    }
    chosen
}

/// Per-row uncertainty; larger means more uncertain.
pub fn uncertainty_scores(ensemble: &Ensemble, rows: &[f64], variant: Uncertainty) -> Result<Vec<f64>> {
    let d = ensemble.n_features;
    if variant != Uncertainty::Residual && ensemble.task != Task::BinaryClassification {
        return Err(TdsError::TaskMismatch {
            op: "probability-based uncertainty",
            task: ensemble.task.to_string(),
        });
    }
    rows.chunks(d)
        .map(|x| {
            Ok(match variant {
                Uncertainty::Residual => {
                    let traj = ensemble.trajectory(x)?;
                    let half = match traj.len() / 2 {
                        0 => ensemble.base_score,
                        h => traj[h - 1],
                    };
                    (half - traj.last().copied().unwrap_or(ensemble.base_score)).abs()
                }
                _ => probability_uncertainty(ensemble.predict_proba(x)?, variant),
            })
        })
        .collect()
}

/// Entropy, negative margin or least-confidence of a binary probability.
pub fn probability_uncertainty(p: f64, variant: Uncertainty) -> f64 {
    match variant {
        Uncertainty::Entropy => {
            let h = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
            h(p) + h(1.0 - p)
        }
        Uncertainty::Margin => -(2.0 * p - 1.0).abs(),
        Uncertainty::LeastConfident => 1.0 - p.max(1.0 - p),
        Uncertainty::Residual => 0.0,
    }
}

pub fn select_uncertainty(
    ensemble: &Ensemble,
    pool_rows: &[f64],
    variant: Uncertainty,
    batch_size: usize,
) -> Result<Vec<usize>> {
    let scores = uncertainty_scores(ensemble, pool_rows, variant)?;
    Ok(top_k(&scores, batch_size))
}

fn metric(ensemble: &Ensemble, rows: &[f64], targets: &[f64]) -> Result<f64> {
    let d = ensemble.n_features;
    let n = targets.len() as f64;
    match ensemble.task {
        Task::Regression => {
            let outputs = ensemble.predict_raw_batch(rows)?;
            let sse: f64 = outputs.iter().zip(targets).map(|(o, y)| (o - y) * (o - y)).sum();
            Ok((sse / n).sqrt())
        }
        Task::BinaryClassification => {
            let mut total = 0.0;
            for (x, &y) in rows.chunks(d).zip(targets) {
                let p = ensemble.predict_proba(x)?.clamp(1e-15, 1.0 - 1e-15);
                total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
            Ok(total / n)
        }
    }
}

fn round_seed(seed: u64, round: usize) -> u64 {
    rng::stream(seed, 0x90a + round as u64).next_u64()
}

fn has_both_classes(targets: &[f64]) -> bool {
    targets.iter().any(|&y| y == 0.0) && targets.iter().any(|&y| y == 1.0)
}

/// A finished run: the curve, the last model and the rows it was trained on.
#[derive(Debug, Clone)]
pub struct AlRun {
    pub curve: LearningCurve,
    pub final_ensemble: Ensemble,
    /// Dataset row indices of the final labeled set, ascending.
    pub labeled: Vec<usize>,
}

/// Runs the full loop and returns one curve point per round, starting with
/// the model trained on the initial labeled set.
pub fn run_al(data: &Dataset, splits: &SplitSets, config: &AlConfig) -> Result<LearningCurve> {
    Ok(run_al_detailed(data, splits, config)?.curve)
}

pub fn run_al_detailed(data: &Dataset, splits: &SplitSets, config: &AlConfig) -> Result<AlRun> {
    let (Some(initial), Some(pool_init)) = (&splits.al_initial, &splits.al_pool) else {
        return Err(TdsError::InvalidConfig(
            "active learning needs splits made in active-learning mode".into(),
        ));
    };
    config.validate(pool_init.len())?;
    let task = data.task;
    let mix_rounds = config.mix_rounds_for(task);
    let (cal_x, cal_y) = data.gather(&splits.calibration);
    let (test_x, test_y) = data.gather(&splits.test);

    let mut labeled = initial.clone();
    let mut pool = pool_init.clone();
    let mut points = Vec::with_capacity(config.rounds + 1);
    let mut draw_rng = rng::stream(config.seed, 0x5e1);
    let mut final_ensemble = None;

    for round in 0..=config.rounds {
        labeled.sort_unstable();
        if task == Task::BinaryClassification {
            while !has_both_classes(&labeled.iter().map(|&i| data.targets[i]).collect::<Vec<_>>()) {
                if pool.is_empty() {
                    return Err(TdsError::SingleClass("labeled set"));
                }
                let take = config.batch_size.min(pool.len());
                log::warn!("round {round}: labeled set has one class; drawing {take} random pool rows");
                let mut picks: Vec<usize> = sample(&mut draw_rng, pool.len(), take).into_vec();
                picks.sort_unstable_by(|a, b| b.cmp(a));
                for p in picks {
                    labeled.push(pool.swap_remove(p));
                }
                labeled.sort_unstable();
            }
        }

        let (lab_x, lab_y) = data.gather(&labeled);
        let labeled_count = lab_y.len();
        let gbm_config = GbmConfig {
            seed: round_seed(config.seed, round),
            ..config.gbm.clone()
        };
        let mut ensemble = gbm::fit(&lab_x, &lab_y, task, &gbm_config)?;
        if task == Task::BinaryClassification {
            ensemble = ensemble.temperature_scale(&cal_x, &cal_y)?;
        }
        let val_metric = metric(&ensemble, &cal_x, &cal_y)?;
        let test_metric = metric(&ensemble, &test_x, &test_y)?;
        log::debug!(
            "{} seed {} round {round}: {} labeled, val {val_metric:.5}, test {test_metric:.5}",
            config.acquisition,
            config.seed,
            labeled.len()
        );

        let mut selection_seconds = 0.0;
        if round < config.rounds {
            let started = Instant::now();
            let (pool_x, _) = data.gather(&pool);
            let mut picks = select_batch(
                config,
                &ensemble,
                &data.schema,
                (&cal_x, &cal_y),
                &pool_x,
                round,
                mix_rounds,
            )?;
            selection_seconds = started.elapsed().as_secs_f64();
            picks.sort_unstable_by(|a, b| b.cmp(a));
            picks.dedup();
            for p in picks {
                labeled.push(pool.swap_remove(p));
            }
        } else {
            final_ensemble = Some(ensemble);
        }
        points.push(CurvePoint {
            round,
            labeled_count,
            val_metric,
            test_metric,
            selection_seconds,
        });
    }
    let curve = LearningCurve {
        acquisition: config.acquisition,
        seed: config.seed,
        metric: match task {
            Task::Regression => MetricKind::Rmse,
            Task::BinaryClassification => MetricKind::LogLoss,
        },
        points,
    };
    Ok(AlRun {
        curve,
        final_ensemble: final_ensemble.expect("the last round trains a model"),
        labeled,
    })
}

fn select_batch(
    config: &AlConfig,
    ensemble: &Ensemble,
    schema: &[ColumnSpec],
    (cal_x, cal_y): (&[f64], &[f64]),
    pool_x: &[f64],
    round: usize,
    mix_rounds: usize,
) -> Result<Vec<usize>> {
    let d = ensemble.n_features;
    let b = config.batch_size;
    let seed = round_seed(config.seed, round);
    match config.acquisition {
        Acquisition::Random => {
            let n = pool_x.len() / d;
            let mut r = rng::stream(seed, 0x7a);
            Ok(sample(&mut r, n, b.min(n)).into_vec())
        }
        Acquisition::Tds | Acquisition::TdsSegment => {
            let model = tds::fit_tds(ensemble, cal_x, cal_y, &config.trajectory, &config.regressor, seed)?;
            let scorer = model.bind(ensemble)?;
            let pool_scores = scorer.values(pool_x, None)?;
            if config.acquisition == Acquisition::Tds {
                return Ok(select_tds(&pool_scores, b, config.mix_ratio, round, mix_rounds, seed));
            }
            let cal_scores = scorer.values(cal_x, None)?;
            let hard = explain::hard_subset(&pool_scores, config.segment.hard_fraction);
            let hard_x: Vec<f64> = hard.iter().flat_map(|&i| pool_x[i * d..(i + 1) * d].iter().copied()).collect();
            let attributions = explain::tree_shap_batch(ensemble, &hard_x)?;
            let segments = explain::build_segments(
                &SegmentInput {
                    hard_rows: &hard_x,
                    attributions: &attributions,
                    schema,
                    calibration_rows: cal_x,
                    calibration_tds: &cal_scores,
                },
                &SegmentConfig {
                    seed,
                    ..config.segment.clone()
                },
            )?;
            Ok(select_tds_segment(pool_x, d, &segments, &pool_scores, b))
        }
        other => {
            let variant = other.uncertainty().expect("remaining acquisitions are uncertainty variants");
            select_uncertainty(ensemble, pool_x, variant, b)
        }
    }
}

/// Trapezoidal area of the metric over labeled count, divided by the count
/// span. `fraction` restricts to rounds whose position `round / last_round`
/// lies in the closed range.
pub fn aulc(curve: &LearningCurve, fraction: Option<(f64, f64)>) -> Result<f64> {
    let last = curve.points.last().map_or(0, |p| p.round).max(1) as f64;
    let pts: Vec<&CurvePoint> = curve
        .points
        .iter()
        .filter(|p| match fraction {
            None => true,
            Some((lo, hi)) => {
                let f = p.round as f64 / last;
                f >= lo - 1e-12 && f <= hi + 1e-12
            }
        })
        .collect();
    if pts.len() < 2 {
        return Err(TdsError::Empty("learning-curve segment"));
    }
    let span = (pts[pts.len() - 1].labeled_count - pts[0].labeled_count) as f64;
    if span <= 0.0 {
        return Err(TdsError::Empty("learning-curve segment"));
    }
    let area: f64 = pts
        .windows(2)
        .map(|w| {
            (w[1].labeled_count - w[0].labeled_count) as f64 * (w[0].test_metric + w[1].test_metric) / 2.0
        })
        .sum();
    Ok(area / span)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlSummary {
    pub acquisition: Acquisition,
    pub seed: u64,
    pub metric: MetricKind,
    pub aulc: f64,
    pub aulc_75_100: Option<f64>,
    /// Test metric at the round with the best validation metric.
    pub best_by_val_test: f64,
    pub final_val: f64,
    pub final_test: f64,
    pub selection_seconds: Vec<f64>,
    pub total_selection_seconds: f64,
}

impl LearningCurve {
    pub fn summary(&self) -> Result<AlSummary> {
        let last = self.points.last().ok_or(TdsError::Empty("learning curve"))?;
        let best = self
            .points
            .iter()
            .min_by(|a, b| a.val_metric.total_cmp(&b.val_metric))
            .expect("non-empty");
        let selection_seconds: Vec<f64> = self.points.iter().map(|p| p.selection_seconds).collect();
        Ok(AlSummary {
            acquisition: self.acquisition,
            seed: self.seed,
            metric: self.metric,
            aulc: aulc(self, None)?,
            aulc_75_100: aulc(self, Some((0.75, 1.0))).ok(),
            best_by_val_test: best.test_metric,
            final_val: last.val_metric,
            final_test: last.test_metric,
            total_selection_seconds: selection_seconds.iter().sum(),
            selection_seconds,
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["round", "labeled_count", "val", "test"])?;
        for p in &self.points {
            w.write_record([
                p.round.to_string(),
                p.labeled_count.to_string(),
                format!("{:?}", p.val_metric),
                format!("{:?}", p.test_metric),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| TdsError::io("<memory>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
