//! Per-seed pipelines behind each verb, plus cross-seed aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use tds_core::al::{run_al, AlConfig, AlSummary};
use tds_core::conformal::{cp_diagnostics, fit_cp, CpMode, CpReport};
use tds_core::dataset::{Dataset, SplitMode};
use tds_core::explain::{build_segments, hard_subset, tree_shap_batch, SegmentConfig, SegmentInput};
use tds_core::gbm::{self, Ensemble, GbmConfig};
use tds_core::metrics::{correlate, mean_ci, CorrelationReport, MeanCi};
use tds_core::selective::{risk_coverage, SelectiveSummary};
use tds_core::tds::{fit_tds, scores_csv, DifficultyModel};
use tds_core::{sample_loss, Task};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Train,
    Correlate,
    Al,
    Select,
    Conformal,
    Segment,
}

impl Verb {
    pub fn name(self) -> &'static str {
        match self {
            Verb::Train => "train",
            Verb::Correlate => "correlate",
            Verb::Al => "al",
            Verb::Select => "select",
            Verb::Conformal => "conformal",
            Verb::Segment => "segment",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub kind: &'static str,
}

/// Everything one seed produced.
#[derive(Debug)]
pub struct SeedOutput {
    pub seed: u64,
    pub files: Vec<FileEntry>,
    pub fingerprint: Option<String>,
    pub summary: SeedSummary,
}

#[derive(Debug)]
pub enum SeedSummary {
    Train,
    Correlate(CorrelationReport),
    Al(Vec<AlSummary>),
    Select(SelectiveSummary),
    Conformal(Vec<CpReport>),
    Segment { segments: usize, selected: usize, calibration_coverage: f64 },
}

struct Writer<'a> {
    root: &'a Path,
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl<'a> Writer<'a> {
    fn new(root: &'a Path, seed: u64) -> Result<Self> {
        let dir = root.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Writer {
            root,
            dir,
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, kind: &'static str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        let rel = path.strip_prefix(self.root).unwrap_or(&path);
        self.files.push(FileEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            kind,
        });
        Ok(())
    }

    fn json(&mut self, name: &str, kind: &'static str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.put(name, kind, text)
    }
}

struct Fitted {
    ensemble: Ensemble,
    difficulty: DifficultyModel,
}

fn gbm_config(cfg: &ExperimentConfig, seed: u64) -> GbmConfig {
    GbmConfig {
        seed,
        ..cfg.gbm.clone()
    }
}

/// Trains the base ensemble on `train`, temperature-scales classifiers on
/// `tds_rows` and fits the difficulty model there.
fn fit_models(
    cfg: &ExperimentConfig,
    data: &Dataset,
    train: &[usize],
    tds_rows: &[usize],
    seed: u64,
) -> Result<Fitted> {
    let (x, y) = data.gather(train);
    let mut ensemble = gbm::fit(&x, &y, data.task, &gbm_config(cfg, seed))?;
    let (fx, fy) = data.gather(tds_rows);
    if data.task == Task::BinaryClassification {
        ensemble = ensemble.temperature_scale(&fx, &fy)?;
    }
    let difficulty = fit_tds(&ensemble, &fx, &fy, &cfg.trajectory, &cfg.regressor, seed)?;
    Ok(Fitted {
        ensemble,
        difficulty,
    })
}

fn losses(e: &Ensemble, rows: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    Ok(e.predict_raw_batch(rows)?
        .iter()
        .zip(targets)
        .map(|(&o, &y)| sample_loss(e.task, o, y))
        .collect())
}

fn mode_name(mode: CpMode) -> &'static str {
    match mode {
        CpMode::Vanilla => "vanilla",
        CpMode::TdsMondrian => "tds_mondrian",
        CpMode::PredictionMondrian => "prediction_mondrian",
    }
}

pub fn run_seed(verb: Verb, cfg: &ExperimentConfig, root: &Path, seed: u64) -> Result<SeedOutput> {
    let mut w = Writer::new(root, seed)?;
    let (fingerprint, summary) = match verb {
        Verb::Train => train(cfg, &mut w, seed)?,
        Verb::Correlate | Verb::Select => score_test(verb, cfg, &mut w, seed)?,
        Verb::Al => al(cfg, &mut w, seed)?,
        Verb::Conformal => conformal(cfg, &mut w, seed)?,
        Verb::Segment => segment(cfg, &mut w, seed)?,
    };
    Ok(SeedOutput {
        seed,
        files: w.files,
        fingerprint,
        summary,
    })
}

type Produced = (Option<String>, SeedSummary);

fn train(cfg: &ExperimentConfig, w: &mut Writer, seed: u64) -> Result<Produced> {
    let (data, sets) = cfg.load_split(seed, SplitMode::Standard)?;
    let f = fit_models(cfg, &data, &sets.train, &sets.calibration, seed)?;
    w.put("ensemble.json", "ensemble", f.ensemble.to_json()?)?;
    w.put("difficulty.json", "difficulty_model", f.difficulty.to_json()?)?;
    let (tx, _) = data.gather(&sets.test);
    let scores = f.difficulty.bind(&f.ensemble)?.score_batch(&tx, None)?;
    w.put("scores.csv", "test_scores", scores_csv(&sets.test, &scores)?)?;
    Ok((Some(f.ensemble.fingerprint()), SeedSummary::Train))
}

fn score_test(verb: Verb, cfg: &ExperimentConfig, w: &mut Writer, seed: u64) -> Result<Produced> {
    let (data, sets) = cfg.load_split(seed, SplitMode::Standard)?;
    let f = fit_models(cfg, &data, &sets.train, &sets.calibration, seed)?;
    let (tx, ty) = data.gather(&sets.test);
    let scores = f.difficulty.bind(&f.ensemble)?.score_batch(&tx, None)?;
    let tds: Vec<f64> = scores.iter().map(|s| s.value).collect();
    let loss = losses(&f.ensemble, &tx, &ty)?;
    w.put("scores.csv", "test_scores", scores_csv(&sets.test, &scores)?)?;
    let summary = if verb == Verb::Correlate {
        let report = correlate(&tds, &loss)?;
        if f.difficulty.degenerate {
            log::warn!("seed {seed}: difficulty model is degenerate");
        }
        w.json("correlation.json", "correlation", &report)?;
        SeedSummary::Correlate(report)
    } else {
        let curve = risk_coverage(&tds, &loss)?;
        let summary = curve.summary();
        w.put("risk_coverage.csv", "risk_coverage_curve", curve.to_csv()?)?;
        w.json(
            "selective.json",
            "selective_summary",
            &json!({ "summary": summary, "deciles": curve.deciles() }),
        )?;
        SeedSummary::Select(summary)
    };
    Ok((Some(f.ensemble.fingerprint()), summary))
}

fn al(cfg: &ExperimentConfig, w: &mut Writer, seed: u64) -> Result<Produced> {
    let (data, sets) = cfg.load_split(seed, SplitMode::ActiveLearning)?;
    let mut summaries = Vec::new();
    for &acquisition in &cfg.al.acquisitions {
        let config = AlConfig {
            rounds: cfg.al.rounds,
            batch_size: cfg.al.batch_size,
            acquisition,
            mix_ratio: cfg.al.mix_ratio,
            mix_rounds: cfg.al.mix_rounds,
            seed,
            gbm: cfg.gbm.clone(),
            trajectory: cfg.trajectory.clone(),
            regressor: cfg.regressor.clone(),
            segment: SegmentConfig {
                seed,
                ..cfg.segment.clone()
            },
        };
        log::info!("seed {seed}: active learning with {acquisition}");
        let curve = run_al(&data, &sets, &config)?;
        w.put(&format!("curve_{}.csv", acquisition.name()), "learning_curve", curve.to_csv()?)?;
        summaries.push(curve.summary()?);
    }
    Ok((None, SeedSummary::Al(summaries)))
}

fn conformal(cfg: &ExperimentConfig, w: &mut Writer, seed: u64) -> Result<Produced> {
    let (data, sets) = cfg.load_split(seed, SplitMode::Standard)?;
    let half = sets.calibration.len() / 2;
    let (tds_rows, cp_rows) = sets.calibration.split_at(half);
    let f = fit_models(cfg, &data, &sets.train, tds_rows, seed)?;
    let (cx, cy) = data.gather(cp_rows);
    let (tx, ty) = data.gather(&sets.test);
    let mut reports = Vec::new();
    for &mode in &cfg.conformal.modes {
        let model = fit_cp(
            &f.ensemble,
            &f.difficulty,
            &cx,
            &cy,
            cfg.conformal.alpha,
            mode,
            cfg.conformal.n_bins,
        )?;
        let diag = cp_diagnostics(&model, &f.ensemble, &f.difficulty, &tx, &ty)?;
        let name = mode_name(mode);
        w.put(&format!("cp_{name}_model.json"), "cp_model", model.to_json()?)?;
        w.json(&format!("cp_{name}_report.json"), "cp_report", &diag.report)?;
        w.put(&format!("cp_{name}_regions.csv"), "cp_regions", diag.regions_csv()?)?;
        reports.push(diag.report);
    }
    Ok((Some(f.ensemble.fingerprint()), SeedSummary::Conformal(reports)))
}

fn segment(cfg: &ExperimentConfig, w: &mut Writer, seed: u64) -> Result<Produced> {
    let (data, sets) = cfg.load_split(seed, SplitMode::Standard)?;
    let f = fit_models(cfg, &data, &sets.train, &sets.calibration, seed)?;
    let scorer = f.difficulty.bind(&f.ensemble)?;
    let (cal_x, _) = data.gather(&sets.calibration);
    let cal_tds = scorer.values(&cal_x, None)?;
    let (pool_x, _) = data.gather(&sets.test);
    let pool_tds = scorer.values(&pool_x, None)?;
    let config = SegmentConfig {
        seed,
        ..cfg.segment.clone()
    };
    let d = data.n_features;
    let hard_x: Vec<f64> = hard_subset(&pool_tds, config.hard_fraction)
        .iter()
        .flat_map(|&i| pool_x[i * d..(i + 1) * d].iter().copied())
        .collect();
    let attributions = tree_shap_batch(&f.ensemble, &hard_x)?;
    let set = build_segments(
        &SegmentInput {
            hard_rows: &hard_x,
            attributions: &attributions,
            schema: &data.schema,
            calibration_rows: &cal_x,
            calibration_tds: &cal_tds,
        },
        &config,
    )?;
    let report = set.report(&data.schema, &data.standardization);
    w.json("segments.json", "segment_report", &report)?;
    w.put("segments.txt", "segment_table", report.render_table())?;
    Ok((
        Some(f.ensemble.fingerprint()),
        SeedSummary::Segment {
            segments: set.segments.len(),
            selected: set.selected_prefix.len(),
            calibration_coverage: set.calibration_coverage(),
        },
    ))
}

fn ci(values: impl IntoIterator<Item = f64>) -> Option<MeanCi> {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    mean_ci(&v)
}

/// Cross-seed aggregate written next to the manifest; `None` for `train`.
pub fn aggregate(verb: Verb, outputs: &[SeedOutput]) -> Option<Value> {
    let per_seed = || outputs.iter().map(|o| (o.seed, &o.summary));
    Some(match verb {
        Verb::Train => return None,
        Verb::Correlate => {
            let mut seeds = BTreeMap::new();
            let (mut pearson, mut spearman, mut undefined) = (Vec::new(), Vec::new(), 0);
            for (seed, s) in per_seed() {
                if let SeedSummary::Correlate(r) = s {
                    seeds.insert(seed.to_string(), json!(r));
                    match (r.pearson_r.value(), r.spearman_rho.value()) {
                        (Some(p), Some(q)) => {
                            pearson.push(p);
                            spearman.push(q);
                        }
                        _ => undefined += 1,
                    }
                }
            }
            json!({
                "per_seed": seeds,
                "pearson_r": ci(pearson),
                "spearman_rho": ci(spearman),
                "undefined_seeds": undefined,
            })
        }
        Verb::Select => {
            let mut seeds = BTreeMap::new();
            let (mut aurc, mut naurc) = (Vec::new(), Vec::new());
            for (seed, s) in per_seed() {
                if let SeedSummary::Select(r) = s {
                    seeds.insert(seed.to_string(), json!(r));
                    aurc.push(r.aurc);
                    naurc.extend(r.naurc);
                }
            }
            json!({ "per_seed": seeds, "aurc": ci(aurc), "naurc": ci(naurc) })
        }
        Verb::Al => {
            let runs: Vec<&AlSummary> = per_seed()
                .filter_map(|(_, s)| match s {
                    SeedSummary::Al(v) => Some(v.iter()),
                    _ => None,
                })
                .flatten()
                .collect();
            let mut by_acq: BTreeMap<&str, Vec<&AlSummary>> = BTreeMap::new();
            for r in &runs {
                by_acq.entry(r.acquisition.name()).or_default().push(r);
            }
            let aggregate: BTreeMap<&str, Value> = by_acq
                .into_iter()
                .map(|(name, rs)| {
                    (
                        name,
                        json!({
                            "aulc": ci(rs.iter().map(|r| r.aulc)),
                            "aulc_75_100": ci(rs.iter().filter_map(|r| r.aulc_75_100)),
                            "best_by_val_test": ci(rs.iter().map(|r| r.best_by_val_test)),
                            "final_test": ci(rs.iter().map(|r| r.final_test)),
                            "total_selection_seconds": ci(rs.iter().map(|r| r.total_selection_seconds)),
                        }),
                    )
                })
                .collect();
            json!({ "runs": runs, "aggregate": aggregate })
        }
        Verb::Conformal => {
            let reports: Vec<&CpReport> = per_seed()
                .filter_map(|(_, s)| match s {
                    SeedSummary::Conformal(v) => Some(v.iter()),
                    _ => None,
                })
                .flatten()
                .collect();
            let mut by_mode: BTreeMap<&str, Vec<&CpReport>> = BTreeMap::new();
            for r in &reports {
                by_mode.entry(mode_name(r.mode)).or_default().push(r);
            }
            let aggregate: BTreeMap<&str, Value> = by_mode
                .into_iter()
                .map(|(name, rs)| {
                    (
                        name,
                        json!({
                            "coverage": ci(rs.iter().map(|r| r.coverage)),
                            "width": ci(rs.iter().map(|r| r.width)),
                            "mace": ci(rs.iter().map(|r| r.mace)),
                            "maxce": ci(rs.iter().map(|r| r.maxce)),
                            "slope": ci(rs.iter().map(|r| r.slope)),
                        }),
                    )
                })
                .collect();
            json!({ "aggregate": aggregate })
        }
        Verb::Segment => {
            let mut seeds = BTreeMap::new();
            for (seed, s) in per_seed() {
                if let SeedSummary::Segment {
                    segments,
                    selected,
                    calibration_coverage,
                } = s
                {
                    seeds.insert(
                        seed.to_string(),
                        json!({
                            "segments": segments,
                            "selected": selected,
                            "calibration_coverage": calibration_coverage,
                        }),
                    );
                }
            }
            json!({ "per_seed": seeds })
        }
    })
}
