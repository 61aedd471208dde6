//! Experiment configuration: one JSON document per run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tds_core::al::Acquisition;
use tds_core::conformal::CpMode;
use tds_core::dataset::{load_csv, preprocess, split, synth, Dataset, NoiseProfile, SplitMode, SplitSets};
use tds_core::explain::SegmentConfig;
use tds_core::gbm::GbmConfig;
use tds_core::tds::RegressorConfig;
use tds_core::trajectory::TrajectoryConfig;
use tds_core::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Correlate,
    Al,
    Select,
    Conformal,
    Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synth {
        task: Task,
        n_rows: usize,
        n_features: usize,
        #[serde(default = "planted")]
        noise_profile: NoiseProfile,
    },
    Csv {
        path: PathBuf,
        target: String,
        task: Task,
    },
}

fn planted() -> NoiseProfile {
    NoiseProfile::PlantedHardRegion
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlSettings {
    pub rounds: usize,
    pub batch_size: usize,
    pub acquisitions: Vec<Acquisition>,
    pub mix_ratio: f64,
    pub mix_rounds: Option<usize>,
}

impl Default for AlSettings {
    fn default() -> Self {
        AlSettings {
            rounds: 30,
            batch_size: 50,
            acquisitions: vec![Acquisition::Tds, Acquisition::Random],
            mix_ratio: 0.5,
            mix_rounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpSettings {
    pub alpha: f64,
    pub n_bins: usize,
    pub modes: Vec<CpMode>,
}

impl Default for CpSettings {
    fn default() -> Self {
        CpSettings {
            alpha: 0.1,
            n_bins: 10,
            modes: vec![CpMode::Vanilla, CpMode::TdsMondrian],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub gbm: GbmConfig,
    pub trajectory: TrajectoryConfig,
    pub regressor: RegressorConfig,
    pub seeds: Vec<u64>,
    pub experiment: Option<ExperimentKind>,
    pub output_dir: PathBuf,
    pub jobs: usize,
    pub al: AlSettings,
    pub conformal: CpSettings,
    pub segment: SegmentConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Synth {
                task: Task::Regression,
                n_rows: 5000,
                n_features: 10,
                noise_profile: NoiseProfile::PlantedHardRegion,
            },
            gbm: GbmConfig::default(),
            trajectory: TrajectoryConfig::default(),
            regressor: RegressorConfig::default(),
            seeds: vec![0],
            experiment: None,
            output_dir: PathBuf::from("tds-out"),
            jobs: 1,
            al: AlSettings::default(),
            conformal: CpSettings::default(),
            segment: SegmentConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let DatasetSource::Csv { path: data, .. } = &mut cfg.dataset {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        if let DatasetSource::Csv { path, .. } = &self.dataset {
            if !path.is_file() {
                bail!("dataset file {} does not exist", path.display());
            }
        }
        self.gbm.validate()?;
        self.trajectory.validate()?;
        self.segment.validate()?;
        if self.al.acquisitions.is_empty() {
            bail!("al.acquisitions must not be empty");
        }
        if self.conformal.modes.is_empty() {
            bail!("conformal.modes must not be empty");
        }
        if !(self.conformal.alpha > 0.0 && self.conformal.alpha < 1.0) {
            bail!("conformal.alpha must lie in (0, 1)");
        }
        Ok(())
    }

    /// Materializes the dataset for one seed and splits it. CSV inputs are
    /// standardized on the training rows of the split.
    pub fn load_split(&self, seed: u64, mode: SplitMode) -> Result<(Dataset, SplitSets)> {
        match &self.dataset {
            DatasetSource::Synth {
                task,
                n_rows,
                n_features,
                noise_profile,
            } => {
                let data = synth(*task, *n_rows, *n_features, *noise_profile, seed)?.dataset;
                let sets = split(&data, mode, seed)?;
                Ok((data, sets))
            }
            DatasetSource::Csv { path, target, task } => {
                let raw = load_csv(path, target, None)?;
                let all: Vec<usize> = (0..raw.n_rows()).collect();
                let sets = split(&preprocess(&raw, &all, *task)?, mode, seed)?;
                let data = preprocess(&raw, &sets.train, *task)?;
                Ok((data, sets))
            }
        }
    }
}
