//! Tabular ingestion, preprocessing, seeded splits and synthetic benchmarks.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TdsError};
use crate::{rng, sigmoid, Task};

/// Version tag written into dataset cache sidecars.
pub const CACHE_VERSION: u32 = 1;

const MISSING_MARKERS: [&str; 2] = ["", "NA"];
const MISSING_CATEGORY: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Raw category labels in code order; empty for continuous columns.
    #[serde(default)]
    pub category_codes: Vec<String>,
}

impl ColumnSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Continuous,
            category_codes: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, codes: Vec<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical,
            category_codes: codes,
        }
    }

    /// Label for an integer code; the reserved code past the end reads as `<unseen>`.
    pub fn label(&self, code: usize) -> &str {
        self.category_codes
            .get(code)
            .map(String::as_str)
            .unwrap_or("<unseen>")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawValues {
    Continuous(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl RawValues {
    pub fn kind(&self) -> ColumnKind {
        match self {
            RawValues::Continuous(_) => ColumnKind::Continuous,
            RawValues::Categorical(_) => ColumnKind::Categorical,
        }
    }

    fn len(&self) -> usize {
        match self {
            RawValues::Continuous(v) => v.len(),
            RawValues::Categorical(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub values: RawValues,
}

/// A parsed but not yet preprocessed table. Missing cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<RawColumn>,
    pub target_name: String,
    pub target: Vec<f64>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn column(&self, name: &str) -> Option<&RawColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Applies per-dataset column derivations in order.
    pub fn derive(&mut self, derivations: &[ColumnDerivation]) -> Result<()> {
        for d in derivations {
            d.apply(self)?;
        }
        Ok(())
    }
}

/// Optional column rewrite applied before preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnDerivation {
    /// Replaces a `YYYY-MM-DD[...]` timestamp column by `<col>_month` and
    /// `<col>_week` (ISO week) continuous columns. Unparseable cells become missing.
    TimestampToMonthWeek { column: String },
    /// Drops a column entirely.
    Drop { column: String },
}

impl ColumnDerivation {
    fn apply(&self, table: &mut RawTable) -> Result<()> {
        match self {
            ColumnDerivation::Drop { column } => {
                let pos = position(table, column)?;
                table.columns.remove(pos);
            }
            ColumnDerivation::TimestampToMonthWeek { column } => {
                let pos = position(table, column)?;
                let col = table.columns.remove(pos);
                let cells: Vec<Option<String>> = match col.values {
                    RawValues::Categorical(v) => v,
                    RawValues::Continuous(v) => {
                        v.into_iter().map(|x| x.map(|x| x.to_string())).collect()
                    }
                };
                let dates: Vec<Option<NaiveDate>> = cells
                    .iter()
                    .map(|c| {
                        c.as_deref()
                            .and_then(|s| s.get(..10))
                            .and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
                    })
                    .collect();
                let month = dates.iter().map(|d| d.map(|d| d.month() as f64)).collect();
                let week = dates
                    .iter()
                    .map(|d| d.map(|d| d.iso_week().week() as f64))
                    .collect();
                table.columns.insert(
                    pos,
                    RawColumn {
                        name: format!("{column}_week"),
                        values: RawValues::Continuous(week),
                    },
                );
                table.columns.insert(
                    pos,
                    RawColumn {
                        name: format!("{column}_month"),
                        values: RawValues::Continuous(month),
                    },
                );
            }
        }
        Ok(())
    }
}

fn position(table: &RawTable, column: &str) -> Result<usize> {
    table
        .columns
        .iter()
        .position(|c| c.name == column)
        .ok_or_else(|| TdsError::InvalidConfig(format!("derivation references unknown column `{column}`")))
}

fn is_missing(cell: &str) -> bool {
    MISSING_MARKERS.contains(&cell.trim())
}

/// Reads a comma-delimited file with a header row.
///
/// Column kinds are inferred by parseability unless `schema_hints` names the
/// column, in which case the hinted kind wins.
pub fn load_csv(
    path: impl AsRef<Path>,
    target_column: &str,
    schema_hints: Option<&[ColumnSpec]>,
) -> Result<RawTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| TdsError::io(path, e))?;
    parse_csv(&text, target_column, schema_hints)
}

/// Same as [`load_csv`] over in-memory text.
pub fn parse_csv(
    text: &str,
    target_column: &str,
    schema_hints: Option<&[ColumnSpec]>,
) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| TdsError::MissingTargetColumn(target_column.to_string()))?;

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(TdsError::RaggedRow {
                row: row + 1,
                found: record.len(),
                expected: headers.len(),
            });
        }
        for (j, field) in record.iter().enumerate() {
            cells[j].push(field.trim().to_string());
        }
    }
    if cells[target_idx].is_empty() {
        return Err(TdsError::EmptyTable);
    }

    let mut target = Vec::with_capacity(cells[target_idx].len());
    for (row, cell) in cells[target_idx].iter().enumerate() {
        let v: f64 = cell.parse().map_err(|_| {
            TdsError::InvalidConfig(format!(
                "target `{target_column}` row {} is not numeric: `{cell}`",
                row + 1
            ))
        })?;
        target.push(v);
    }

    let hint_for = |name: &str| {
        schema_hints.and_then(|h| h.iter().find(|c| c.name == name).map(|c| c.kind))
    };

    let mut columns = Vec::with_capacity(headers.len() - 1);
    for (j, name) in headers.iter().enumerate() {
        if j == target_idx {
            continue;
        }
        let raw = &cells[j];
        let numeric: Option<Vec<Option<f64>>> = raw
            .iter()
            .map(|c| {
                if is_missing(c) {
                    Some(None)
                } else {
                    c.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
                }
            })
            .collect();
        let kind = hint_for(name).unwrap_or(if numeric.is_some() {
            ColumnKind::Continuous
        } else {
            ColumnKind::Categorical
        });
        let values = match (kind, numeric) {
            (ColumnKind::Continuous, Some(v)) => RawValues::Continuous(v),
            (ColumnKind::Continuous, None) => {
                return Err(TdsError::InvalidConfig(format!(
                    "column `{name}` hinted continuous but holds non-numeric cells"
                )))
            }
            (ColumnKind::Categorical, _) => RawValues::Categorical(
                raw.iter()
                    .map(|c| (!is_missing(c)).then(|| c.clone()))
                    .collect(),
            ),
        };
        columns.push(RawColumn {
            name: name.clone(),
            values,
        });
    }

    Ok(RawTable {
        columns,
        target_name: target_column.to_string(),
        target,
    })
}

/// Preprocessed, fully numeric dataset. Features are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub n_rows: usize,
    pub n_features: usize,
    pub targets: Vec<f64>,
    pub schema: Vec<ColumnSpec>,
    pub task: Task,
    /// Per-column `(mean, stddev)` used for z-scoring; `(0, 1)` for categorical columns.
    pub standardization: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Copies the given rows into a new row-major matrix plus targets.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(indices.len() * self.n_features);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.targets[i]);
        }
        (x, y)
    }

    /// Maps a standardized value of column `j` back to raw units.
    pub fn destandardize(&self, j: usize, value: f64) -> f64 {
        let (mean, sd) = self.standardization[j];
        value * sd + mean
    }

    /// Writes `<stem>.data.csv` and `<stem>.schema.json` next to each other.
    pub fn save_cache(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| TdsError::io(dir, e))?;
        let data_path = dir.join(format!("{stem}.data.csv"));
        let mut w = csv::Writer::from_path(&data_path)?;
        let mut header: Vec<String> = self.schema.iter().map(|c| c.name.clone()).collect();
        header.push("__target".into());
        w.write_record(&header)?;
        for i in 0..self.n_rows {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{:?}", self.targets[i]));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| TdsError::io(&data_path, e))?;
        let sidecar = CacheSidecar {
            version: CACHE_VERSION,
            n_rows: self.n_rows,
            task: self.task,
            schema: self.schema.clone(),
            standardization: self.standardization.clone(),
        };
        let schema_path = dir.join(format!("{stem}.schema.json"));
        fs::write(&schema_path, serde_json::to_string_pretty(&sidecar)?)
            .map_err(|e| TdsError::io(&schema_path, e))
    }

    pub fn load_cache(dir: impl AsRef<Path>, stem: &str) -> Result<Dataset> {
        let dir = dir.as_ref();
        let schema_path = dir.join(format!("{stem}.schema.json"));
        let text = fs::read_to_string(&schema_path).map_err(|e| TdsError::io(&schema_path, e))?;
        let sidecar: CacheSidecar = serde_json::from_str(&text)?;
        if sidecar.version != CACHE_VERSION {
            return Err(TdsError::UnsupportedVersion(sidecar.version));
        }
        let data_path = dir.join(format!("{stem}.data.csv"));
        let mut r = csv::Reader::from_path(&data_path)?;
        let d = sidecar.schema.len();
        let mut features = Vec::with_capacity(sidecar.n_rows * d);
        let mut targets = Vec::with_capacity(sidecar.n_rows);
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != d + 1 {
                return Err(TdsError::DimensionMismatch {
                    expected: d + 1,
                    found: rec.len(),
                });
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| TdsError::InvalidConfig(format!("bad cache cell `{field}`")))?;
                if j == d {
                    targets.push(v);
                } else {
                    features.push(v);
                }
            }
        }
        Ok(Dataset {
            features,
            n_rows: targets.len(),
            n_features: d,
            targets,
            schema: sidecar.schema,
            task: sidecar.task,
            standardization: sidecar.standardization,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CacheSidecar {
    version: u32,
    n_rows: usize,
    task: Task,
    schema: Vec<ColumnSpec>,
    standardization: Vec<(f64, f64)>,
}

/// Imputes, encodes and standardizes a raw table using statistics from `fit_indices`.
pub fn preprocess(raw: &RawTable, fit_indices: &[usize], task: Task) -> Result<Dataset> {
    if fit_indices.is_empty() {
        return Err(TdsError::Empty("fit_indices"));
    }
    let n = raw.n_rows();
    if raw.columns.is_empty() {
        return Err(TdsError::InvalidConfig("table has no feature columns".into()));
    }
    if let Some(&bad) = fit_indices.iter().find(|&&i| i >= n) {
        return Err(TdsError::InvalidConfig(format!("fit index {bad} out of range")));
    }
    if task == Task::BinaryClassification && raw.target.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(TdsError::InvalidConfig(
            "classification targets must be 0 or 1".into(),
        ));
    }

    let d = raw.columns.len();
    let mut features = vec![0.0; n * d];
    let mut schema = Vec::with_capacity(d);
    let mut standardization = Vec::with_capacity(d);

    for (j, col) in raw.columns.iter().enumerate() {
        if col.values.len() != n {
            return Err(TdsError::LengthMismatch {
                left: col.values.len(),
                right: n,
            });
        }
        match &col.values {
            RawValues::Continuous(values) => {
                let observed: Vec<f64> = fit_indices.iter().filter_map(|&i| values[i]).collect();
                if observed.is_empty() {
                    return Err(TdsError::AllMissing(col.name.clone()));
                }
                let fill = observed.iter().sum::<f64>() / observed.len() as f64;
                let imputed: Vec<f64> = values.iter().map(|v| v.unwrap_or(fill)).collect();
                let mean = fit_indices.iter().map(|&i| imputed[i]).sum::<f64>()
                    / fit_indices.len() as f64;
                let var = fit_indices
                    .iter()
                    .map(|&i| (imputed[i] - mean).powi(2))
                    .sum::<f64>()
                    / fit_indices.len() as f64;
                let mut sd = var.sqrt();
                if !(sd > 1e-12 * mean.abs().max(1.0)) {
                    sd = 1.0;
                }
                for (i, v) in imputed.iter().enumerate() {
                    features[i * d + j] = (v - mean) / sd;
                }
                schema.push(ColumnSpec::continuous(&col.name));
                standardization.push((mean, sd));
            }
            RawValues::Categorical(values) => {
                let mut codes: HashMap<&str, usize> = HashMap::new();
                let mut labels: Vec<String> = Vec::new();
                for &i in fit_indices {
                    let label = values[i].as_deref().unwrap_or(MISSING_CATEGORY);
                    if !codes.contains_key(label) {
                        codes.insert(label, labels.len());
                        labels.push(label.to_string());
                    }
                }
                let unseen = labels.len();
                for (i, v) in values.iter().enumerate() {
                    let label = v.as_deref().unwrap_or(MISSING_CATEGORY);
                    features[i * d + j] = codes.get(label).copied().unwrap_or(unseen) as f64;
                }
                schema.push(ColumnSpec::categorical(&col.name, labels));
                standardization.push((0.0, 1.0));
            }
        }
    }

    Ok(Dataset {
        features,
        n_rows: n,
        n_features: d,
        targets: raw.target.clone(),
        schema,
        task,
        standardization,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// 60% train, 20% calibration, 20% test.
    Standard,
    /// 20% initially labeled, 60% pool, 10% calibration, 10% test.
    ActiveLearning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSets {
    /// Training rows; in active-learning mode this is the initially labeled set.
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
    pub al_pool: Option<Vec<usize>>,
    pub al_initial: Option<Vec<usize>>,
    pub seed: u64,
}

/// Largest-remainder allocation of `n` rows to the given fractions.
fn allocate(n: usize, fractions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Seeded shuffle-and-cut split.
pub fn split(data: &Dataset, mode: SplitMode, seed: u64) -> Result<SplitSets> {
    let n = data.n_rows;
    if n < 10 {
        return Err(TdsError::TooFewRows { needed: 10, found: n });
    }
    let fractions: &[f64] = match mode {
        SplitMode::Standard => &[0.6, 0.2, 0.2],
        SplitMode::ActiveLearning => &[0.2, 0.6, 0.1, 0.1],
    };
    let counts = allocate(n, fractions);
    if counts.iter().any(|&c| c == 0) {
        return Err(TdsError::TooFewRows { needed: 10, found: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, 0x5917));
    let mut parts = Vec::with_capacity(counts.len());
    let mut start = 0;
    for c in counts {
        parts.push(order[start..start + c].to_vec());
        start += c;
    }
    Ok(match mode {
        SplitMode::Standard => {
            let test = parts.pop().unwrap();
            let calibration = parts.pop().unwrap();
            let train = parts.pop().unwrap();
            SplitSets {
                train,
                calibration,
                test,
                al_pool: None,
                al_initial: None,
                seed,
            }
        }
        SplitMode::ActiveLearning => {
            let test = parts.pop().unwrap();
            let calibration = parts.pop().unwrap();
            let pool = parts.pop().unwrap();
            let initial = parts.pop().unwrap();
            SplitSets {
                train: initial.clone(),
                calibration,
                test,
                al_pool: Some(pool),
                al_initial: Some(initial),
                seed,
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseProfile {
    Homoscedastic,
    /// Elevated target noise (regression) or label flips (classification)
    /// inside `x0 > 0.25 && x1 > 0.25` in raw units.
    PlantedHardRegion,
}

/// Synthetic dataset with its ground-truth hard-region membership.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub hard_region: Vec<bool>,
}

const HARD_CORNER: f64 = 0.25;
const BASE_NOISE_SD: f64 = 0.3;
const HARD_NOISE_SD: f64 = 2.0;
const HARD_FLIP_PROB: f64 = 0.4;
const LOGIT_SCALE: f64 = 3.0;

fn signal(x: &[f64]) -> f64 {
    let at = |j: usize| x.get(j).copied().unwrap_or(0.0);
    let mut s = 1.5 * at(0) + (2.0 * at(1)).sin() + 0.8 * at(2) * at(3) + 0.5 * at(4) * at(4) - 0.5;
    for (j, v) in x.iter().enumerate().skip(5) {
        let w = if j % 2 == 0 { 0.2 } else { -0.2 };
        s += w * v;
    }
    s
}

/// Generates a seeded synthetic dataset with standard-normal features.
pub fn synth(
    task: Task,
    n_rows: usize,
    n_features: usize,
    noise_profile: NoiseProfile,
    seed: u64,
) -> Result<SyntheticData> {
    if n_rows < 10 {
        return Err(TdsError::TooFewRows { needed: 10, found: n_rows });
    }
    if n_features < 2 {
        return Err(TdsError::InvalidConfig("synthetic data needs at least 2 features".into()));
    }
    let mut rng = rng::stream(seed, 0x5e7d);
    let mut raw = vec![0.0; n_rows * n_features];
    for v in raw.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut targets = Vec::with_capacity(n_rows);
    let mut hard_region = Vec::with_capacity(n_rows);
    for i in 0..n_rows {
        let x = &raw[i * n_features..(i + 1) * n_features];
        let hard = noise_profile == NoiseProfile::PlantedHardRegion
            && x[0] > HARD_CORNER
            && x[1] > HARD_CORNER;
        hard_region.push(hard);
        let f = signal(x);
        let y = match task {
            Task::Regression => {
                let sd = if hard { HARD_NOISE_SD } else { BASE_NOISE_SD };
                f + sd * noise.sample(&mut rng)
            }
            Task::BinaryClassification => {
                let p = sigmoid(LOGIT_SCALE * f);
                let mut label = rng.random::<f64>() < p;
                if hard && rng.random::<f64>() < HARD_FLIP_PROB {
                    label = !label;
                }
                if label {
                    1.0
                } else {
                    0.0
                }
            }
        };
        targets.push(y);
    }

    let mut standardization = Vec::with_capacity(n_features);
    let mut features = raw;
    for j in 0..n_features {
        let mean = (0..n_rows).map(|i| features[i * n_features + j]).sum::<f64>() / n_rows as f64;
        let var = (0..n_rows)
            .map(|i| (features[i * n_features + j] - mean).powi(2))
            .sum::<f64>()
            / n_rows as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for i in 0..n_rows {
            let v = &mut features[i * n_features + j];
            *v = (*v - mean) / sd;
        }
        standardization.push((mean, sd));
    }
    let schema = (0..n_features)
        .map(|j| ColumnSpec::continuous(format!("x{j}")))
        .collect();
    Ok(SyntheticData {
        dataset: Dataset {
            features,
            n_rows,
            n_features,
            targets,
            schema,
            task,
            standardization,
        },
        hard_region,
    })
}
